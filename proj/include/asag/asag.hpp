#pragma once

// Umbrella header: everything except the CLI driver.
#include "asag/alerting.hpp"
#include "asag/benchmark.hpp"
#include "asag/common.hpp"
#include "asag/config.hpp"
#include "asag/csv.hpp"
#include "asag/graders.hpp"
#include "asag/manifest.hpp"
#include "asag/metrics.hpp"
#include "asag/points.hpp"
#include "asag/record_store.hpp"
#include "asag/records.hpp"
#include "asag/remote_grader.hpp"
#include "asag/reports.hpp"
#include "asag/service.hpp"
#include "asag/splitter.hpp"
