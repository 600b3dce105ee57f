#pragma once

#include <string>

#include "tokshift/model.hpp"
#include "tokshift/synthetic.hpp"
#include "tokshift/train.hpp"

namespace tokshift {

// Flat key=value run configuration. Unknown keys are rejected; every value is
// validated against the invariants of the target type. '#' starts a comment.
// Fractions accept both decimals ("0.25") and rationals ("1/4"). See README
// for the full key list.
struct RunConfig {
    ModelConfig model;
    SyntheticTask task;
    TrainSchedule schedule;
    SamplingSpec sampling;
    uint64_t seed = 42;
    std::string out_dir = "out";
};

RunConfig parse_run_config_text(const std::string& text);
RunConfig parse_run_config(const std::string& path);

}  // namespace tokshift
