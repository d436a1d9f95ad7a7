#ifndef MRES_TRAIN_CONFIG_HPP
#define MRES_TRAIN_CONFIG_HPP

#include <string>

#include "mres/training.hpp"

namespace mres {

/// Parsed plain-text key-value config: `train.*` keys override the mode
/// defaults, `model.*` keys override the architecture defaults.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

/// Parses `key = value` lines; '#' starts a comment. Unknown keys are an
/// error so typos fail loudly.
RunConfig parse_run_config(const std::string& path, TrainMode mode);

}  // namespace mres

#endif  // MRES_TRAIN_CONFIG_HPP
