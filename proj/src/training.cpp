#include "mres/training.hpp"

namespace mres {

std::string to_string(LossMode m) { return m == LossMode::bce ? "bce" : "bce_plus_dice"; }

LossMode loss_mode_from_string(const std::string& s) {
  if (s == "bce") return LossMode::bce;
  if (s == "bce_plus_dice") return LossMode::bce_plus_dice;
  throw ConfigMismatch("unknown loss mode '" + s + "'");
}

std::string to_string(TrainMode m) { return m == TrainMode::pretrain ? "pretrain" : "finetune"; }

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "pretrain") return TrainMode::pretrain;
  if (s == "finetune") return TrainMode::finetune;
  throw ConfigMismatch("unknown train mode '" + s + "'");
}

}  // namespace mres
