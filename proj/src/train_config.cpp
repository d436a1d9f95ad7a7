#include "mres/train_config.hpp"

#include <fstream>
#include <sstream>

#include "mres/errors.hpp"

namespace mres {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig parse_run_config(const std::string& path, TrainMode mode) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);

  RunConfig cfg;
  cfg.train = TrainConfig::defaults(mode);

  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw SchemaError("expected key = value in config", line_no);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));

    auto as_int = [&] { return std::stoi(value); };
    auto as_double = [&] { return std::stod(value); };
    auto as_bool = [&] {
      if (value == "true" || value == "1") return true;
      if (value == "false" || value == "0") return false;
      throw SchemaError("expected boolean for " + key, line_no);
    };

    if (key == "model.image_size") cfg.model.image_size = as_int();
    else if (key == "model.patch_size") cfg.model.patch_size = as_int();
    else if (key == "model.embed_dim") cfg.model.embed_dim = as_int();
    else if (key == "model.num_heads") cfg.model.num_heads = as_int();
    else if (key == "model.visual_layers") cfg.model.visual_layers = as_int();
    else if (key == "model.text_layers") cfg.model.text_layers = as_int();
    else if (key == "model.vocab_size") cfg.model.vocab_size = as_int();
    else if (key == "model.max_text_len") cfg.model.max_text_len = as_int();
    else if (key == "model.n_low_group") cfg.model.n_low_group = as_int();
    else if (key == "model.n_high_group") cfg.model.n_high_group = as_int();
    else if (key == "model.decoder_layers_stage1") cfg.model.decoder_layers_stage1 = as_int();
    else if (key == "model.decoder_layers_stage2") cfg.model.decoder_layers_stage2 = as_int();
    else if (key == "model.mask_threshold") cfg.model.mask_threshold = as_double();
    else if (key == "model.use_low_group") cfg.model.use_low_group = as_bool();
    else if (key == "model.use_high_group") cfg.model.use_high_group = as_bool();
    else if (key == "train.learning_rate") cfg.train.learning_rate = as_double();
    else if (key == "train.weight_decay") cfg.train.weight_decay = as_double();
    else if (key == "train.warmup_epochs") cfg.train.warmup_epochs = as_int();
    else if (key == "train.epochs") cfg.train.epochs = as_int();
    else if (key == "train.batch_size") cfg.train.batch_size = as_int();
    else if (key == "train.seed") cfg.train.seed = static_cast<std::uint64_t>(std::stoull(value));
    else if (key == "train.loss") cfg.train.loss = loss_mode_from_string(value);
    else if (key == "train.full_res_supervision") cfg.train.full_res_supervision = as_bool();
    else if (key == "train.freeze_groups") {
      std::istringstream groups(value);
      std::string g;
      while (std::getline(groups, g, ',')) {
        g = trim(g);
        if (!g.empty()) cfg.train.freeze_groups.push_back(g);
      }
    } else throw SchemaError("unknown config key '" + key + "'", line_no);
  }
  return cfg;
}

}  // namespace mres
