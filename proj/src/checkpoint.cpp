#include "mres/checkpoint.hpp"

namespace mres {

nlohmann::json config_to_json(const ModelConfig& c) {
  return nlohmann::json{{"image_size", c.image_size},
                        {"patch_size", c.patch_size},
                        {"embed_dim", c.embed_dim},
                        {"num_heads", c.num_heads},
                        {"visual_layers", c.visual_layers},
                        {"text_layers", c.text_layers},
                        {"vocab_size", c.vocab_size},
                        {"max_text_len", c.max_text_len},
                        {"n_low_group", c.n_low_group},
                        {"n_high_group", c.n_high_group},
                        {"decoder_layers_stage1", c.decoder_layers_stage1},
                        {"decoder_layers_stage2", c.decoder_layers_stage2},
                        {"mask_threshold", c.mask_threshold},
                        {"use_low_group", c.use_low_group},
                        {"use_high_group", c.use_high_group}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.patch_size = j.at("patch_size").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.visual_layers = j.at("visual_layers").get<int>();
  c.text_layers = j.at("text_layers").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_text_len = j.at("max_text_len").get<int>();
  c.n_low_group = j.at("n_low_group").get<int>();
  c.n_high_group = j.at("n_high_group").get<int>();
  c.decoder_layers_stage1 = j.at("decoder_layers_stage1").get<int>();
  c.decoder_layers_stage2 = j.at("decoder_layers_stage2").get<int>();
  c.mask_threshold = j.at("mask_threshold").get<double>();
  c.use_low_group = j.at("use_low_group").get<bool>();
  c.use_high_group = j.at("use_high_group").get<bool>();
  return c;
}

TensorContainer load_tensor_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw IoError(path + " is not a checkpoint container");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError(path + ": truncated checkpoint header");

  TensorContainer out;
  out.header = nlohmann::json::parse(header);
  out.payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return out;
}

}  // namespace mres
