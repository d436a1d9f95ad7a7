#ifndef MRES_CHECKPOINT_HPP
#define MRES_CHECKPOINT_HPP

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "mres/model.hpp"
#include "mres/training.hpp"

namespace mres {

// Self-describing container: magic, little-endian u64 header length, JSON
// header (config echo + tensor table), raw row-major payload.
inline constexpr char kCheckpointMagic[8] = {'M', 'R', 'E', 'S', 'C', 'K', 'P', '1'};

nlohmann::json config_to_json(const ModelConfig& c);
ModelConfig config_from_json(const nlohmann::json& j);

struct CheckpointMeta {
  long step = 0;
  int epoch = 0;
  std::vector<std::string> vocab_words;
};

namespace detail {

template <typename S>
const char* dtype_name() {
  return sizeof(S) == 4 ? "f32" : "f64";
}

template <typename S>
void append_tensor_payload(std::string& out, const Mat<S>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const S v = m(r, c);
      out.append(reinterpret_cast<const char*>(&v), sizeof(S));
    }
}

template <typename S>
Mat<S> read_tensor_payload(const std::string& data, std::size_t offset, int rows, int cols,
                           const std::string& dtype) {
  Mat<S> m(rows, cols);
  auto read_as = [&](auto tag) {
    using T = decltype(tag);
    const char* p = data.data() + offset;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        T v;
        std::memcpy(&v, p, sizeof(T));
        p += sizeof(T);
        m(r, c) = static_cast<S>(v);
      }
  };
  if (dtype == "f32")
    read_as(float{});
  else if (dtype == "f64")
    read_as(double{});
  else
    throw IoError("unknown tensor dtype " + dtype);
  return m;
}

template <typename S>
std::size_t dtype_size(const std::string& dtype) {
  return dtype == "f32" ? 4 : 8;
}

}  // namespace detail

/// Writes named tensors with a JSON header. `extra` is merged into the header.
template <typename S>
void save_tensor_container(const std::string& path,
                           const std::vector<std::pair<std::string, const Mat<S>*>>& tensors,
                           nlohmann::json extra = nlohmann::json::object()) {
  nlohmann::json table = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, m] : tensors) {
    table.push_back({{"name", name},
                     {"rows", m->rows()},
                     {"cols", m->cols()},
                     {"dtype", detail::dtype_name<S>()},
                     {"offset", payload.size()}});
    detail::append_tensor_payload(payload, *m);
  }
  extra["tensors"] = std::move(table);
  const std::string header = extra.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(kCheckpointMagic, 8);
  const std::uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("short write to " + path);
}

struct TensorContainer {
  nlohmann::json header;
  std::string payload;

  bool has(const std::string& name) const {
    for (const auto& t : header.at("tensors"))
      if (t.at("name") == name) return true;
    return false;
  }

  template <typename S>
  Mat<S> tensor(const std::string& name) const {
    for (const auto& t : header.at("tensors")) {
      if (t.at("name") != name) continue;
      return detail::read_tensor_payload<S>(payload, t.at("offset").get<std::size_t>(),
                                            t.at("rows").get<int>(), t.at("cols").get<int>(),
                                            t.at("dtype").get<std::string>());
    }
    throw IoError("tensor '" + name + "' not present in container");
  }
};

TensorContainer load_tensor_container(const std::string& path);

template <typename S>
void save_checkpoint(const std::string& path, const UniRESModel<S>& model,
                     const CheckpointMeta& meta = {}, AdamW<S>* opt = nullptr) {
  std::vector<std::pair<std::string, const Mat<S>*>> tensors;
  for (const auto& p : model.params) tensors.emplace_back(p.name, &p.value);
  nlohmann::json extra;
  extra["config"] = config_to_json(model.config);
  extra["meta"] = {{"step", meta.step}, {"epoch", meta.epoch}, {"vocab", meta.vocab_words}};
  if (opt) {
    extra["meta"]["opt_steps"] = opt->step_count();
    std::size_t i = 0;
    for (const auto& p : model.params) {
      tensors.emplace_back("opt.m." + p.name, &opt->moment1()[i]);
      tensors.emplace_back("opt.v." + p.name, &opt->moment2()[i]);
      ++i;
    }
  }
  save_tensor_container<S>(path, tensors, std::move(extra));
}

/// Loads parameter values into an existing model; the stored config must
/// match exactly.
template <typename S>
CheckpointMeta load_checkpoint_into(UniRESModel<S>& model, const std::string& path,
                                    AdamW<S>* opt = nullptr) {
  const auto container = load_tensor_container(path);
  const ModelConfig stored = config_from_json(container.header.at("config"));
  if (!(stored == model.config))
    throw ConfigMismatch("checkpoint config does not match the model config");
  for (auto& p : model.params) p.value = container.tensor<S>(p.name);

  CheckpointMeta meta;
  const auto& m = container.header.at("meta");
  meta.step = m.value("step", 0L);
  meta.epoch = m.value("epoch", 0);
  meta.vocab_words = m.value("vocab", std::vector<std::string>{});
  if (opt && m.contains("opt_steps")) {
    opt->moment1().clear();
    opt->moment2().clear();
    for (const auto& p : model.params) {
      opt->moment1().push_back(container.tensor<S>("opt.m." + p.name));
      opt->moment2().push_back(container.tensor<S>("opt.v." + p.name));
    }
    opt->set_step_count(m.at("opt_steps").get<long>());
  }
  return meta;
}

template <typename S>
UniRESModel<S> load_checkpoint(const std::string& path, CheckpointMeta* meta_out = nullptr,
                               AdamW<S>* opt = nullptr) {
  const auto container = load_tensor_container(path);
  const ModelConfig config = config_from_json(container.header.at("config"));
  auto model = init_model<S>(config, 0);
  auto meta = load_checkpoint_into(model, path, opt);
  if (meta_out) *meta_out = meta;
  return model;
}

/// Copies externally named dual-encoder weights into the model through a
/// JSON manifest {"map": {"external.name": "internal.name"}}. Shapes must
/// match; unmapped parameters keep their current values. Returns how many
/// tensors were imported.
template <typename S>
int import_weights(UniRESModel<S>& model, const std::string& container_path,
                   const std::string& manifest_path) {
  const auto container = load_tensor_container(container_path);
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest " + manifest_path);
  nlohmann::json manifest = nlohmann::json::parse(in);
  int imported = 0;
  for (const auto& [external, internal] : manifest.at("map").items()) {
    const std::string internal_name = internal.template get<std::string>();
    auto* p = model.params.find(internal_name);
    if (!p) throw ConfigMismatch("manifest maps to unknown parameter '" + internal_name + "'");
    Mat<S> value = container.tensor<S>(external);
    if (value.rows() != p->value.rows() || value.cols() != p->value.cols())
      throw ShapeMismatch("imported tensor '" + external + "' has the wrong shape");
    p->value = std::move(value);
    ++imported;
  }
  return imported;
}

}  // namespace mres

#endif  // MRES_CHECKPOINT_HPP
