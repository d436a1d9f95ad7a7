#ifndef MRES_MODEL_HPP
#define MRES_MODEL_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <random>
#include <string>
#include <vector>

#include "mres/autodiff.hpp"
#include "mres/errors.hpp"
#include "mres/mask.hpp"
#include "mres/tokenizer.hpp"

namespace mres {

template <typename Scalar>
using Mat = ad::Mat<Scalar>;

/// Architecture hyperparameters. Defaults follow the reference recipe: 64/8
/// group tokens, 0.35 mask threshold, 17-token text window.
struct ModelConfig {
  int image_size = 224;
  int patch_size = 16;
  int embed_dim = 512;
  int num_heads = 16;  // embed_dim / 32
  int visual_layers = 12;  // even; group tokens switch banks at the midpoint
  int text_layers = 12;
  int vocab_size = 49408;
  int max_text_len = kMaxTextLenDefault;
  int n_low_group = 64;
  int n_high_group = 8;
  int decoder_layers_stage1 = 2;
  int decoder_layers_stage2 = 1;
  double mask_threshold = 0.35;
  bool use_low_group = true;   // ablation switches
  bool use_high_group = true;

  int patches_per_side() const { return image_size / patch_size; }
  int num_patches() const { return patches_per_side() * patches_per_side(); }
  int low_tokens() const { return use_low_group ? n_low_group : 0; }
  int high_tokens() const { return use_high_group ? n_high_group : 0; }
  /// Sequence length over the first half of the visual encoder.
  int first_half_seq() const { return num_patches() + low_tokens(); }
  /// Sequence length over the second half, after the high bank is appended.
  int second_half_seq() const { return first_half_seq() + high_tokens(); }
  bool grouping_enabled() const { return use_low_group || use_high_group; }

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void ModelConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
    throw ConfigMismatch("image_size must be a positive multiple of patch_size");
  if (visual_layers <= 0 || visual_layers % 2 != 0)
    throw ConfigMismatch("visual_layers must be positive and even");
  if (text_layers <= 0) throw ConfigMismatch("text_layers must be positive");
  if (embed_dim <= 0 || num_heads <= 0 || embed_dim % num_heads != 0)
    throw ConfigMismatch("embed_dim must be a positive multiple of num_heads");
  if (vocab_size < 4) throw ConfigMismatch("vocab_size must cover the special tokens");
  if (max_text_len < 3) throw ConfigMismatch("max_text_len must be at least 3");
  if (use_low_group && n_low_group <= 0) throw ConfigMismatch("n_low_group must be positive");
  if (use_high_group && n_high_group <= 0) throw ConfigMismatch("n_high_group must be positive");
  if (use_low_group && use_high_group && n_low_group <= n_high_group)
    throw ConfigMismatch("the low-level bank must be larger than the high-level bank");
  if (decoder_layers_stage1 <= 0) throw ConfigMismatch("decoder_layers_stage1 must be positive");
  if (grouping_enabled() && decoder_layers_stage2 <= 0)
    throw ConfigMismatch("decoder_layers_stage2 must be positive while grouping is enabled");
  if (mask_threshold <= 0.0 || mask_threshold >= 1.0)
    throw ConfigMismatch("mask_threshold must lie in (0,1)");
}

/// Exercises every code path at CI-friendly size.
inline ModelConfig tiny_config(int vocab_size = 64) {
  ModelConfig c;
  c.image_size = 32;
  c.patch_size = 8;
  c.embed_dim = 16;
  c.num_heads = 2;
  c.visual_layers = 4;  // 2 + 2
  c.text_layers = 2;
  c.vocab_size = vocab_size;
  c.max_text_len = kMaxTextLenDefault;
  c.n_low_group = 4;
  c.n_high_group = 2;
  c.decoder_layers_stage1 = 1;
  c.decoder_layers_stage2 = 1;
  return c;
}

template <typename Scalar>
struct Parameter {
  std::string name;
  std::string group;
  Mat<Scalar> value;
  Mat<Scalar> grad;
};

template <typename Scalar>
class ParamSet {
 public:
  Parameter<Scalar>& add(std::string name, std::string group, int rows, int cols) {
    params_.push_back(Parameter<Scalar>{std::move(name), std::move(group),
                                        Mat<Scalar>::Zero(rows, cols),
                                        Mat<Scalar>::Zero(rows, cols)});
    return params_.back();
  }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) p.grad.setZero();
  }

  std::vector<std::string> group_names() const {
    std::vector<std::string> names;
    for (const auto& p : params_)
      if (std::find(names.begin(), names.end(), p.group) == names.end()) names.push_back(p.group);
    return names;
  }

  Parameter<Scalar>* find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }
  Parameter<Scalar>& at(std::size_t i) { return params_[i]; }
  const Parameter<Scalar>& at(std::size_t i) const { return params_[i]; }

 private:
  std::deque<Parameter<Scalar>> params_;  // deque keeps parameter addresses stable
};

template <typename Scalar>
struct AttentionParams {
  Parameter<Scalar>*wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
};

template <typename Scalar>
struct BlockParams {
  Parameter<Scalar>*ln1_g, *ln1_b;
  AttentionParams<Scalar> attn;
  Parameter<Scalar>*ln2_g, *ln2_b;
  Parameter<Scalar>*fc1_w, *fc1_b, *fc2_w, *fc2_b;
};

template <typename Scalar>
struct LrfParams {
  Parameter<Scalar>*wq, *bq, *wk, *bk, *wv, *bv;
};

template <typename Scalar>
struct UniRESModel {
  ModelConfig config;
  ParamSet<Scalar> params;

  Parameter<Scalar>*patch_w = nullptr, *patch_b = nullptr;
  Parameter<Scalar>* visual_pos = nullptr;
  std::vector<BlockParams<Scalar>> visual_blocks;
  Parameter<Scalar>*visual_ln_g = nullptr, *visual_ln_b = nullptr;
  Parameter<Scalar>* low_bank = nullptr;
  Parameter<Scalar>* high_bank = nullptr;
  Parameter<Scalar>* token_emb = nullptr;
  Parameter<Scalar>* text_pos = nullptr;
  std::vector<BlockParams<Scalar>> text_blocks;
  Parameter<Scalar>*text_ln_g = nullptr, *text_ln_b = nullptr;
  LrfParams<Scalar> lrf_low{}, lrf_high{};
  std::vector<BlockParams<Scalar>> dec1_blocks;
  std::vector<BlockParams<Scalar>> dec2_blocks;
  Parameter<Scalar>*head_ln_g = nullptr, *head_ln_b = nullptr;
  Parameter<Scalar>*head_w = nullptr, *head_b = nullptr;
};

namespace detail {

template <typename Scalar>
void fill_normal(Mat<Scalar>& m, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = static_cast<Scalar>(dist(rng));
}

template <typename Scalar>
BlockParams<Scalar> add_block(ParamSet<Scalar>& ps, const std::string& prefix,
                              const std::string& group, int d, std::mt19937_64& rng) {
  const int hidden = 4 * d;
  const double w_std = 0.02;
  BlockParams<Scalar> b;
  b.ln1_g = &ps.add(prefix + ".ln1.g", group, 1, d);
  b.ln1_g->value.setOnes();
  b.ln1_b = &ps.add(prefix + ".ln1.b", group, 1, d);
  b.attn.wq = &ps.add(prefix + ".attn.wq", group, d, d);
  b.attn.bq = &ps.add(prefix + ".attn.bq", group, 1, d);
  b.attn.wk = &ps.add(prefix + ".attn.wk", group, d, d);
  b.attn.bk = &ps.add(prefix + ".attn.bk", group, 1, d);
  b.attn.wv = &ps.add(prefix + ".attn.wv", group, d, d);
  b.attn.bv = &ps.add(prefix + ".attn.bv", group, 1, d);
  b.attn.wo = &ps.add(prefix + ".attn.wo", group, d, d);
  b.attn.bo = &ps.add(prefix + ".attn.bo", group, 1, d);
  b.ln2_g = &ps.add(prefix + ".ln2.g", group, 1, d);
  b.ln2_g->value.setOnes();
  b.ln2_b = &ps.add(prefix + ".ln2.b", group, 1, d);
  b.fc1_w = &ps.add(prefix + ".mlp.fc1.w", group, d, hidden);
  b.fc1_b = &ps.add(prefix + ".mlp.fc1.b", group, 1, hidden);
  b.fc2_w = &ps.add(prefix + ".mlp.fc2.w", group, hidden, d);
  b.fc2_b = &ps.add(prefix + ".mlp.fc2.b", group, 1, d);
  for (auto* w : {b.attn.wq, b.attn.wk, b.attn.wv, b.attn.wo, b.fc1_w, b.fc2_w})
    fill_normal(w->value, rng, w_std);
  return b;
}

template <typename Scalar>
LrfParams<Scalar> add_lrf(ParamSet<Scalar>& ps, const std::string& prefix,
                          const std::string& group, int d, std::mt19937_64& rng) {
  LrfParams<Scalar> l;
  l.wq = &ps.add(prefix + ".wq", group, d, d);
  l.bq = &ps.add(prefix + ".bq", group, 1, d);
  l.wk = &ps.add(prefix + ".wk", group, d, d);
  l.bk = &ps.add(prefix + ".bk", group, 1, d);
  l.wv = &ps.add(prefix + ".wv", group, d, d);
  l.bv = &ps.add(prefix + ".bv", group, 1, d);
  for (auto* w : {l.wq, l.wk, l.wv}) fill_normal(w->value, rng, 0.02);
  return l;
}

}  // namespace detail

template <typename Scalar>
UniRESModel<Scalar> init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  UniRESModel<Scalar> m;
  m.config = config;
  std::mt19937_64 rng(seed);
  auto& ps = m.params;
  const int d = config.embed_dim;
  const int patch_dim = config.patch_size * config.patch_size;

  m.patch_w = &ps.add("visual.patch.w", "patch_embed", patch_dim, d);
  detail::fill_normal(m.patch_w->value, rng, 0.02);
  m.patch_b = &ps.add("visual.patch.b", "patch_embed", 1, d);
  m.visual_pos = &ps.add("visual.pos", "visual_pos", config.num_patches(), d);
  detail::fill_normal(m.visual_pos->value, rng, 0.01);
  for (int i = 0; i < config.visual_layers; ++i)
    m.visual_blocks.push_back(
        detail::add_block(ps, "visual.block" + std::to_string(i), "visual_blocks", d, rng));
  m.visual_ln_g = &ps.add("visual.ln_post.g", "visual_ln", 1, d);
  m.visual_ln_g->value.setOnes();
  m.visual_ln_b = &ps.add("visual.ln_post.b", "visual_ln", 1, d);

  if (config.use_low_group) {
    m.low_bank = &ps.add("group.low", "low_bank", config.n_low_group, d);
    detail::fill_normal(m.low_bank->value, rng, 0.02);
  }
  if (config.use_high_group) {
    m.high_bank = &ps.add("group.high", "high_bank", config.n_high_group, d);
    detail::fill_normal(m.high_bank->value, rng, 0.02);
  }

  m.token_emb = &ps.add("text.token_emb", "text_embed", config.vocab_size, d);
  detail::fill_normal(m.token_emb->value, rng, 0.02);
  m.text_pos = &ps.add("text.pos", "text_pos", config.max_text_len, d);
  detail::fill_normal(m.text_pos->value, rng, 0.01);
  for (int i = 0; i < config.text_layers; ++i)
    m.text_blocks.push_back(
        detail::add_block(ps, "text.block" + std::to_string(i), "text_blocks", d, rng));
  m.text_ln_g = &ps.add("text.ln_final.g", "text_ln", 1, d);
  m.text_ln_g->value.setOnes();
  m.text_ln_b = &ps.add("text.ln_final.b", "text_ln", 1, d);

  if (config.use_low_group) m.lrf_low = detail::add_lrf(ps, "lrf.low", "lrf_low", d, rng);
  if (config.use_high_group) m.lrf_high = detail::add_lrf(ps, "lrf.high", "lrf_high", d, rng);

  for (int i = 0; i < config.decoder_layers_stage1; ++i)
    m.dec1_blocks.push_back(
        detail::add_block(ps, "decoder.stage1.block" + std::to_string(i), "decoder_stage1", d, rng));
  if (config.grouping_enabled())
    for (int i = 0; i < config.decoder_layers_stage2; ++i)
      m.dec2_blocks.push_back(detail::add_block(ps, "decoder.stage2.block" + std::to_string(i),
                                                "decoder_stage2", d, rng));

  m.head_ln_g = &ps.add("head.ln.g", "mask_head", 1, d);
  m.head_ln_g->value.setOnes();
  m.head_ln_b = &ps.add("head.ln.b", "mask_head", 1, d);
  m.head_w = &ps.add("head.w", "mask_head", d, 1);
  detail::fill_normal(m.head_w->value, rng, 0.02);
  m.head_b = &ps.add("head.b", "mask_head", 1, 1);
  return m;
}

/// Trainable-scalar count as a pure function of the config. The per-block
/// tally is 12 d^2 + 13 d (attention, two layer norms and a 4x MLP).
inline std::int64_t param_count(const ModelConfig& config) {
  config.validate();
  const std::int64_t d = config.embed_dim;
  const std::int64_t block = 12 * d * d + 13 * d;
  const std::int64_t lrf = 3 * d * d + 3 * d;
  std::int64_t n = 0;
  n += std::int64_t{config.patch_size} * config.patch_size * d + d;  // patch embedding
  n += std::int64_t{config.num_patches()} * d;                       // visual positions
  n += config.visual_layers * block + 2 * d;                         // blocks + ln_post
  if (config.use_low_group) n += std::int64_t{config.n_low_group} * d + lrf;
  if (config.use_high_group) n += std::int64_t{config.n_high_group} * d + lrf;
  n += std::int64_t{config.vocab_size} * d + std::int64_t{config.max_text_len} * d;
  n += config.text_layers * block + 2 * d;
  n += config.decoder_layers_stage1 * block;
  if (config.grouping_enabled()) n += config.decoder_layers_stage2 * block;
  n += 2 * d + d + 1;  // head norm + projection
  return n;
}

// ---- forward passes ---------------------------------------------------------

template <typename Scalar>
struct VisualEncodeOut {
  ad::Var<Scalar> patch_features;
  ad::Var<Scalar> low_group_out;   // invalid when the bank is disabled
  ad::Var<Scalar> high_group_out;
};

template <typename Scalar>
struct TextEncodeOut {
  ad::Var<Scalar> token_features;    // max_text_len x d, pad rows zeroed
  ad::Var<Scalar> sentence_feature;  // 1 x d, taken at the EOS position
};

template <typename Scalar>
struct LrfOut {
  ad::Var<Scalar> selected_regions;  // (n_low + n_high) x d
  Mat<Scalar> low_attention;         // 1 x n_low softmax row
  Mat<Scalar> high_attention;
};

/// Diagnostic record of one forward pass (plain values, detached from the tape).
template <typename Scalar>
struct ForwardTrace {
  Mat<Scalar> patch_features;
  Mat<Scalar> low_group_out;
  Mat<Scalar> high_group_out;
  Mat<Scalar> text_features;
  Mat<Scalar> sentence_feature;
  Mat<Scalar> selected_regions;
  Mat<Scalar> lrf_low_attention;
  Mat<Scalar> lrf_high_attention;
  Mat<Scalar> stage1_features;
  Mat<Scalar> stage2_features;
  Mat<Scalar> mask_logits;  // patch-resolution confidence grid
  int first_half_seq = 0;
  int second_half_seq = 0;
};

namespace detail {

template <typename S>
ad::Var<S> param_var(ad::Tape<S>& tape, Parameter<S>* p) {
  return tape.leaf(p->value, &p->grad);
}

/// Multi-head self-attention over x (pre-norm), optional additive key mask.
template <typename S>
ad::Var<S> self_attention(ad::Tape<S>& tape, const AttentionParams<S>& p, ad::Var<S> x,
                          int num_heads, const Eigen::Matrix<S, 1, Eigen::Dynamic>* key_mask) {
  const int d = static_cast<int>(x.value().cols());
  const int dh = d / num_heads;
  auto q = ad::add_rowvec(ad::matmul(x, param_var(tape, p.wq)), param_var(tape, p.bq));
  auto k = ad::add_rowvec(ad::matmul(x, param_var(tape, p.wk)), param_var(tape, p.bk));
  auto v = ad::add_rowvec(ad::matmul(x, param_var(tape, p.wv)), param_var(tape, p.bv));
  std::vector<ad::Var<S>> heads;
  for (int h = 0; h < num_heads; ++h) {
    auto qh = ad::cols(q, h * dh, dh);
    auto kh = ad::cols(k, h * dh, dh);
    auto vh = ad::cols(v, h * dh, dh);
    auto logits = ad::scale(ad::matmul_nt(qh, kh), S(1) / S(std::sqrt(double(dh))));
    auto attn = ad::softmax_rows(logits, key_mask);
    heads.push_back(ad::matmul(attn, vh));
  }
  auto merged = ad::concat_cols(heads);
  return ad::add_rowvec(ad::matmul(merged, param_var(tape, p.wo)), param_var(tape, p.bo));
}

/// Cross-attention: queries from x, keys/values from a context sequence.
template <typename S>
ad::Var<S> cross_attention(ad::Tape<S>& tape, const AttentionParams<S>& p, ad::Var<S> x,
                           ad::Var<S> context, int num_heads,
                           const Eigen::Matrix<S, 1, Eigen::Dynamic>* key_mask) {
  const int d = static_cast<int>(x.value().cols());
  const int dh = d / num_heads;
  auto q = ad::add_rowvec(ad::matmul(x, param_var(tape, p.wq)), param_var(tape, p.bq));
  auto k = ad::add_rowvec(ad::matmul(context, param_var(tape, p.wk)), param_var(tape, p.bk));
  auto v = ad::add_rowvec(ad::matmul(context, param_var(tape, p.wv)), param_var(tape, p.bv));
  std::vector<ad::Var<S>> heads;
  for (int h = 0; h < num_heads; ++h) {
    auto qh = ad::cols(q, h * dh, dh);
    auto kh = ad::cols(k, h * dh, dh);
    auto vh = ad::cols(v, h * dh, dh);
    auto logits = ad::scale(ad::matmul_nt(qh, kh), S(1) / S(std::sqrt(double(dh))));
    auto attn = ad::softmax_rows(logits, key_mask);
    heads.push_back(ad::matmul(attn, vh));
  }
  auto merged = ad::concat_cols(heads);
  return ad::add_rowvec(ad::matmul(merged, param_var(tape, p.wo)), param_var(tape, p.bo));
}

template <typename S>
ad::Var<S> mlp(ad::Tape<S>& tape, const BlockParams<S>& b, ad::Var<S> x) {
  auto h = ad::gelu(ad::add_rowvec(ad::matmul(x, param_var(tape, b.fc1_w)), param_var(tape, b.fc1_b)));
  return ad::add_rowvec(ad::matmul(h, param_var(tape, b.fc2_w)), param_var(tape, b.fc2_b));
}

/// Pre-norm transformer block: x += Attn(LN(x)); x += MLP(LN(x)).
template <typename S>
ad::Var<S> encoder_block(ad::Tape<S>& tape, const BlockParams<S>& b, ad::Var<S> x, int num_heads,
                         const Eigen::Matrix<S, 1, Eigen::Dynamic>* key_mask = nullptr) {
  auto normed = ad::layer_norm_rows(x, param_var(tape, b.ln1_g), param_var(tape, b.ln1_b));
  x = ad::add(x, self_attention(tape, b.attn, normed, num_heads, key_mask));
  auto normed2 = ad::layer_norm_rows(x, param_var(tape, b.ln2_g), param_var(tape, b.ln2_b));
  return ad::add(x, mlp(tape, b, normed2));
}

/// Pre-norm cross block: x += CrossAttn(LN(x), context); x += MLP(LN(x)).
template <typename S>
ad::Var<S> decoder_block(ad::Tape<S>& tape, const BlockParams<S>& b, ad::Var<S> x,
                         ad::Var<S> context, int num_heads,
                         const Eigen::Matrix<S, 1, Eigen::Dynamic>* key_mask = nullptr) {
  auto normed = ad::layer_norm_rows(x, param_var(tape, b.ln1_g), param_var(tape, b.ln1_b));
  x = ad::add(x, cross_attention(tape, b.attn, normed, context, num_heads, key_mask));
  auto normed2 = ad::layer_norm_rows(x, param_var(tape, b.ln2_g), param_var(tape, b.ln2_b));
  return ad::add(x, mlp(tape, b, normed2));
}

}  // namespace detail

/// Flattens an image into one row per patch (row-major patch order).
template <typename Scalar>
Mat<Scalar> patchify(const Mat<Scalar>& image, int patch_size) {
  const int gh = static_cast<int>(image.rows()) / patch_size;
  const int gw = static_cast<int>(image.cols()) / patch_size;
  Mat<Scalar> out(gh * gw, patch_size * patch_size);
  for (int r = 0; r < gh; ++r)
    for (int c = 0; c < gw; ++c) {
      int k = 0;
      for (int y = 0; y < patch_size; ++y)
        for (int x = 0; x < patch_size; ++x)
          out(r * gw + c, k++) = image(r * patch_size + y, c * patch_size + x);
    }
  return out;
}

/// Runs the visual encoder. The low-level bank rides the whole backbone; the
/// high-level bank is appended at the midpoint and rides the second half.
template <typename Scalar>
VisualEncodeOut<Scalar> visual_encode(ad::Tape<Scalar>& tape, UniRESModel<Scalar>& m,
                                      const Mat<Scalar>& image) {
  const auto& cfg = m.config;
  if (image.rows() != cfg.image_size || image.cols() != cfg.image_size)
    throw ShapeMismatch("visual_encode: image must be " + std::to_string(cfg.image_size) + "x" +
                        std::to_string(cfg.image_size) + ", got " + std::to_string(image.cols()) +
                        "x" + std::to_string(image.rows()));
  const int P = cfg.num_patches();

  auto patches = tape.constant(patchify(image, cfg.patch_size));
  auto tokens = ad::add(ad::add_rowvec(ad::matmul(patches, detail::param_var(tape, m.patch_w)),
                                       detail::param_var(tape, m.patch_b)),
                        detail::param_var(tape, m.visual_pos));

  auto x = tokens;
  if (cfg.use_low_group) x = ad::concat_rows(x, detail::param_var(tape, m.low_bank));
  const int half = cfg.visual_layers / 2;
  for (int i = 0; i < half; ++i)
    x = detail::encoder_block(tape, m.visual_blocks[static_cast<std::size_t>(i)], x, cfg.num_heads);
  if (cfg.use_high_group) x = ad::concat_rows(x, detail::param_var(tape, m.high_bank));
  for (int i = half; i < cfg.visual_layers; ++i)
    x = detail::encoder_block(tape, m.visual_blocks[static_cast<std::size_t>(i)], x, cfg.num_heads);
  x = ad::layer_norm_rows(x, detail::param_var(tape, m.visual_ln_g),
                          detail::param_var(tape, m.visual_ln_b));

  VisualEncodeOut<Scalar> out;
  out.patch_features = ad::rows(x, 0, P);
  if (cfg.use_low_group) out.low_group_out = ad::rows(x, P, cfg.n_low_group);
  if (cfg.use_high_group)
    out.high_group_out = ad::rows(x, P + cfg.low_tokens(), cfg.n_high_group);
  return out;
}

/// Text transformer with padded keys masked out of attention. Pad rows of the
/// output are zeroed so they carry no signal downstream.
template <typename Scalar>
TextEncodeOut<Scalar> text_encode(ad::Tape<Scalar>& tape, UniRESModel<Scalar>& m,
                                  const ExpressionTokens& tokens) {
  const auto& cfg = m.config;
  if (static_cast<int>(tokens.ids.size()) != cfg.max_text_len)
    throw ShapeMismatch("text_encode: expected " + std::to_string(cfg.max_text_len) +
                        " token ids, got " + std::to_string(tokens.ids.size()));
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> key_mask(cfg.max_text_len);
  Mat<Scalar> row_mask = Mat<Scalar>::Zero(cfg.max_text_len, cfg.embed_dim);
  for (int i = 0; i < cfg.max_text_len; ++i) {
    const bool valid = i < tokens.true_length;
    key_mask(i) = valid ? Scalar(0) : Scalar(-1e9);
    if (valid) row_mask.row(i).setConstant(Scalar(1));
  }

  auto x = ad::add(ad::gather_rows(detail::param_var(tape, m.token_emb), tokens.ids),
                   detail::param_var(tape, m.text_pos));
  for (auto& block : m.text_blocks)
    x = detail::encoder_block(tape, block, x, cfg.num_heads, &key_mask);
  x = ad::layer_norm_rows(x, detail::param_var(tape, m.text_ln_g),
                          detail::param_var(tape, m.text_ln_b));
  TextEncodeOut<Scalar> out;
  out.token_features = ad::cmul_const(x, row_mask);
  out.sentence_feature = ad::rows(out.token_features, tokens.true_length - 1, 1);
  return out;
}

/// Language-guided region filter: the sentence feature queries each bank and
/// the attention row gates its tokens; the gated banks are concatenated.
template <typename Scalar>
LrfOut<Scalar> lrf_select(ad::Tape<Scalar>& tape, UniRESModel<Scalar>& m,
                          VisualEncodeOut<Scalar>& vis, ad::Var<Scalar> sentence_feature) {
  const auto& cfg = m.config;
  LrfOut<Scalar> out;
  auto run_bank = [&](const LrfParams<Scalar>& p, ad::Var<Scalar> bank, Mat<Scalar>* attn_out) {
    auto q = ad::add_rowvec(ad::matmul(sentence_feature, detail::param_var(tape, p.wq)),
                            detail::param_var(tape, p.bq));
    auto k = ad::add_rowvec(ad::matmul(bank, detail::param_var(tape, p.wk)),
                            detail::param_var(tape, p.bk));
    auto v = ad::add_rowvec(ad::matmul(bank, detail::param_var(tape, p.wv)),
                            detail::param_var(tape, p.bv));
    auto logits = ad::scale(ad::matmul_nt(q, k), Scalar(1) / Scalar(std::sqrt(double(cfg.embed_dim))));
    auto attn = ad::softmax_rows(logits);
    *attn_out = attn.value();
    // gate each token by its attention weight; token count is preserved
    return ad::scale_rows(v, ad::transpose(attn));
  };

  ad::Var<Scalar> selected;
  if (cfg.use_low_group) selected = run_bank(m.lrf_low, vis.low_group_out, &out.low_attention);
  if (cfg.use_high_group) {
    auto high = run_bank(m.lrf_high, vis.high_group_out, &out.high_attention);
    selected = selected.valid() ? ad::concat_rows(selected, high) : high;
  }
  out.selected_regions = selected;
  return out;
}

/// Two-stage decoder and mask head; returns per-patch probabilities
/// (num_patches x 1).
template <typename Scalar>
ad::Var<Scalar> decode(ad::Tape<Scalar>& tape, UniRESModel<Scalar>& m, ad::Var<Scalar> patch_features,
                       ad::Var<Scalar> token_features, const ExpressionTokens& tokens,
                       ad::Var<Scalar> selected_regions, ForwardTrace<Scalar>* trace = nullptr) {
  const auto& cfg = m.config;
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> text_key_mask(cfg.max_text_len);
  for (int i = 0; i < cfg.max_text_len; ++i)
    text_key_mask(i) = i < tokens.true_length ? Scalar(0) : Scalar(-1e9);

  auto x = patch_features;
  for (auto& block : m.dec1_blocks)
    x = detail::decoder_block(tape, block, x, token_features, cfg.num_heads, &text_key_mask);
  if (trace) trace->stage1_features = x.value();

  if (selected_regions.valid()) {
    for (auto& block : m.dec2_blocks)
      x = detail::decoder_block(tape, block, x, selected_regions, cfg.num_heads);
  }
  if (trace) trace->stage2_features = x.value();

  auto normed = ad::layer_norm_rows(x, detail::param_var(tape, m.head_ln_g),
                                    detail::param_var(tape, m.head_ln_b));
  auto logits = ad::add_rowvec(ad::matmul(normed, detail::param_var(tape, m.head_w)),
                               detail::param_var(tape, m.head_b));
  return ad::sigmoid(logits);
}

/// Full forward pass on the tape. Returns patch probabilities (P x 1) and
/// fills the trace when given.
template <typename Scalar>
ad::Var<Scalar> forward_on_tape(ad::Tape<Scalar>& tape, UniRESModel<Scalar>& m,
                                const Mat<Scalar>& image, const ExpressionTokens& tokens,
                                ForwardTrace<Scalar>* trace = nullptr) {
  auto vis = visual_encode(tape, m, image);
  auto text = text_encode(tape, m, tokens);
  auto lrf = lrf_select(tape, m, vis, text.sentence_feature);
  if (trace) {
    trace->patch_features = vis.patch_features.value();
    if (vis.low_group_out.valid()) trace->low_group_out = vis.low_group_out.value();
    if (vis.high_group_out.valid()) trace->high_group_out = vis.high_group_out.value();
    trace->text_features = text.token_features.value();
    trace->sentence_feature = text.sentence_feature.value();
    if (lrf.selected_regions.valid()) trace->selected_regions = lrf.selected_regions.value();
    trace->lrf_low_attention = lrf.low_attention;
    trace->lrf_high_attention = lrf.high_attention;
    trace->first_half_seq = m.config.first_half_seq();
    trace->second_half_seq = m.config.second_half_seq();
  }
  auto probs = decode(tape, m, vis.patch_features, text.token_features, tokens,
                      lrf.selected_regions, trace);
  if (trace) {
    const int side = m.config.patches_per_side();
    Mat<Scalar> grid(side, side);
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c) grid(r, c) = probs.value()(r * side + c, 0);
    trace->mask_logits = grid;
  }
  return probs;
}

template <typename Scalar>
struct ForwardResult {
  ProbMask<Scalar> prob;  // at the original image size
  ForwardTrace<Scalar> trace;
};

/// Inference entry point: encoders, LRF, decoder, then bilinear upsample to
/// the input size. Thresholding prob at config.mask_threshold yields the
/// predicted mask.
template <typename Scalar>
ForwardResult<Scalar> forward(UniRESModel<Scalar>& m, const Mat<Scalar>& image,
                              const ExpressionTokens& tokens) {
  ad::Tape<Scalar> tape;
  ForwardResult<Scalar> out;
  forward_on_tape(tape, m, image, tokens, &out.trace);
  ProbMask<Scalar> grid = out.trace.mask_logits.array();
  out.prob = resize_prob<Scalar>(grid, static_cast<int>(image.cols()),
                                 static_cast<int>(image.rows()));
  return out;
}

enum class GroupLevel { low, high };

/// Per-patch argmax over affinity with the chosen token bank (pre-LRF).
/// Invariant under any positive rescaling of the affinity temperature.
template <typename Scalar>
Eigen::ArrayXXi group_assignment(const ForwardTrace<Scalar>& trace, GroupLevel level) {
  const Mat<Scalar>& bank =
      level == GroupLevel::low ? trace.low_group_out : trace.high_group_out;
  if (bank.size() == 0) throw ShapeMismatch("group_assignment: the requested bank is disabled");
  const Mat<Scalar> affinity = trace.patch_features * bank.transpose();
  const int P = static_cast<int>(affinity.rows());
  const int side = static_cast<int>(std::lround(std::sqrt(double(P))));
  Eigen::ArrayXXi out(side, side);
  for (int i = 0; i < P; ++i) {
    Eigen::Index best = 0;
    affinity.row(i).maxCoeff(&best);
    out(i / side, i % side) = static_cast<int>(best);
  }
  return out;
}

}  // namespace mres

#endif  // MRES_MODEL_HPP
