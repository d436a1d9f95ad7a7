#ifndef MRES_TRAINING_HPP
#define MRES_TRAINING_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mres/model.hpp"

namespace mres {

enum class LossMode { bce, bce_plus_dice };
enum class TrainMode { pretrain, finetune };

std::string to_string(LossMode m);
LossMode loss_mode_from_string(const std::string& s);
std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);

/// Optimizer recipe: AdamW at 1e-5 with 5e-4 decoupled weight decay, cosine
/// decay after a linear warmup. Pretraining runs 50 epochs at batch 128 with
/// a 5-epoch warmup; fine-tuning 15 epochs at batch 64 with a 1-epoch warmup.
struct TrainConfig {
  double learning_rate = 1e-5;
  double weight_decay = 5e-4;
  int warmup_epochs = 5;
  int epochs = 50;
  int batch_size = 128;
  std::uint64_t seed = 0;
  LossMode loss = LossMode::bce_plus_dice;
  bool full_res_supervision = false;  // default supervises at patch resolution
  std::vector<std::string> freeze_groups;  // parameter groups excluded from updates

  static TrainConfig defaults(TrainMode mode) {
    TrainConfig c;
    if (mode == TrainMode::finetune) {
      c.warmup_epochs = 1;
      c.epochs = 15;
      c.batch_size = 64;
    }
    return c;
  }

  void validate() const {
    if (learning_rate <= 0) throw ConfigMismatch("learning_rate must be positive");
    if (epochs < 0 || batch_size <= 0) throw ConfigMismatch("bad epochs/batch_size");
    if (epochs > 0 && warmup_epochs >= epochs)
      throw ConfigMismatch("warmup_epochs must be smaller than epochs");
  }
};

struct TrainLogEntry {
  long step = 0;
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

/// Linear warmup to base_lr, then cosine decay to zero.
inline double lr_at(long step, long total_steps, long warmup_steps, double base_lr) {
  if (total_steps <= 0) return 0.0;
  if (warmup_steps > 0 && step < warmup_steps)
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const double span = static_cast<double>(total_steps - warmup_steps);
  const double progress = span <= 0 ? 1.0 : static_cast<double>(step - warmup_steps) / span;
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

inline double lr_at(long step, long total_steps, const TrainConfig& config, long steps_per_epoch) {
  return lr_at(step, total_steps, static_cast<long>(config.warmup_epochs) * steps_per_epoch,
               config.learning_rate);
}

// ---- segmentation loss --------------------------------------------------------

/// BCE (optionally + soft Dice, weight 1) between per-pixel probabilities and
/// a binary target of the same shape. The target must already be at the
/// probability grid's resolution.
template <typename S>
ad::Var<S> seg_loss_on_tape(ad::Tape<S>& tape, ad::Var<S> probs, const BinaryMask& target,
                            LossMode mode) {
  if (probs.value().rows() != target.rows() || probs.value().cols() != target.cols())
    throw ShapeMismatch("seg_loss: probabilities are " + std::to_string(probs.value().rows()) +
                        "x" + std::to_string(probs.value().cols()) + ", target is " +
                        std::to_string(target.rows()) + "x" + std::to_string(target.cols()));
  const S eps = S(1e-7);
  const auto n = static_cast<S>(target.size());
  Mat<S> t = target.cast<S>().matrix();
  Mat<S> one_minus_t = (S(1) - t.array()).matrix();

  auto ones = tape.constant(Mat<S>::Ones(probs.value().rows(), probs.value().cols()));
  auto pos = ad::cmul_const(ad::log(ad::clamp_min(probs, eps)), t);
  auto neg = ad::cmul_const(ad::log(ad::clamp_min(ad::sub(ones, probs), eps)), one_minus_t);
  auto bce = ad::scale(ad::sum(ad::add(pos, neg)), S(-1) / n);
  if (mode == LossMode::bce) return bce;

  const S smooth = S(1);
  const S target_sum = S(target.cast<std::int64_t>().sum());
  auto inter = ad::sum(ad::cmul_const(probs, t));
  auto denom = ad::add_scalar(ad::sum(probs), target_sum + smooth);
  auto dice = ad::add_scalar(ad::scale(ad::cmul(ad::add_scalar(ad::scale(inter, S(2)), smooth),
                                                ad::reciprocal(denom)),
                                       S(-1)),
                             S(1));
  return ad::add(bce, dice);
}

/// Value-level wrapper; also exposes d(loss)/d(probs) for callers that want
/// the gradient without a model in the loop.
template <typename S>
double seg_loss(const ProbMask<S>& probs, const BinaryMask& target, LossMode mode,
                Mat<S>* grad_out = nullptr) {
  ad::Tape<S> tape;
  Mat<S> grad = Mat<S>::Zero(probs.rows(), probs.cols());
  auto p = tape.leaf(probs.matrix(), &grad);
  auto loss = seg_loss_on_tape(tape, p, target, mode);
  tape.backward(loss);
  if (grad_out) *grad_out = grad;
  return static_cast<double>(loss.value()(0, 0));
}

// ---- optimizer ------------------------------------------------------------------

/// AdamW with decoupled weight decay: p *= (1 - lr*wd) before the
/// bias-corrected adaptive update, so zero-gradient parameters decay exactly.
template <typename S>
class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamSet<S>& params, double lr, double weight_decay,
            const std::vector<std::string>& freeze_groups = {}) {
    if (m_.empty()) {
      for (auto& p : params) {
        m_.push_back(Mat<S>::Zero(p.value.rows(), p.value.cols()));
        v_.push_back(Mat<S>::Zero(p.value.rows(), p.value.cols()));
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    std::size_t i = 0;
    for (auto& p : params) {
      auto& m = m_[i];
      auto& v = v_[i];
      ++i;
      if (std::find(freeze_groups.begin(), freeze_groups.end(), p.group) != freeze_groups.end())
        continue;
      m = S(beta1_) * m + S(1.0 - beta1_) * p.grad;
      v = (S(beta2_) * v.array() + S(1.0 - beta2_) * p.grad.array().square()).matrix();
      p.value *= S(1.0 - lr * weight_decay);
      p.value.array() -=
          S(lr) * (m.array() / S(bc1)) / ((v.array() / S(bc2)).sqrt() + S(eps_));
    }
  }

  long step_count() const { return t_; }
  void set_step_count(long t) { t_ = t; }
  std::vector<Mat<S>>& moment1() { return m_; }
  std::vector<Mat<S>>& moment2() { return v_; }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Mat<S>> m_;
  std::vector<Mat<S>> v_;
};

// ---- training loop ---------------------------------------------------------------

template <typename S>
struct TrainSample {
  Mat<S> image;
  ExpressionTokens tokens;
  BinaryMask gt;  // at image resolution
};

template <typename S>
ad::Var<S> sample_loss_on_tape(ad::Tape<S>& tape, UniRESModel<S>& model,
                               const TrainSample<S>& sample, const TrainConfig& config) {
  auto probs = forward_on_tape(tape, model, sample.image, sample.tokens);
  const int side = model.config.patches_per_side();
  if (config.full_res_supervision) {
    auto grid = ad::reshape_rowmajor(probs, side, side);
    auto full = ad::upsample_bilinear(grid, model.config.image_size, model.config.image_size);
    return seg_loss_on_tape(tape, full, sample.gt, config.loss);
  }
  auto grid = ad::reshape_rowmajor(probs, side, side);
  return seg_loss_on_tape(tape, grid, majority_pool(sample.gt, model.config.patch_size),
                          config.loss);
}

/// One optimizer step over a batch; gradients are batch means.
template <typename S>
TrainLogEntry train_step(UniRESModel<S>& model, std::span<const TrainSample<S>> batch,
                         AdamW<S>& opt, const TrainConfig& config, long step, long total_steps,
                         long steps_per_epoch, int epoch) {
  const auto t0 = std::chrono::steady_clock::now();
  model.params.zero_grads();
  double loss_total = 0.0;
  for (const auto& sample : batch) {
    ad::Tape<S> tape;
    auto loss = ad::scale(sample_loss_on_tape(tape, model, sample, config),
                          S(1.0 / static_cast<double>(batch.size())));
    tape.backward(loss);
    loss_total += static_cast<double>(loss.value()(0, 0));
  }
  if (!std::isfinite(loss_total))
    throw NonFiniteLoss("non-finite loss " + std::to_string(loss_total) + " at step " +
                        std::to_string(step));
  const double lr = lr_at(step, total_steps, config, steps_per_epoch);
  opt.step(model.params, lr, config.weight_decay, config.freeze_groups);

  TrainLogEntry entry;
  entry.step = step;
  entry.epoch = epoch;
  entry.loss = loss_total;
  entry.lr = lr;
  entry.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
  return entry;
}

/// Runs epochs x ceil(N/batch) steps with a per-epoch deterministic shuffle.
/// The checkpoint sink (when set) fires after every epoch. start_epoch > 0
/// resumes mid-run and stop_epoch >= 0 ends a segment early; the schedule is
/// a pure function of the step so segmented runs reproduce an uninterrupted
/// one exactly.
template <typename S>
std::vector<TrainLogEntry> fit(
    UniRESModel<S>& model, const std::vector<TrainSample<S>>& dataset, const TrainConfig& config,
    AdamW<S>& opt, int start_epoch = 0, int stop_epoch = -1,
    const std::function<void(int epoch, long step)>& checkpoint_sink = {}) {
  config.validate();
  if (dataset.empty()) throw EmptyEvaluation("fit: empty dataset");
  const long n = static_cast<long>(dataset.size());
  const long steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const long total_steps = static_cast<long>(config.epochs) * steps_per_epoch;
  const int end_epoch = stop_epoch < 0 ? config.epochs : std::min(stop_epoch, config.epochs);

  std::vector<TrainLogEntry> log;
  long step = static_cast<long>(start_epoch) * steps_per_epoch;
  for (int epoch = start_epoch; epoch < end_epoch; ++epoch) {
    std::vector<long> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(config.seed + static_cast<std::uint64_t>(epoch) * 0x9e3779b97f4a7c15ull);
    std::shuffle(order.begin(), order.end(), rng);

    for (long b = 0; b < steps_per_epoch; ++b) {
      std::vector<TrainSample<S>> batch;
      for (long i = b * config.batch_size; i < std::min(n, (b + 1) * config.batch_size); ++i)
        batch.push_back(dataset[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
      log.push_back(train_step(model, std::span<const TrainSample<S>>(batch), opt, config, step,
                               total_steps, steps_per_epoch, epoch));
      ++step;
    }
    if (checkpoint_sink) checkpoint_sink(epoch, step);
  }
  return log;
}

}  // namespace mres

#endif  // MRES_TRAINING_HPP
