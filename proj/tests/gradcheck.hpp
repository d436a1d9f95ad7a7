#ifndef MRES_TESTS_GRADCHECK_HPP
#define MRES_TESTS_GRADCHECK_HPP

#include <map>
#include <random>
#include <string>
#include <vector>

#include "mres/training.hpp"

namespace mres::test {

struct GroupGradError {
  double max_rel_err = 0.0;
  int checked = 0;
};

struct GradCheckReport {
  std::map<std::string, GroupGradError> per_group;
  double max_rel_err = 0.0;
  int checked = 0;
};

/// Central-finite-difference check of d(batch loss)/d(theta) for a random
/// sample of scalars in every parameter group.
///
/// The probe itself has finite resolution: with step h its absolute noise is
/// about |loss| * machine_eps / h, so gradients far below that scale cannot
/// be verified in strict relative terms by any probe. The relative error
/// therefore guards its denominator with `floor`, chosen at the probe's
/// resolution scale; a wrong backward formula still fails because it shifts
/// fd vs analytic by the gradient's own magnitude.
template <typename S>
GradCheckReport gradient_check(UniRESModel<S>& model, const std::vector<TrainSample<S>>& batch,
                               const TrainConfig& config, int per_group, double eps,
                               double floor, std::uint64_t seed) {
  auto batch_loss = [&]() {
    double total = 0.0;
    for (const auto& sample : batch) {
      ad::Tape<S> tape;
      auto loss = sample_loss_on_tape(tape, model, sample, config);
      total += static_cast<double>(loss.value()(0, 0)) / static_cast<double>(batch.size());
    }
    return total;
  };

  model.params.zero_grads();
  for (const auto& sample : batch) {
    ad::Tape<S> tape;
    auto loss = ad::scale(sample_loss_on_tape(tape, model, sample, config),
                          S(1.0 / static_cast<double>(batch.size())));
    tape.backward(loss);
  }

  // (parameter index, flat offset) pairs per group
  std::map<std::string, std::vector<std::pair<std::size_t, Eigen::Index>>> group_scalars;
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const auto& p = model.params.at(i);
    for (Eigen::Index k = 0; k < p.value.size(); ++k) group_scalars[p.group].emplace_back(i, k);
  }

  std::mt19937_64 rng(seed);
  GradCheckReport report;
  for (auto& [group, scalars] : group_scalars) {
    std::shuffle(scalars.begin(), scalars.end(), rng);
    const int n = std::min<int>(per_group, static_cast<int>(scalars.size()));
    GroupGradError err;
    for (int s = 0; s < n; ++s) {
      auto& p = model.params.at(scalars[static_cast<std::size_t>(s)].first);
      const Eigen::Index k = scalars[static_cast<std::size_t>(s)].second;
      S* theta = p.value.data() + k;
      const double analytic = static_cast<double>(p.grad.data()[k]);
      const S saved = *theta;
      const double h = eps * std::max(1.0, std::abs(static_cast<double>(saved)));
      *theta = saved + static_cast<S>(h);
      const double up = batch_loss();
      *theta = saved - static_cast<S>(h);
      const double down = batch_loss();
      *theta = saved;
      const double fd = (up - down) / (2.0 * h);
      const double rel =
          std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), floor});
      err.max_rel_err = std::max(err.max_rel_err, rel);
      ++err.checked;
    }
    report.per_group[group] = err;
    report.max_rel_err = std::max(report.max_rel_err, err.max_rel_err);
    report.checked += err.checked;
  }
  return report;
}

/// Per-group gradient norms after one accumulated backward pass.
template <typename S>
std::map<std::string, double> gradient_flow(UniRESModel<S>& model,
                                            const std::vector<TrainSample<S>>& batch,
                                            const TrainConfig& config) {
  model.params.zero_grads();
  for (const auto& sample : batch) {
    ad::Tape<S> tape;
    auto loss = sample_loss_on_tape(tape, model, sample, config);
    tape.backward(loss);
  }
  std::map<std::string, double> norms;
  for (const auto& p : model.params) norms[p.group] += static_cast<double>(p.grad.norm());
  return norms;
}

}  // namespace mres::test

#endif  // MRES_TESTS_GRADCHECK_HPP
