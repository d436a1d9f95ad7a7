#ifndef MRES_EVAL_HPP
#define MRES_EVAL_HPP

#include <functional>
#include <optional>
#include <string>

#include "mres/dataset.hpp"
#include "mres/mask.hpp"

namespace mres {

struct SettingMetrics {
  long count = 0;
  std::optional<double> miou_value;
  std::optional<double> oiou_value;  // reported for the object-only block
};

/// Per-setting mIoU table in the shape of the benchmark result tables; oIoU
/// is added for object-only evaluation.
struct EvalReport {
  std::string dataset_name;
  std::string split;
  std::string checkpoint_id;
  double threshold = 0.35;
  double wall_ms = 0.0;
  std::optional<SettingMetrics> object_only;
  std::optional<SettingMetrics> part_only;
  std::optional<SettingMetrics> object_and_part;

  std::string to_json() const;
  std::string to_text_table() const;
};

/// Produces the full-resolution confidence map for one benchmark sample.
using Predictor = std::function<ProbMaskF(const ReferringSample&)>;

/// Returns the ground-truth mask as a confident prediction; useful as an
/// upper-bound sanity predictor.
Predictor oracle_predictor();

/// Runs the predictor over the split and aggregates mIoU/oIoU per setting.
/// When `restrict_to` is set only that block is computed, and an empty block
/// raises EmptyEvaluation; in full-table mode empty blocks report count 0.
EvalReport evaluate(const BenchmarkSplit& split, const Predictor& predictor, double threshold,
                    std::optional<EvalSetting> restrict_to = std::nullopt);

}  // namespace mres

#endif  // MRES_EVAL_HPP
