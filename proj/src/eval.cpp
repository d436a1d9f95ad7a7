#include "mres/eval.hpp"

#include <json.hpp>

#include <chrono>
#include <iomanip>
#include <sstream>
#include <vector>

#include "mres/errors.hpp"

namespace mres {

using nlohmann::json;

Predictor oracle_predictor() {
  return [](const ReferringSample& sample) -> ProbMaskF {
    return rle_decode(sample.mask).cast<float>();
  };
}

namespace {

SettingMetrics aggregate(const std::vector<IoUStats>& stats, bool with_oiou) {
  SettingMetrics m;
  m.count = static_cast<long>(stats.size());
  if (stats.empty()) return m;
  m.miou_value = miou(stats);
  if (with_oiou) m.oiou_value = oiou(stats);
  return m;
}

json metrics_to_json(const SettingMetrics& m) {
  json j{{"count", m.count}};
  if (m.miou_value) j["miou"] = *m.miou_value;
  if (m.oiou_value) j["oiou"] = *m.oiou_value;
  return j;
}

}  // namespace

EvalReport evaluate(const BenchmarkSplit& split, const Predictor& predictor, double threshold,
                    std::optional<EvalSetting> restrict_to) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<IoUStats> object_stats, part_stats, all_stats;
  for (const auto& sample : split.samples) {
    const bool is_part = sample.granularity == Granularity::part;
    if (restrict_to && *restrict_to != EvalSetting::object_and_part) {
      if (*restrict_to == EvalSetting::object_only && is_part) continue;
      if (*restrict_to == EvalSetting::part_only && !is_part) continue;
    }
    const ProbMaskF prob = predictor(sample);
    if (prob.rows() != sample.image_h || prob.cols() != sample.image_w)
      throw ShapeMismatch("predictor returned a map of the wrong size for sample " +
                          sample.sample_id);
    const BinaryMask pred = binarize<float>(prob, static_cast<float>(threshold));
    const IoUStats s = iou_stats(pred, rle_decode(sample.mask));
    (is_part ? part_stats : object_stats).push_back(s);
    all_stats.push_back(s);
  }

  EvalReport report;
  report.split = split.name;
  report.threshold = threshold;
  if (restrict_to && *restrict_to == EvalSetting::object_only) {
    if (object_stats.empty()) throw EmptyEvaluation("no object-granularity samples to evaluate");
    report.object_only = aggregate(object_stats, true);
  } else if (restrict_to && *restrict_to == EvalSetting::part_only) {
    if (part_stats.empty()) throw EmptyEvaluation("no part-granularity samples to evaluate");
    report.part_only = aggregate(part_stats, false);
  } else {
    if (all_stats.empty()) throw EmptyEvaluation("no samples to evaluate");
    report.object_only = aggregate(object_stats, true);
    report.part_only = aggregate(part_stats, false);
    report.object_and_part = aggregate(all_stats, false);
  }
  report.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

std::string EvalReport::to_json() const {
  json settings = json::object();
  if (object_only) settings["object_only"] = metrics_to_json(*object_only);
  if (part_only) settings["part_only"] = metrics_to_json(*part_only);
  if (object_and_part) settings["object_and_part"] = metrics_to_json(*object_and_part);
  json j{{"dataset", dataset_name},
         {"split", split},
         {"checkpoint", checkpoint_id},
         {"threshold", threshold},
         {"wall_ms", wall_ms},
         {"settings", settings}};
  return j.dump(2) + "\n";
}

std::string EvalReport::to_text_table() const {
  std::ostringstream out;
  out << "dataset: " << dataset_name << "  split: " << split << "  threshold: " << std::fixed
      << std::setprecision(2) << threshold << "\n";
  out << std::left << std::setw(18) << "setting" << std::right << std::setw(9) << "samples"
      << std::setw(9) << "mIoU" << std::setw(9) << "oIoU" << "\n";
  auto row = [&](const char* name, const std::optional<SettingMetrics>& m) {
    if (!m) return;
    out << std::left << std::setw(18) << name << std::right << std::setw(9) << m->count;
    if (m->miou_value)
      out << std::setw(9) << std::fixed << std::setprecision(4) << *m->miou_value;
    else
      out << std::setw(9) << "-";
    if (m->oiou_value)
      out << std::setw(9) << std::fixed << std::setprecision(4) << *m->oiou_value;
    else
      out << std::setw(9) << "-";
    out << "\n";
  };
  row("object_only", object_only);
  row("part_only", part_only);
  row("object_and_part", object_and_part);
  return out.str();
}

}  // namespace mres
