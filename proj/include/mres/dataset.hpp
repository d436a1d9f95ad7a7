#ifndef MRES_DATASET_HPP
#define MRES_DATASET_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mres/mask.hpp"

namespace mres {

enum class Granularity { object, part };

enum class EvalSetting { object_only, part_only, object_and_part };

std::string to_string(Granularity g);
Granularity granularity_from_string(const std::string& s);
std::string to_string(EvalSetting s);
EvalSetting eval_setting_from_string(const std::string& s);

struct ReferringSample {
  std::string sample_id;
  std::string image_ref;
  int image_w = 0;
  int image_h = 0;
  std::string expression;
  RleMask mask;
  Granularity granularity = Granularity::object;
  std::string object_category;
  std::optional<std::string> part_category;
};

struct BenchmarkSplit {
  std::string name;  // val, testA or testB
  std::vector<ReferringSample> samples;
};

struct CorpusStats {
  std::map<std::string, std::int64_t> expressions_per_category;
  double avg_expression_length = 0.0;
  std::int64_t num_masks = 0;
  std::int64_t num_references = 0;
  std::int64_t num_object_categories = 0;
  std::int64_t num_part_categories = 0;
};

/// Resolves the dataset root: an explicit path wins, otherwise MRES_DATA_ROOT.
std::string resolve_data_root(const std::string& explicit_root);

/// Loads `<root>/<split>.jsonl`, validating every record. Line numbers are
/// 1-based in SchemaError.
BenchmarkSplit load_benchmark(const std::string& root, const std::string& split);

/// Canonical JSON-lines serialization (alphabetical keys, one sample per line).
void save_benchmark(const std::string& root, const BenchmarkSplit& split);
std::string to_jsonl(const BenchmarkSplit& split);

/// Throws SchemaError when any ReferringSample invariant is violated.
void validate_sample(const ReferringSample& s, long line = -1);

BenchmarkSplit filter_setting(const BenchmarkSplit& split, EvalSetting setting);

/// Category counts use the part category for part samples and the object
/// category for object samples. Mask identity is (image_ref, RLE payload).
CorpusStats compute_stats(const BenchmarkSplit& split);

}  // namespace mres

#endif  // MRES_DATASET_HPP
