#include "mres/dataset.hpp"

#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "mres/errors.hpp"
#include "mres/tokenizer.hpp"

namespace mres {

using nlohmann::json;

std::string to_string(Granularity g) {
  return g == Granularity::object ? "object" : "part";
}

Granularity granularity_from_string(const std::string& s) {
  if (s == "object") return Granularity::object;
  if (s == "part") return Granularity::part;
  throw SchemaError("unknown granularity '" + s + "'");
}

std::string to_string(EvalSetting s) {
  switch (s) {
    case EvalSetting::object_only: return "object_only";
    case EvalSetting::part_only: return "part_only";
    case EvalSetting::object_and_part: return "object_and_part";
  }
  return "object_and_part";
}

EvalSetting eval_setting_from_string(const std::string& s) {
  if (s == "object_only") return EvalSetting::object_only;
  if (s == "part_only") return EvalSetting::part_only;
  if (s == "object_and_part" || s == "all") return EvalSetting::object_and_part;
  throw SchemaError("unknown eval setting '" + s + "'");
}

std::string resolve_data_root(const std::string& explicit_root) {
  if (!explicit_root.empty()) return explicit_root;
  if (const char* env = std::getenv("MRES_DATA_ROOT"); env && *env) return env;
  throw IoError("no dataset root given and MRES_DATA_ROOT is not set");
}

void validate_sample(const ReferringSample& s, long line) {
  if (s.sample_id.empty()) throw SchemaError("empty sample_id", line, "sample_id");
  if (s.image_w <= 0 || s.image_h <= 0)
    throw SchemaError("image dimensions must be positive", line, "image_w/image_h");
  if (split_words(s.expression).empty())
    throw SchemaError("expression must contain at least one word", line, "expression");
  if (s.mask.width != s.image_w || s.mask.height != s.image_h)
    throw SchemaError("mask dimensions do not match the image", line, "mask");
  try {
    validate_rle(s.mask);
  } catch (const std::exception& e) {
    throw SchemaError(e.what(), line, "mask");
  }
  if (s.object_category.empty()) throw SchemaError("empty object_category", line, "object_category");
  const bool is_part = s.granularity == Granularity::part;
  if (is_part && (!s.part_category || s.part_category->empty()))
    throw SchemaError("part sample without part_category", line, "part_category");
  if (!is_part && s.part_category)
    throw SchemaError("object sample must not carry part_category", line, "part_category");
}

namespace {

json rle_to_json(const RleMask& rle) {
  return json{{"w", rle.width}, {"h", rle.height}, {"counts", rle.counts}};
}

RleMask rle_from_json(const json& j, long line) {
  if (!j.is_object() || !j.contains("w") || !j.contains("h") || !j.contains("counts"))
    throw SchemaError("mask must be an object with w, h and counts", line, "mask");
  RleMask rle;
  rle.width = j.at("w").get<int>();
  rle.height = j.at("h").get<int>();
  rle.counts = j.at("counts").get<std::vector<std::int64_t>>();
  return rle;
}

json sample_to_json(const ReferringSample& s) {
  json j{{"sample_id", s.sample_id},
         {"image", s.image_ref},
         {"image_w", s.image_w},
         {"image_h", s.image_h},
         {"expression", s.expression},
         {"mask", rle_to_json(s.mask)},
         {"granularity", to_string(s.granularity)},
         {"object_category", s.object_category}};
  if (s.part_category) j["part_category"] = *s.part_category;
  return j;
}

ReferringSample sample_from_json(const json& j, long line) {
  for (const char* key : {"sample_id", "image", "image_w", "image_h", "expression", "mask",
                          "granularity", "object_category"})
    if (!j.contains(key)) throw SchemaError("missing required field", line, key);
  ReferringSample s;
  try {
    s.sample_id = j.at("sample_id").get<std::string>();
    s.image_ref = j.at("image").get<std::string>();
    s.image_w = j.at("image_w").get<int>();
    s.image_h = j.at("image_h").get<int>();
    s.expression = j.at("expression").get<std::string>();
    s.mask = rle_from_json(j.at("mask"), line);
    s.granularity = granularity_from_string(j.at("granularity").get<std::string>());
    s.object_category = j.at("object_category").get<std::string>();
    if (j.contains("part_category")) s.part_category = j.at("part_category").get<std::string>();
  } catch (const SchemaError&) {
    throw;
  } catch (const std::exception& e) {
    throw SchemaError(e.what(), line);
  }
  validate_sample(s, line);
  return s;
}

}  // namespace

BenchmarkSplit load_benchmark(const std::string& root, const std::string& split) {
  const std::string path = root + "/" + split + ".jsonl";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open benchmark file " + path);

  BenchmarkSplit out;
  out.name = split;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  long line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw SchemaError(std::string("invalid JSON: ") + e.what(), line_number);
    }
    auto sample = sample_from_json(j, line_number);
    if (!seen_ids.insert(sample.sample_id).second)
      throw SchemaError("duplicate sample_id '" + sample.sample_id + "'", line_number, "sample_id");
    out.samples.push_back(std::move(sample));
  }
  if (out.samples.empty()) throw SchemaError("empty split in " + path);
  return out;
}

std::string to_jsonl(const BenchmarkSplit& split) {
  std::ostringstream out;
  for (const auto& s : split.samples) out << sample_to_json(s).dump() << "\n";
  return out.str();
}

void save_benchmark(const std::string& root, const BenchmarkSplit& split) {
  const std::string path = root + "/" + split.name + ".jsonl";
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write benchmark file " + path);
  out << to_jsonl(split);
}

BenchmarkSplit filter_setting(const BenchmarkSplit& split, EvalSetting setting) {
  if (setting == EvalSetting::object_and_part) return split;
  const auto keep =
      setting == EvalSetting::object_only ? Granularity::object : Granularity::part;
  BenchmarkSplit out;
  out.name = split.name;
  for (const auto& s : split.samples)
    if (s.granularity == keep) out.samples.push_back(s);
  return out;
}

CorpusStats compute_stats(const BenchmarkSplit& split) {
  CorpusStats stats;
  std::set<std::string> object_categories;
  std::set<std::string> part_categories;
  std::set<std::string> mask_identities;
  std::int64_t total_words = 0;

  for (const auto& s : split.samples) {
    total_words += static_cast<std::int64_t>(split_words(s.expression).size());
    object_categories.insert(s.object_category);
    const std::string category =
        s.granularity == Granularity::part ? *s.part_category : s.object_category;
    if (s.granularity == Granularity::part) part_categories.insert(*s.part_category);
    ++stats.expressions_per_category[category];

    std::ostringstream key;
    key << s.image_ref << "|" << s.mask.width << "x" << s.mask.height;
    for (auto c : s.mask.counts) key << "," << c;
    mask_identities.insert(key.str());
  }

  stats.num_references = static_cast<std::int64_t>(split.samples.size());
  stats.num_masks = static_cast<std::int64_t>(mask_identities.size());
  stats.num_object_categories = static_cast<std::int64_t>(object_categories.size());
  stats.num_part_categories = static_cast<std::int64_t>(part_categories.size());
  stats.avg_expression_length =
      stats.num_references == 0
          ? 0.0
          : static_cast<double>(total_words) / static_cast<double>(stats.num_references);
  return stats;
}

}  // namespace mres
