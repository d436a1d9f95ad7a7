#include "mres/engine.hpp"

#include <json.hpp>

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mres/errors.hpp"

namespace mres::engine {

using nlohmann::json;

std::string to_string(RecordGranularity g) {
  switch (g) {
    case RecordGranularity::image: return "image";
    case RecordGranularity::object: return "object";
    case RecordGranularity::part: return "part";
  }
  return "object";
}

RecordGranularity record_granularity_from_string(const std::string& s) {
  if (s == "image") return RecordGranularity::image;
  if (s == "object") return RecordGranularity::object;
  if (s == "part") return RecordGranularity::part;
  throw SchemaError("unknown record granularity '" + s + "'");
}

NormalizedBBox normalize_bbox(const BBox& b, int image_w, int image_h) {
  if (!(b.x0 <= b.x1) || !(b.y0 <= b.y1))
    throw InvalidBox("inverted box (" + std::to_string(b.x0) + "," + std::to_string(b.y0) + "," +
                     std::to_string(b.x1) + "," + std::to_string(b.y1) + ")");
  if (b.x0 < 0 || b.y0 < 0 || b.x1 > image_w || b.y1 > image_h)
    throw InvalidBox("box exceeds the image bounds");
  auto norm = [](double coord, int dim) {
    const long v = std::lround(coord / static_cast<double>(dim) * kNormRange);
    return static_cast<int>(std::clamp(v, 0L, static_cast<long>(kNormRange)));
  };
  return NormalizedBBox{norm(b.x0, image_w), norm(b.y0, image_h), norm(b.x1, image_w),
                        norm(b.y1, image_h)};
}

namespace {

std::string trimmed(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed = 1469598103934665603ull) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

BinaryMask fill_box(int image_w, int image_h, const BBox& b) {
  BinaryMask mask = BinaryMask::Zero(image_h, image_w);
  const int x0 = std::clamp(static_cast<int>(std::floor(b.x0)), 0, image_w);
  const int y0 = std::clamp(static_cast<int>(std::floor(b.y0)), 0, image_h);
  const int x1 = std::clamp(static_cast<int>(std::ceil(b.x1)), 0, image_w);
  const int y1 = std::clamp(static_cast<int>(std::ceil(b.y1)), 0, image_h);
  if (x1 > x0 && y1 > y0) mask.block(y0, x0, y1 - y0, x1 - x0).setConstant(1);
  return mask;
}

json bbox_json(const BBox& b) { return json::array({b.x0, b.y0, b.x1, b.y1}); }
json nbox_json(const NormalizedBBox& b) { return json::array({b.x0, b.y0, b.x1, b.y1}); }

void validate_record(const GroundingRecord& r) {
  if (r.image_ref.empty()) throw SchemaError("record without image_ref");
  if (r.caption.empty()) throw SchemaError("record without caption");
  if (r.granularity == RecordGranularity::part && (!r.part_category || r.part_category->empty()))
    throw SchemaError("part record without part_category");
  if (r.granularity == RecordGranularity::image && !(r.norm_bbox == kFullImageBox))
    throw SchemaError("image record must carry the full-image box");
  for (int c : {r.norm_bbox.x0, r.norm_bbox.y0, r.norm_bbox.x1, r.norm_bbox.y1})
    if (c < 0 || c > kNormRange) throw SchemaError("normalized coordinate out of range");
  if (r.norm_bbox.x0 > r.norm_bbox.x1 || r.norm_bbox.y0 > r.norm_bbox.y1)
    throw SchemaError("normalized box is inverted");
  if (r.mask) validate_rle(*r.mask);
}

}  // namespace

std::string part_caption(const std::string& part_name, const std::string& object_name) {
  if (trimmed(part_name).empty()) throw EmptyName("part name is empty");
  if (trimmed(object_name).empty()) throw EmptyName("object name is empty");
  return part_name + " of " + object_name;
}

void BackendSuite::require_complete() const {
  if (!captioner) throw BackendError("missing backend: captioner");
  if (!promptable_segmenter) throw BackendError("missing backend: promptable_segmenter");
  if (!part_segmenter) throw BackendError("missing backend: part_segmenter");
  if (!decomposer) throw BackendError("missing backend: decomposer");
  if (!scorer) throw BackendError("missing backend: scorer");
}

BranchResult object_branch(const GrayImage& image, const std::string& image_ref,
                           const std::vector<BoxedObject>& boxes, const BackendSuite& backends) {
  BranchResult out;
  const int w = static_cast<int>(image.cols());
  const int h = static_cast<int>(image.rows());
  for (const auto& box : boxes) {
    try {
      GroundingRecord r;
      r.image_ref = image_ref;
      r.granularity = RecordGranularity::object;
      r.bbox = box.bbox;
      r.norm_bbox = normalize_bbox(box.bbox, w, h);
      r.object_category = box.category;
      r.mask = rle_encode(backends.promptable_segmenter(image, box.bbox));
      CaptionContext ctx;
      ctx.granularity = RecordGranularity::object;
      ctx.object_category = box.category;
      r.caption = backends.captioner(image, r.norm_bbox, ctx);
      out.records.push_back(std::move(r));
    } catch (const std::exception& e) {
      ++out.failed;
      out.failures.push_back("object box '" + box.category + "': " + e.what());
    }
  }
  return out;
}

std::vector<std::string> decompose_vocabulary(const std::vector<std::string>& object_categories,
                                              const BackendSuite& backends) {
  std::vector<std::string> vocabulary;
  for (const auto& category : object_categories)
    for (const auto& part : backends.decomposer({category}))
      if (std::find(vocabulary.begin(), vocabulary.end(), part) == vocabulary.end())
        vocabulary.push_back(part);
  return vocabulary;
}

BranchResult part_branch(const GrayImage& image, const std::string& image_ref,
                         const std::vector<std::string>& object_categories,
                         const BackendSuite& backends) {
  BranchResult out;
  if (object_categories.empty()) return out;
  const int w = static_cast<int>(image.cols());
  const int h = static_cast<int>(image.rows());

  std::vector<std::string> vocabulary;
  // remembers which object first contributed each part name
  std::map<std::string, std::string> part_owner;
  try {
    for (const auto& category : object_categories)
      for (const auto& part : backends.decomposer({category}))
        if (part_owner.emplace(part, category).second) vocabulary.push_back(part);
  } catch (const std::exception& e) {
    ++out.failed;
    out.failures.push_back(std::string("decomposer: ") + e.what());
    return out;
  }
  if (vocabulary.empty()) return out;

  std::vector<PartDetection> detections;
  try {
    detections = backends.part_segmenter(image, vocabulary);
  } catch (const std::exception& e) {
    ++out.failed;
    out.failures.push_back(std::string("part_segmenter: ") + e.what());
    return out;
  }

  for (const auto& det : detections) {
    try {
      GroundingRecord r;
      r.image_ref = image_ref;
      r.granularity = RecordGranularity::part;
      r.bbox = det.bbox;
      r.norm_bbox = normalize_bbox(det.bbox, w, h);
      r.part_category = det.tag;
      auto owner = part_owner.find(det.tag);
      r.object_category = owner == part_owner.end() ? object_categories.front() : owner->second;
      r.mask = rle_encode(det.mask);
      CaptionContext ctx;
      ctx.granularity = RecordGranularity::part;
      ctx.object_category = r.object_category;
      ctx.part_category = det.tag;
      r.caption = backends.captioner(image, r.norm_bbox, ctx);
      out.records.push_back(std::move(r));
    } catch (const std::exception& e) {
      ++out.failed;
      out.failures.push_back("part '" + det.tag + "': " + e.what());
    }
  }
  return out;
}

FilterResult filter_records(std::vector<GroundingRecord> records, const GrayImage& image,
                            const BackendSuite& backends) {
  FilterResult out;
  const int w = static_cast<int>(image.cols());
  const int h = static_cast<int>(image.rows());
  for (auto& r : records) {
    const int x0 = std::clamp(static_cast<int>(std::floor(r.bbox.x0)), 0, w);
    const int y0 = std::clamp(static_cast<int>(std::floor(r.bbox.y0)), 0, h);
    const int x1 = std::clamp(static_cast<int>(std::ceil(r.bbox.x1)), 0, w);
    const int y1 = std::clamp(static_cast<int>(std::ceil(r.bbox.y1)), 0, h);
    if (x1 <= x0 || y1 <= y0) {
      out.dropped.push_back({std::move(r), "invalid_box"});
      continue;
    }
    const GrayImage crop = image.block(y0, x0, y1 - y0, x1 - x0);
    double score = 0.0;
    try {
      score = backends.scorer(crop, r.caption);
    } catch (const std::exception&) {
      out.dropped.push_back({std::move(r), "scorer_error"});
      continue;
    }
    r.similarity = score;
    if (score > kSimilarityThreshold)
      out.kept.push_back(std::move(r));
    else
      out.dropped.push_back({std::move(r), "low_similarity"});
  }
  return out;
}

std::string record_to_json(const GroundingRecord& r) {
  json j{{"image", r.image_ref},
         {"granularity", to_string(r.granularity)},
         {"bbox", bbox_json(r.bbox)},
         {"norm_bbox", nbox_json(r.norm_bbox)},
         {"caption", r.caption},
         {"object_category", r.object_category}};
  if (r.mask) j["mask"] = {{"w", r.mask->width}, {"h", r.mask->height}, {"counts", r.mask->counts}};
  if (r.part_category) j["part_category"] = *r.part_category;
  if (r.similarity) j["similarity"] = *r.similarity;
  return j.dump();
}

GroundingRecord record_from_json(const std::string& line) {
  json j = json::parse(line);
  GroundingRecord r;
  r.image_ref = j.at("image").get<std::string>();
  r.granularity = record_granularity_from_string(j.at("granularity").get<std::string>());
  const auto& b = j.at("bbox");
  r.bbox = BBox{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                b.at(3).get<double>()};
  const auto& nb = j.at("norm_bbox");
  r.norm_bbox = NormalizedBBox{nb.at(0).get<int>(), nb.at(1).get<int>(), nb.at(2).get<int>(),
                               nb.at(3).get<int>()};
  r.caption = j.at("caption").get<std::string>();
  r.object_category = j.at("object_category").get<std::string>();
  if (j.contains("mask")) {
    RleMask mask;
    mask.width = j.at("mask").at("w").get<int>();
    mask.height = j.at("mask").at("h").get<int>();
    mask.counts = j.at("mask").at("counts").get<std::vector<std::int64_t>>();
    r.mask = std::move(mask);
  }
  if (j.contains("part_category")) r.part_category = j.at("part_category").get<std::string>();
  if (j.contains("similarity")) r.similarity = j.at("similarity").get<double>();
  validate_record(r);
  return r;
}

JsonlSink::JsonlSink(const std::string& path) : path_(path) {}

void JsonlSink::write(const GroundingRecord& record) {
  validate_record(record);
  buffer_ += record_to_json(record);
  buffer_ += '\n';
}

void JsonlSink::flush() {
  std::ofstream out(path_, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write sink file " + path_);
  out << buffer_;
}

std::string EngineReport::to_json() const {
  json j{{"images", images},
         {"image_failures", image_failures},
         {"object_records", object_records},
         {"part_records", part_records},
         {"branch_failures", branch_failures},
         {"kept", kept},
         {"dropped", dropped_by_reason}};
  return j.dump(2) + "\n";
}

EngineReport run_engine(const std::vector<EngineInput>& images, const BackendSuite& backends,
                        JsonlSink& sink) {
  backends.require_complete();
  EngineReport report;
  for (const auto& input : images) {
    GrayImage image;
    try {
      image = read_gray(input.image_ref);
    } catch (const std::exception&) {
      ++report.image_failures;
      continue;
    }
    ++report.images;

    auto objects = object_branch(image, input.image_ref, input.boxes, backends);
    std::vector<std::string> categories;
    for (const auto& box : input.boxes)
      if (std::find(categories.begin(), categories.end(), box.category) == categories.end())
        categories.push_back(box.category);
    auto parts = part_branch(image, input.image_ref, categories, backends);

    report.object_records += static_cast<long>(objects.records.size());
    report.part_records += static_cast<long>(parts.records.size());
    report.branch_failures += objects.failed + parts.failed;

    std::vector<GroundingRecord> all = std::move(objects.records);
    for (auto& r : parts.records) all.push_back(std::move(r));
    auto filtered = filter_records(std::move(all), image, backends);
    for (const auto& r : filtered.kept) sink.write(r);
    report.kept += static_cast<long>(filtered.kept.size());
    for (const auto& d : filtered.dropped) ++report.dropped_by_reason[d.reason];
  }
  sink.flush();
  return report;
}

std::vector<EngineInput> load_engine_inputs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open image list " + path);
  std::string base;
  if (auto slash = path.find_last_of('/'); slash != std::string::npos)
    base = path.substr(0, slash + 1);
  std::vector<EngineInput> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw SchemaError(std::string("invalid JSON in image list: ") + e.what(), line_no);
    }
    EngineInput input;
    std::string ref = j.at("image").get<std::string>();
    input.image_ref = (!ref.empty() && ref.front() == '/') ? ref : base + ref;
    if (j.contains("boxes"))
      for (const auto& bj : j.at("boxes")) {
        const auto& b = bj.at("bbox");
        input.boxes.push_back(BoxedObject{BBox{b.at(0).get<double>(), b.at(1).get<double>(),
                                               b.at(2).get<double>(), b.at(3).get<double>()},
                                          bj.at("category").get<std::string>()});
      }
    out.push_back(std::move(input));
  }
  return out;
}

// ---- stubs -------------------------------------------------------------------

std::string echo_caption(const NormalizedBBox& box, const CaptionContext& ctx) {
  std::ostringstream out;
  if (ctx.granularity == RecordGranularity::part)
    out << "part:" << part_caption(*ctx.part_category, ctx.object_category);
  else
    out << "obj:" << ctx.object_category;
  out << "@" << box.x0 << "," << box.y0 << "," << box.x1 << "," << box.y1;
  return out.str();
}

BackendSuite make_stub_suite(const std::map<std::string, std::vector<std::string>>& decomposition,
                             const std::map<std::string, double>& score_table,
                             double default_score) {
  BackendSuite suite;
  suite.captioner = [](const GrayImage&, const NormalizedBBox& box, const CaptionContext& ctx) {
    return echo_caption(box, ctx);
  };
  suite.promptable_segmenter = [](const GrayImage& image, const BBox& b) {
    return fill_box(static_cast<int>(image.cols()), static_cast<int>(image.rows()), b);
  };
  suite.part_segmenter = [](const GrayImage& image, const std::vector<std::string>& vocabulary) {
    const int w = static_cast<int>(image.cols());
    const int h = static_cast<int>(image.rows());
    std::vector<PartDetection> out;
    for (const auto& tag : vocabulary) {
      const std::uint64_t hash = fnv1a(tag.data(), tag.size());
      const int x0 = static_cast<int>(hash % static_cast<std::uint64_t>(w / 2));
      const int y0 = static_cast<int>((hash >> 8) % static_cast<std::uint64_t>(h / 2));
      const int x1 = x0 + 1 + static_cast<int>((hash >> 16) % static_cast<std::uint64_t>(w - x0 - 1));
      const int y1 = y0 + 1 + static_cast<int>((hash >> 24) % static_cast<std::uint64_t>(h - y0 - 1));
      const BBox box{double(x0), double(y0), double(x1), double(y1)};
      out.push_back(PartDetection{tag, fill_box(w, h, box), box});
    }
    return out;
  };
  suite.decomposer = [decomposition](const std::vector<std::string>& categories) {
    std::vector<std::string> parts;
    for (const auto& c : categories) {
      auto it = decomposition.find(c);
      if (it == decomposition.end()) continue;
      for (const auto& p : it->second)
        if (std::find(parts.begin(), parts.end(), p) == parts.end()) parts.push_back(p);
    }
    return parts;
  };
  suite.scorer = [score_table, default_score](const GrayImage&, const std::string& caption) {
    auto it = score_table.find(caption);
    return it == score_table.end() ? default_score : it->second;
  };
  return suite;
}

// ---- process backends ---------------------------------------------------------

ProcessBackend::ProcessBackend(const std::string& command) {
  int to_child[2], from_child[2];
  if (pipe(to_child) != 0 || pipe(from_child) != 0)
    throw BackendError("cannot create pipes for backend process");
  const pid_t pid = fork();
  if (pid < 0) throw BackendError("cannot fork backend process");
  if (pid == 0) {
    dup2(to_child[0], STDIN_FILENO);
    dup2(from_child[1], STDOUT_FILENO);
    close(to_child[0]);
    close(to_child[1]);
    close(from_child[0]);
    close(from_child[1]);
    execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  close(to_child[0]);
  close(from_child[1]);
  child_pid_ = pid;
  to_child_ = to_child[1];
  from_child_ = from_child[0];
}

ProcessBackend::~ProcessBackend() {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  if (child_pid_ > 0) waitpid(child_pid_, nullptr, 0);
}

std::string ProcessBackend::call(const std::string& request_json) {
  std::string line = request_json;
  line += '\n';
  std::size_t written = 0;
  while (written < line.size()) {
    const ssize_t n = ::write(to_child_, line.data() + written, line.size() - written);
    if (n <= 0) throw BackendError("backend process pipe closed while writing");
    written += static_cast<std::size_t>(n);
  }
  std::string response;
  char ch;
  while (true) {
    const ssize_t n = ::read(from_child_, &ch, 1);
    if (n <= 0) throw BackendError("backend process closed the pipe");
    if (ch == '\n') break;
    response.push_back(ch);
  }
  json j;
  try {
    j = json::parse(response);
  } catch (const std::exception& e) {
    throw BackendError(std::string("backend returned invalid JSON: ") + e.what());
  }
  if (!j.value("ok", false))
    throw BackendError("backend error: " + j.value("error", std::string("unknown")));
  return j.at("result").dump();
}

namespace {

json image_to_json(const GrayImage& image) {
  static const char* alphabet =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string raw;
  raw.reserve(static_cast<std::size_t>(image.size()));
  for (Eigen::Index r = 0; r < image.rows(); ++r)
    for (Eigen::Index c = 0; c < image.cols(); ++c)
      raw.push_back(static_cast<char>(image(r, c)));
  std::string b64;
  for (std::size_t i = 0; i < raw.size(); i += 3) {
    std::uint32_t chunk = 0;
    int have = 0;
    for (int k = 0; k < 3; ++k)
      if (i + k < raw.size()) {
        chunk |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(raw[i + k])) << (16 - 8 * k);
        ++have;
      }
    for (int k = 0; k < 4; ++k)
      b64.push_back(k <= have ? alphabet[(chunk >> (18 - 6 * k)) & 63] : '=');
  }
  return json{{"w", image.cols()}, {"h", image.rows()}, {"data_b64", b64}};
}

RleMask rle_from_result(const json& j) {
  RleMask mask;
  mask.width = j.at("w").get<int>();
  mask.height = j.at("h").get<int>();
  mask.counts = j.at("counts").get<std::vector<std::int64_t>>();
  validate_rle(mask);
  return mask;
}

}  // namespace

BackendSuite load_backend_suite(const std::string& config_path) {
  std::ifstream in(config_path);
  if (!in) throw IoError("cannot open backend config " + config_path);
  json config = json::parse(in);

  BackendSuite suite;
  std::map<std::string, std::vector<std::string>> decomposition;
  std::map<std::string, double> score_table;
  double default_score = 0.75;

  auto entry = [&](const char* name) -> const json& {
    if (!config.contains(name)) throw BackendError(std::string("missing backend: ") + name);
    return config.at(name);
  };
  auto kind_of = [](const json& j) { return j.value("kind", std::string()); };

  // captioner
  {
    const json& j = entry("captioner");
    const auto kind = kind_of(j);
    if (kind == "echo") {
      suite.captioner = [](const GrayImage&, const NormalizedBBox& box, const CaptionContext& ctx) {
        return echo_caption(box, ctx);
      };
    } else if (kind == "process") {
      auto proc = std::make_shared<ProcessBackend>(j.at("command").get<std::string>());
      suite.captioner = [proc](const GrayImage& image, const NormalizedBBox& box,
                               const CaptionContext& ctx) {
        json req{{"op", "caption"},
                 {"image", image_to_json(image)},
                 {"bbox", nbox_json(box)},
                 {"context",
                  {{"granularity", to_string(ctx.granularity)},
                   {"object_category", ctx.object_category}}}};
        if (ctx.part_category) req["context"]["part_category"] = *ctx.part_category;
        return json::parse(proc->call(req.dump())).get<std::string>();
      };
    } else {
      throw BackendError("unknown captioner kind '" + kind + "'");
    }
  }
  // promptable segmenter
  {
    const json& j = entry("promptable_segmenter");
    const auto kind = kind_of(j);
    if (kind == "boxfill") {
      suite.promptable_segmenter = [](const GrayImage& image, const BBox& b) {
        return fill_box(static_cast<int>(image.cols()), static_cast<int>(image.rows()), b);
      };
    } else if (kind == "process") {
      auto proc = std::make_shared<ProcessBackend>(j.at("command").get<std::string>());
      suite.promptable_segmenter = [proc](const GrayImage& image, const BBox& b) {
        json req{{"op", "segment_box"}, {"image", image_to_json(image)}, {"bbox", bbox_json(b)}};
        return rle_decode(rle_from_result(json::parse(proc->call(req.dump()))));
      };
    } else {
      throw BackendError("unknown promptable_segmenter kind '" + kind + "'");
    }
  }
  // part segmenter
  {
    const json& j = entry("part_segmenter");
    const auto kind = kind_of(j);
    if (kind == "hashbox") {
      suite.part_segmenter = make_stub_suite({}, {}).part_segmenter;
    } else if (kind == "process") {
      auto proc = std::make_shared<ProcessBackend>(j.at("command").get<std::string>());
      suite.part_segmenter = [proc](const GrayImage& image,
                                    const std::vector<std::string>& vocabulary) {
        json req{{"op", "segment_parts"}, {"image", image_to_json(image)}, {"vocabulary", vocabulary}};
        std::vector<PartDetection> out;
        for (const auto& dj : json::parse(proc->call(req.dump()))) {
          PartDetection det;
          det.tag = dj.at("tag").get<std::string>();
          const auto& b = dj.at("bbox");
          det.bbox = BBox{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                          b.at(3).get<double>()};
          det.mask = rle_decode(rle_from_result(dj.at("mask")));
          out.push_back(std::move(det));
        }
        return out;
      };
    } else {
      throw BackendError("unknown part_segmenter kind '" + kind + "'");
    }
  }
  // decomposer
  {
    const json& j = entry("decomposer");
    const auto kind = kind_of(j);
    if (kind == "table") {
      if (j.contains("table"))
        decomposition = j.at("table").get<std::map<std::string, std::vector<std::string>>>();
      suite.decomposer = make_stub_suite(decomposition, {}).decomposer;
    } else if (kind == "process") {
      auto proc = std::make_shared<ProcessBackend>(j.at("command").get<std::string>());
      suite.decomposer = [proc](const std::vector<std::string>& categories) {
        json req{{"op", "decompose"}, {"categories", categories}};
        return json::parse(proc->call(req.dump())).get<std::vector<std::string>>();
      };
    } else {
      throw BackendError("unknown decomposer kind '" + kind + "'");
    }
  }
  // scorer
  {
    const json& j = entry("scorer");
    const auto kind = kind_of(j);
    if (kind == "table") {
      if (j.contains("table")) score_table = j.at("table").get<std::map<std::string, double>>();
      default_score = j.value("default", 0.75);
      suite.scorer = make_stub_suite({}, score_table, default_score).scorer;
    } else if (kind == "hash") {
      suite.scorer = [](const GrayImage& crop, const std::string& caption) {
        std::uint64_t h = 1469598103934665603ull;
        for (Eigen::Index r = 0; r < crop.rows(); ++r)
          for (Eigen::Index c = 0; c < crop.cols(); ++c) {
            h ^= crop(r, c);
            h *= 1099511628211ull;
          }
        h = fnv1a(caption.data(), caption.size(), h);
        return static_cast<double>(h % 100000ull) / 100000.0;
      };
    } else if (kind == "process") {
      auto proc = std::make_shared<ProcessBackend>(j.at("command").get<std::string>());
      suite.scorer = [proc](const GrayImage& crop, const std::string& caption) {
        json req{{"op", "score"}, {"image", image_to_json(crop)}, {"caption", caption}};
        return json::parse(proc->call(req.dump())).get<double>();
      };
    } else {
      throw BackendError("unknown scorer kind '" + kind + "'");
    }
  }
  return suite;
}

}  // namespace mres::engine
