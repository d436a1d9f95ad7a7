#ifndef MRES_ENGINE_HPP
#define MRES_ENGINE_HPP

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mres/image_io.hpp"
#include "mres/mask.hpp"

namespace mres::engine {

/// Box-caption pairs survive filtering only with similarity strictly above this.
inline constexpr double kSimilarityThreshold = 0.5;
/// Normalized box coordinates live in [0, kNormRange].
inline constexpr int kNormRange = 999;

enum class RecordGranularity { image, object, part };

std::string to_string(RecordGranularity g);
RecordGranularity record_granularity_from_string(const std::string& s);

struct BBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

struct NormalizedBBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  friend bool operator==(const NormalizedBBox&, const NormalizedBBox&) = default;
};

/// The whole image as a normalized box.
inline constexpr NormalizedBBox kFullImageBox{0, 0, kNormRange, kNormRange};

struct GroundingRecord {
  std::string image_ref;
  RecordGranularity granularity = RecordGranularity::object;
  BBox bbox;
  NormalizedBBox norm_bbox;
  std::optional<RleMask> mask;
  std::string caption;
  std::string object_category;
  std::optional<std::string> part_category;
  std::optional<double> similarity;
};

/// coord' = round(coord / dim * 999), clamped; the full-image box maps to
/// (0,0),(999,999). Monotone in every coordinate.
NormalizedBBox normalize_bbox(const BBox& b, int image_w, int image_h);

/// Exactly "<part> of <object>".
std::string part_caption(const std::string& part_name, const std::string& object_name);

struct CaptionContext {
  RecordGranularity granularity = RecordGranularity::object;
  std::string object_category;
  std::optional<std::string> part_category;
};

struct PartDetection {
  std::string tag;
  BinaryMask mask;
  BBox bbox;
};

/// Pluggable model backends. Real deployments wire foundation models here;
/// the repo ships deterministic stubs so the pipeline is testable end to end.
struct BackendSuite {
  std::function<std::string(const GrayImage&, const NormalizedBBox&, const CaptionContext&)>
      captioner;
  std::function<BinaryMask(const GrayImage&, const BBox&)> promptable_segmenter;
  std::function<std::vector<PartDetection>(const GrayImage&, const std::vector<std::string>&)>
      part_segmenter;
  std::function<std::vector<std::string>(const std::vector<std::string>&)> decomposer;
  std::function<double(const GrayImage&, const std::string&)> scorer;

  void require_complete() const;  // throws BackendError naming the missing backend
};

struct BoxedObject {
  BBox bbox;
  std::string category;
};

struct BranchResult {
  std::vector<GroundingRecord> records;
  long failed = 0;
  std::vector<std::string> failures;  // human-readable reasons
};

/// One record per input box: mask from the promptable segmenter, caption from
/// the captioner on the normalized box. A failing backend marks that record
/// failed and the branch continues.
BranchResult object_branch(const GrayImage& image, const std::string& image_ref,
                           const std::vector<BoxedObject>& boxes, const BackendSuite& backends);

/// Decomposes categories into a part vocabulary (first-seen order, shared part
/// names deduplicated), segments each part and captions its normalized box.
BranchResult part_branch(const GrayImage& image, const std::string& image_ref,
                         const std::vector<std::string>& object_categories,
                         const BackendSuite& backends);

/// The part vocabulary a set of object categories decomposes to.
std::vector<std::string> decompose_vocabulary(const std::vector<std::string>& object_categories,
                                              const BackendSuite& backends);

struct DroppedRecord {
  GroundingRecord record;
  std::string reason;  // low_similarity | scorer_error | invalid_box
};

struct FilterResult {
  std::vector<GroundingRecord> kept;
  std::vector<DroppedRecord> dropped;
};

/// Scores the caption against the crop and keeps records with similarity
/// strictly greater than 0.5. Every surviving record carries its score.
FilterResult filter_records(std::vector<GroundingRecord> records, const GrayImage& image,
                            const BackendSuite& backends);

struct EngineReport {
  long images = 0;
  long image_failures = 0;
  long object_records = 0;
  long part_records = 0;
  long branch_failures = 0;
  long kept = 0;
  std::map<std::string, long> dropped_by_reason;

  std::string to_json() const;
};

struct EngineInput {
  std::string image_ref;  // path to a PNG/PGM file
  std::vector<BoxedObject> boxes;
};

/// Streams schema-valid GroundingRecord JSON lines.
class JsonlSink {
 public:
  explicit JsonlSink(const std::string& path);
  void write(const GroundingRecord& record);
  void flush();

 private:
  std::string path_;
  std::string buffer_;
};

std::string record_to_json(const GroundingRecord& record);
GroundingRecord record_from_json(const std::string& line);

/// Object branch, part branch, then filtering for every image; per-image
/// failures are isolated and counted.
EngineReport run_engine(const std::vector<EngineInput>& images, const BackendSuite& backends,
                        JsonlSink& sink);

/// `<root>`-relative JSONL list: {"image", "boxes":[{"bbox":[...],"category"}]}.
std::vector<EngineInput> load_engine_inputs(const std::string& path);

// ---- stub + external backends ----------------------------------------------

/// "obj:<category>@x0,y0,x1,y1" / "part:<part> of <object>@x0,y0,x1,y1".
std::string echo_caption(const NormalizedBBox& box, const CaptionContext& ctx);

BackendSuite make_stub_suite(const std::map<std::string, std::vector<std::string>>& decomposition,
                             const std::map<std::string, double>& score_table,
                             double default_score = 0.75);

/// Builds a suite from a JSON config file; "kind": "echo"/"boxfill"/"hashbox"/
/// "table"/"hash" stubs or "process" for a stdio JSON-line peer.
BackendSuite load_backend_suite(const std::string& config_path);

/// One-request-per-line JSON protocol over a child process's stdio.
class ProcessBackend {
 public:
  explicit ProcessBackend(const std::string& command);
  ~ProcessBackend();
  ProcessBackend(const ProcessBackend&) = delete;
  ProcessBackend& operator=(const ProcessBackend&) = delete;

  /// Sends {"op":..., ...} and returns the "result" field of an {"ok":true}
  /// response; throws BackendError on {"ok":false} or protocol failure.
  std::string call(const std::string& request_json);

 private:
  int child_pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
};

}  // namespace mres::engine

#endif  // MRES_ENGINE_HPP
