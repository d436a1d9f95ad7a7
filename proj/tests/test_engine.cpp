#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include "mres/engine.hpp"
#include "mres/errors.hpp"
#include "test_util.hpp"

using namespace mres;
using namespace mres::engine;

namespace {

GrayImage flat_image(int w = 32, int h = 32, std::uint8_t v = 100) {
  return GrayImage::Constant(h, w, v);
}

BackendSuite default_suite() {
  return make_stub_suite(
      {{"dog", {"head", "leg", "tail"}}, {"cat", {"head", "tail"}}, {"car", {"wheel", "door"}}},
      {});
}

}  // namespace

TEST_CASE("object branch fans out one record per box") {
  const auto image = flat_image();
  const auto suite = default_suite();
  const std::vector<BoxedObject> boxes{{BBox{4, 4, 20, 20}, "dog"},
                                       {BBox{8, 8, 28, 24}, "cat"},
                                       {BBox{0, 0, 32, 32}, "car"}};
  const auto result = object_branch(image, "img.png", boxes, suite);
  REQUIRE(result.records.size() == 3);
  CHECK(result.failed == 0);
  for (const auto& r : result.records) {
    CHECK(r.granularity == RecordGranularity::object);
    CHECK(r.mask.has_value());
    CHECK(!r.caption.empty());
  }
  // echo captions are byte-exact: (4,4,20,20) on 32x32 normalizes to 125..624
  CHECK(result.records[0].caption == "obj:dog@125,125,624,624");
  CHECK(result.records[1].caption == "obj:cat@250,250,874,749");
  CHECK(result.records[2].caption == "obj:car@0,0,999,999");
  CHECK(result.records[2].norm_bbox == kFullImageBox);

  // the segmenter stub fills the prompt box
  const BinaryMask mask = rle_decode(*result.records[0].mask);
  CHECK(mask(4, 4) == 1);
  CHECK(mask(19, 19) == 1);
  CHECK(mask(3, 4) == 0);
  CHECK(mask(20, 25) == 0);
}

TEST_CASE("object branch isolates failing backends per record") {
  const auto image = flat_image();
  auto suite = default_suite();
  suite.promptable_segmenter = [](const GrayImage& img, const BBox& b) -> BinaryMask {
    if (b.x0 < 1.0) throw BackendError("segmenter refused the box");
    BinaryMask m = BinaryMask::Zero(img.rows(), img.cols());
    m(0, 0) = 1;
    return m;
  };
  const std::vector<BoxedObject> boxes{{BBox{0, 0, 8, 8}, "dog"},   // fails
                                       {BBox{4, 4, 20, 20}, "cat"},
                                       {BBox{8, 8, 28, 24}, "car"}};
  const auto result = object_branch(image, "img.png", boxes, suite);
  CHECK(result.records.size() == 2);
  CHECK(result.failed == 1);
  REQUIRE(result.failures.size() == 1);
  CHECK(result.failures[0].find("dog") != std::string::npos);
}

TEST_CASE("part branch decomposes, deduplicates and captions parts") {
  const auto image = flat_image();
  const auto suite = default_suite();

  // dog and cat share head/tail: the vocabulary keeps first-seen order
  const auto vocab = decompose_vocabulary({"dog", "cat"}, suite);
  CHECK(vocab == std::vector<std::string>{"head", "leg", "tail"});
  CHECK(decompose_vocabulary({"cat", "car"}, suite) ==
        std::vector<std::string>{"head", "tail", "wheel", "door"});
  CHECK(decompose_vocabulary({"dog"}, suite) == std::vector<std::string>{"head", "leg", "tail"});

  const auto result = part_branch(image, "img.png", {"dog", "cat"}, suite);
  REQUIRE(result.records.size() == 3);
  for (const auto& r : result.records) {
    CHECK(r.granularity == RecordGranularity::part);
    REQUIRE(r.part_category.has_value());
    CHECK(r.mask.has_value());
    // caption carries the "<part> of <object>" phrase
    CHECK(r.caption.find(*r.part_category + " of " + r.object_category) != std::string::npos);
  }
  CHECK(result.records[0].object_category == "dog");  // head first seen under dog

  const auto empty = part_branch(image, "img.png", {}, suite);
  CHECK(empty.records.empty());
}

TEST_CASE("filter keeps strictly above 0.5 and partitions its input") {
  const auto image = flat_image();
  auto suite = default_suite();
  suite.scorer = [](const GrayImage&, const std::string& caption) {
    if (caption == "a") return 0.51;
    if (caption == "b") return 0.50;
    if (caption == "c") throw BackendError("scorer offline");
    return 0.9;
  };
  auto make = [](const std::string& caption, double x1 = 8.0) {
    GroundingRecord r;
    r.image_ref = "img.png";
    r.caption = caption;
    r.object_category = "dog";
    r.bbox = BBox{0, 0, x1, 8};
    r.norm_bbox = NormalizedBBox{0, 0, 250, 250};
    return r;
  };
  std::vector<GroundingRecord> records{make("a"), make("b"), make("c"), make("d"),
                                       make("degenerate", 0.0)};
  const auto result = filter_records(records, image, suite);
  CHECK(result.kept.size() + result.dropped.size() == records.size());
  REQUIRE(result.kept.size() == 2);
  CHECK(result.kept[0].caption == "a");  // 0.51 survives
  CHECK(result.kept[0].similarity == 0.51);
  CHECK(result.kept[1].caption == "d");
  REQUIRE(result.dropped.size() == 3);
  CHECK(result.dropped[0].reason == "low_similarity");  // 0.50 exactly is dropped
  CHECK(result.dropped[0].record.similarity == 0.50);
  CHECK(result.dropped[1].reason == "scorer_error");
  CHECK(result.dropped[2].reason == "invalid_box");
}

TEST_CASE("grounding records round-trip through JSON and validate") {
  GroundingRecord r;
  r.image_ref = "img.png";
  r.granularity = RecordGranularity::part;
  r.bbox = BBox{1.5, 2.0, 10.0, 12.0};
  r.norm_bbox = NormalizedBBox{47, 62, 312, 375};
  r.mask = RleMask{4, 4, {8, 8}};
  r.caption = "part:head of dog@47,62,312,375";
  r.object_category = "dog";
  r.part_category = "head";
  r.similarity = 0.8;

  const auto parsed = record_from_json(record_to_json(r));
  CHECK(parsed.image_ref == r.image_ref);
  CHECK(parsed.granularity == r.granularity);
  CHECK(parsed.caption == r.caption);
  CHECK(parsed.part_category == r.part_category);
  CHECK(parsed.mask->counts == r.mask->counts);
  CHECK(parsed.similarity == r.similarity);

  GroundingRecord bad = r;
  bad.part_category.reset();
  CHECK_THROWS_AS(record_from_json(record_to_json(bad)), SchemaError);

  GroundingRecord image_level = r;
  image_level.granularity = RecordGranularity::image;
  image_level.part_category = "head";
  CHECK_THROWS_AS(record_from_json(record_to_json(image_level)), SchemaError);
  image_level.norm_bbox = kFullImageBox;  // image records carry the full box
  CHECK_NOTHROW(record_from_json(record_to_json(image_level)));
}

namespace {

struct EngineFixture {
  test::TempDir dir;
  std::vector<EngineInput> inputs;

  EngineFixture() {
    const std::vector<std::pair<std::string, std::string>> pairs = {
        {"dog", "cat"}, {"cat", "car"}, {"dog", "car"}};
    for (int i = 0; i < 10; ++i) {
      GrayImage img(32, 32);
      for (Eigen::Index r = 0; r < 32; ++r)
        for (Eigen::Index c = 0; c < 32; ++c)
          img(r, c) = static_cast<std::uint8_t>((r * 8 + c * 3 + i * 17) % 256);
      const std::string path = dir.file("img_" + std::to_string(i) + ".png");
      write_png_gray(path, img);
      EngineInput input;
      input.image_ref = path;
      input.boxes = {{BBox{4.0 + i, 4, 20, 20}, pairs[static_cast<std::size_t>(i % 3)].first},
                     {BBox{8, 8.0 + i, 28, 24}, pairs[static_cast<std::size_t>(i % 3)].second}};
      inputs.push_back(std::move(input));
    }
  }
};

}  // namespace

TEST_CASE("engine end-to-end totals match the hand-computed fan-out") {
  EngineFixture fx;
  const auto suite = default_suite();
  JsonlSink sink(fx.dir.file("records.jsonl"));
  const auto report = run_engine(fx.inputs, suite, sink);

  // 10 images x 2 boxes; vocabularies: dog+cat -> 3 parts, cat+car -> 4, dog+car -> 5
  CHECK(report.images == 10);
  CHECK(report.object_records == 20);
  CHECK(report.part_records == 4 * 3 + 3 * 4 + 3 * 5);
  CHECK(report.branch_failures == 0);
  CHECK(report.kept == 59);  // default scores pass the filter
  CHECK(report.dropped_by_reason.empty());

  // every emitted line parses and validates
  std::ifstream in(fx.dir.file("records.jsonl"));
  std::string line;
  long lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    CHECK_NOTHROW(record_from_json(line));
  }
  CHECK(lines == report.kept);

  // rerun is byte-identical
  JsonlSink sink2(fx.dir.file("records2.jsonl"));
  run_engine(fx.inputs, suite, sink2);
  CHECK(test::read_text(fx.dir.file("records.jsonl")) ==
        test::read_text(fx.dir.file("records2.jsonl")));

  // permuting the image list permutes records without changing their content
  auto reversed = fx.inputs;
  std::reverse(reversed.begin(), reversed.end());
  JsonlSink sink3(fx.dir.file("records3.jsonl"));
  const auto report3 = run_engine(reversed, suite, sink3);
  CHECK(report3.kept == report.kept);
  auto lines_of = [](const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string l;
    while (std::getline(in, l)) out.push_back(l);
    std::sort(out.begin(), out.end());
    return out;
  };
  CHECK(lines_of(test::read_text(fx.dir.file("records.jsonl"))) ==
        lines_of(test::read_text(fx.dir.file("records3.jsonl"))));
}

TEST_CASE("engine handles empty input and missing images") {
  const auto suite = default_suite();
  test::TempDir dir;
  JsonlSink sink(dir.file("out.jsonl"));
  const auto empty = run_engine({}, suite, sink);
  CHECK(empty.images == 0);
  CHECK(empty.kept == 0);

  EngineInput missing;
  missing.image_ref = dir.file("nope.png");
  JsonlSink sink2(dir.file("out2.jsonl"));
  const auto report = run_engine({missing}, suite, sink2);
  CHECK(report.image_failures == 1);
  CHECK(report.images == 0);

  BackendSuite incomplete = suite;
  incomplete.scorer = nullptr;
  CHECK_THROWS_WITH_AS(run_engine({}, incomplete, sink2), "missing backend: scorer", BackendError);
}

TEST_CASE("process backend speaks the stdio JSON protocol") {
  const char* bin = std::getenv("MRES_STUB_BACKEND");
  REQUIRE_MESSAGE(bin != nullptr, "MRES_STUB_BACKEND must point at the helper binary");

  ProcessBackend proc(bin);
  const std::string ok = proc.call(R"({"op":"decompose","categories":["dog","cat"]})");
  CHECK(ok == R"(["dog-part","cat-part"])");
  CHECK_THROWS_AS(proc.call(R"({"op":"bogus"})"), BackendError);
  // the peer stays usable after an error response
  CHECK(proc.call(R"({"op":"score","image":{"w":1,"h":1,"data_b64":"AA=="},"caption":"x"})") ==
        "0.9");
}

TEST_CASE("backend config wires process backends end to end") {
  const char* bin = std::getenv("MRES_STUB_BACKEND");
  REQUIRE(bin != nullptr);
  test::TempDir dir;
  const std::string config = std::string(R"({
    "captioner": {"kind": "process", "command": ")") + bin + R"("},
    "promptable_segmenter": {"kind": "boxfill"},
    "part_segmenter": {"kind": "process", "command": ")" + bin + R"("},
    "decomposer": {"kind": "process", "command": ")" + bin + R"("},
    "scorer": {"kind": "process", "command": ")" + bin + R"("}
  })";
  test::write_text(dir.file("backends.json"), config);
  const auto suite = load_backend_suite(dir.file("backends.json"));
  suite.require_complete();

  const auto image = flat_image(8, 8);
  CaptionContext ctx;
  ctx.object_category = "dog";
  CHECK(suite.captioner(image, NormalizedBBox{1, 2, 3, 4}, ctx) == "proc:dog@1,2,3,4");
  CHECK(suite.decomposer({"dog"}) == std::vector<std::string>{"dog-part"});
  CHECK(suite.scorer(image, "anything") == 0.9);
  const auto parts = suite.part_segmenter(image, {"head", "tail"});
  REQUIRE(parts.size() == 2);
  CHECK(parts[0].tag == "head");
  CHECK((parts[0].mask == 1).all());

  test::write_text(dir.file("missing.json"), R"({"captioner": {"kind": "echo"}})");
  CHECK_THROWS_WITH_AS(load_backend_suite(dir.file("missing.json")),
                       "missing backend: promptable_segmenter", BackendError);
}
