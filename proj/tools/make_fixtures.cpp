// Regenerates the bundled fixture data (benchmark splits, toy training set,
// engine inputs). Deterministic: rerunning produces byte-identical files.
#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "mres/dataset.hpp"
#include "mres/engine.hpp"
#include "mres/image_io.hpp"
#include "mres/synthetic.hpp"

namespace {

using namespace mres;
using nlohmann::json;

struct Rect {
  int x0, y0, w, h;
};

Rect image_rect(int i) {
  return Rect{2 + (i % 4) * 3, 3 + (i % 3) * 4, 10 + (i % 3) * 2, 8 + (i % 4) * 2};
}

GrayImage render_image(int i) {
  GrayImage img = GrayImage::Constant(32, 32, 30);
  const Rect r = image_rect(i);
  img.block(r.y0, r.x0, r.h, r.w).setConstant(200);
  return img;
}

BinaryMask rect_mask(const Rect& r, const std::string& part) {
  BinaryMask m = BinaryMask::Zero(32, 32);
  Rect p = r;
  if (part == "top" || part == "inner edge") p.h = r.h / 2;
  if (part == "bottom") {
    p.y0 = r.y0 + r.h / 2;
    p.h = r.h - r.h / 2;
  }
  if (part == "left side") p.w = r.w / 2;
  if (part == "right side") {
    p.x0 = r.x0 + r.w / 2;
    p.w = r.w - r.w / 2;
  }
  m.block(p.y0, p.x0, p.h, p.w).setConstant(1);
  return m;
}

struct SampleSpec {
  const char* id;
  const char* expr;
  const char* object_cat;
  const char* part_cat;  // nullptr for object granularity
  int image;
};

ReferringSample build_sample(const SampleSpec& spec) {
  ReferringSample s;
  s.sample_id = spec.id;
  char name[32];
  std::snprintf(name, sizeof(name), "images/img_%03d.png", spec.image);
  s.image_ref = name;
  s.image_w = 32;
  s.image_h = 32;
  s.expression = spec.expr;
  s.granularity = spec.part_cat ? Granularity::part : Granularity::object;
  s.object_category = spec.object_cat;
  if (spec.part_cat) s.part_category = spec.part_cat;
  s.mask = rle_encode(rect_mask(image_rect(spec.image), spec.part_cat ? spec.part_cat : ""));
  return s;
}

// 12 object + 8 part references, 100 words total (average length 5.0).
const std::vector<SampleSpec> kValSpecs = {
    {"val_obj_00", "the bright box", "box", nullptr, 0},
    {"val_obj_01", "the dark box near the corner", "box", nullptr, 1},
    {"val_obj_02", "a small disk", "disk", nullptr, 2},
    {"val_obj_03", "the large disk in the middle", "disk", nullptr, 3},
    {"val_obj_04", "the wide bar", "bar", nullptr, 4},
    {"val_obj_05", "the thin bar by the edge", "bar", nullptr, 5},
    {"val_obj_06", "the bright ring", "ring", nullptr, 6},
    {"val_obj_07", "a dark ring near the border", "ring", nullptr, 7},
    {"val_obj_08", "the leftmost box", "box", nullptr, 8},
    {"val_obj_09", "the box closest to the center", "box", nullptr, 9},
    {"val_obj_10", "a very bright disk in full view", "disk", nullptr, 0},
    {"val_obj_11", "the tall bar standing upright", "bar", nullptr, 1},
    {"val_part_00", "top of the bright box", "box", "top", 0},
    {"val_part_01", "bottom of the dark box", "box", "bottom", 1},
    {"val_part_02", "left side of the small disk", "disk", "left side", 2},
    {"val_part_03", "right side of the large disk", "disk", "right side", 3},
    {"val_part_04", "top of the wide bar", "bar", "top", 4},
    {"val_part_05", "bottom of the thin bar", "bar", "bottom", 5},
    {"val_part_06", "top of the bright ring", "ring", "top", 6},
    {"val_part_07", "inner edge of the dark ring", "ring", "inner edge", 7},
};

const std::vector<SampleSpec> kTestASpecs = {
    {"testA_obj_0", "the bright box", "box", nullptr, 0},
    {"testA_obj_1", "the small disk", "disk", nullptr, 1},
    {"testA_obj_2", "the wide bar", "bar", nullptr, 2},
    {"testA_obj_3", "the dark ring", "ring", nullptr, 3},
    {"testA_part_0", "top of the bright box", "box", "top", 0},
    {"testA_part_1", "bottom of the small disk", "disk", "bottom", 1},
};

const std::vector<SampleSpec> kTestBSpecs = {
    {"testB_obj_0", "the leftmost box", "box", nullptr, 4},
    {"testB_obj_1", "the bright disk", "disk", nullptr, 5},
    {"testB_obj_2", "the thin bar", "bar", nullptr, 6},
    {"testB_part_0", "top of the leftmost box", "box", "top", 4},
    {"testB_part_1", "left side of the bright disk", "disk", "left side", 5},
    {"testB_part_2", "bottom of the thin bar", "bar", "bottom", 6},
};

void write_benchmark(const std::filesystem::path& root) {
  std::filesystem::create_directories(root / "images");
  for (int i = 0; i < 10; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%03d.png", i);
    write_png_gray((root / "images" / name).string(), render_image(i));
  }
  auto write_split = [&](const char* name, const std::vector<SampleSpec>& specs) {
    BenchmarkSplit split;
    split.name = name;
    for (const auto& spec : specs) split.samples.push_back(build_sample(spec));
    save_benchmark(root.string(), split);
  };
  write_split("val", kValSpecs);
  write_split("testA", kTestASpecs);
  write_split("testB", kTestBSpecs);
}

void write_toy(const std::filesystem::path& root) {
  std::filesystem::create_directories(root / "images");
  const ModelConfig config = tiny_config();
  BenchmarkSplit split;
  split.name = "train";

  const auto shapes = synthetic::toy_shapes();
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const BinaryMask obj_grid = synthetic::grid_of(shapes[i], config.patches_per_side());
    const BinaryMask part_grid =
        synthetic::grid_of(synthetic::top_half(shapes[i]), config.patches_per_side());
    const ProbMaskD field = synthetic::grid_field<double>(obj_grid, config.image_size);

    char name[32];
    std::snprintf(name, sizeof(name), "shape_%zu.png", i);
    GrayImage img(config.image_size, config.image_size);
    for (Eigen::Index r = 0; r < img.rows(); ++r)
      for (Eigen::Index c = 0; c < img.cols(); ++c)
        img(r, c) = static_cast<std::uint8_t>(std::lround((0.15 + 0.7 * field(r, c)) * 255.0));
    write_png_gray((root / "images" / name).string(), img);

    ReferringSample obj;
    obj.sample_id = "toy_obj_" + std::to_string(i);
    obj.image_ref = std::string("images/") + name;
    obj.image_w = config.image_size;
    obj.image_h = config.image_size;
    obj.expression = synthetic::kToyObjectExpression;
    obj.granularity = Granularity::object;
    obj.object_category = "block";
    obj.mask = rle_encode(
        synthetic::grid_mask<double>(obj_grid, config.image_size, config.mask_threshold));
    split.samples.push_back(obj);

    ReferringSample part = obj;
    part.sample_id = "toy_part_" + std::to_string(i);
    part.expression = synthetic::kToyPartExpression;
    part.granularity = Granularity::part;
    part.part_category = "top half";
    part.mask = rle_encode(
        synthetic::grid_mask<double>(part_grid, config.image_size, config.mask_threshold));
    split.samples.push_back(part);
  }
  save_benchmark(root.string(), split);
  split.name = "val";  // the overfit protocol evaluates on the training samples
  save_benchmark(root.string(), split);
}

void write_engine(const std::filesystem::path& root) {
  std::filesystem::create_directories(root);
  const std::vector<std::pair<std::string, std::string>> pairs = {
      {"dog", "cat"}, {"cat", "car"}, {"dog", "car"}};

  std::string list;
  std::string pinned_low, pinned_kept;
  for (int i = 0; i < 10; ++i) {
    GrayImage img(32, 32);
    for (Eigen::Index r = 0; r < 32; ++r)
      for (Eigen::Index c = 0; c < 32; ++c)
        img(r, c) = static_cast<std::uint8_t>((r * 8 + c * 3 + i * 17) % 256);
    char name[32];
    std::snprintf(name, sizeof(name), "img_%d.png", i);
    write_png_gray((root / name).string(), img);

    const auto& [cat_a, cat_b] = pairs[static_cast<std::size_t>(i % 3)];
    const engine::BBox box_a{4.0 + i, 4.0, 20.0, 20.0};
    const engine::BBox box_b{8.0, 8.0 + i, 28.0, 24.0};
    json j{{"image", name},
           {"boxes", json::array({json{{"bbox", {box_a.x0, box_a.y0, box_a.x1, box_a.y1}},
                                       {"category", cat_a}},
                                  json{{"bbox", {box_b.x0, box_b.y0, box_b.x1, box_b.y1}},
                                       {"category", cat_b}}})}};
    list += j.dump() + "\n";

    // pin one record exactly at the similarity threshold and one just above
    engine::CaptionContext ctx;
    ctx.object_category = cat_a;
    const std::string caption = engine::echo_caption(engine::normalize_bbox(box_a, 32, 32), ctx);
    if (i == 0) pinned_low = caption;
    if (i == 1) pinned_kept = caption;
  }
  std::ofstream(root / "images.jsonl", std::ios::trunc) << list;

  json backends{
      {"captioner", {{"kind", "echo"}}},
      {"promptable_segmenter", {{"kind", "boxfill"}}},
      {"part_segmenter", {{"kind", "hashbox"}}},
      {"decomposer",
       {{"kind", "table"},
        {"table",
         {{"dog", {"head", "leg", "tail"}}, {"cat", {"head", "tail"}}, {"car", {"wheel", "door"}}}}}},
      {"scorer",
       {{"kind", "table"},
        {"default", 0.75},
        {"table", {{pinned_low, 0.5}, {pinned_kept, 0.51}}}}}};
  std::ofstream(root / "backends.json", std::ios::trunc) << backends.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"regenerate bundled fixture data"};
  std::string out = "data";
  app.add_option("--out", out, "output directory");
  CLI11_PARSE(app, argc, argv);

  const std::filesystem::path root(out);
  write_benchmark(root / "refcocom");
  write_toy(root / "toy");
  write_engine(root / "engine");
  std::cout << "fixtures written under " << root.string() << "\n";
  return 0;
}
