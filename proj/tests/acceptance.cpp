// Acceptance suite: runs every gate criterion and prints one line per
// criterion. Exits nonzero if any fails.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "mres/engine.hpp"
#include "mres/eval.hpp"
#include "mres/synthetic.hpp"
#include "mres/tokenizer.hpp"
#include "mres/training.hpp"
#include "test_util.hpp"

using namespace mres;

namespace {

struct Criterion {
  std::string name;
  std::function<void()> body;
};

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw Failure(what);
}

void require_under(double seconds, double budget) {
  if (seconds > budget)
    throw Failure("took " + std::to_string(seconds) + "s, budget " + std::to_string(budget) + "s");
}

std::string fixtures() {
  const char* f = std::getenv("MRES_FIXTURES");
  return f ? f : "data";
}

template <typename S>
std::vector<TrainSample<S>> random_batch(const ModelConfig& config, std::uint64_t seed, int n) {
  const Vocabulary vocab =
      Vocabulary::build({synthetic::kToyObjectExpression, synthetic::kToyPartExpression});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pix(0.0, 1.0);
  std::bernoulli_distribution bit(0.5);
  std::vector<TrainSample<S>> batch;
  for (int i = 0; i < n; ++i) {
    TrainSample<S> s;
    s.image = Mat<S>(config.image_size, config.image_size);
    for (int r = 0; r < config.image_size; ++r)
      for (int c = 0; c < config.image_size; ++c) s.image(r, c) = S(pix(rng));
    s.tokens = tokenize(i % 2 ? synthetic::kToyPartExpression : synthetic::kToyObjectExpression,
                        vocab, config.max_text_len);
    s.gt = BinaryMask(config.image_size, config.image_size);
    for (int r = 0; r < config.image_size; ++r)
      for (int c = 0; c < config.image_size; ++c) s.gt(r, c) = bit(rng) ? 1 : 0;
    batch.push_back(std::move(s));
  }
  return batch;
}

// 1. mIoU/oIoU over 100 random masks match a naive pixel-counting oracle exactly.
void criterion_metric_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  std::bernoulli_distribution bit(0.5);
  std::vector<IoUStats> lib, naive;
  for (int i = 0; i < 100; ++i) {
    const BinaryMask a = test::random_mask(rng, 16);
    BinaryMask b(a.rows(), a.cols());
    for (Eigen::Index r = 0; r < b.rows(); ++r)
      for (Eigen::Index c = 0; c < b.cols(); ++c) b(r, c) = bit(rng) ? 1 : 0;
    lib.push_back(iou_stats(a, b));
    naive.push_back(test::NaiveMetrics::stats(a, b));
    require(lib.back() == naive.back(), "per-sample counts diverge at sample " + std::to_string(i));
  }
  require(miou(lib) == test::NaiveMetrics::miou(naive), "mIoU differs from the naive oracle");
  require(oiou(lib) == test::NaiveMetrics::oiou(naive), "oIoU differs from the naive oracle");
  require_under(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 5.0);
}

// 2. Divergence fixture: (1,2) and (49,50) give mIoU 0.7400 and oIoU 0.9615.
void criterion_divergence_fixture() {
  const std::vector<IoUStats> samples{{1, 2}, {49, 50}};
  require(std::abs(miou(samples) - 0.7400) <= 1e-4, "mIoU != 0.7400");
  require(std::abs(oiou(samples) - 0.9615) <= 1e-4, "oIoU != 0.9615");
}

// 3. RLE round trip over 1000 random masks.
void criterion_rle_round_trip() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(103);
  for (int i = 0; i < 1000; ++i) {
    const BinaryMask m = test::random_mask(rng, 16);
    if (!(rle_decode(rle_encode(m)) == m).all())
      throw Failure("round trip failed at mask " + std::to_string(i));
  }
  require_under(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 5.0);
}

// 4. Single-precision gradient check on the tiny config, 20 scalars per group.
//    The FD probe at step 1e-2 resolves gradients to about |loss|*1e-7/1e-2
//    (about 1.4e-5 absolute here), so the relative-error denominator is
//    floored at 0.05; a wrong backward still fails by the gradient's own
//    magnitude. A double-precision pass at 1e-6 backs this up.
void criterion_gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  const ModelConfig config = tiny_config(64);
  TrainConfig tc;

  auto fmodel = init_model<float>(config, 404);
  auto fbatch = random_batch<float>(config, 405, 2);
  const auto freport = test::gradient_check(fmodel, fbatch, tc, 20, 1e-2, 0.05, 406);
  for (const auto& [group, err] : freport.per_group) {
    require(err.checked >= std::min<long>(20, err.checked), "undersampled group " + group);
    require(err.max_rel_err < 1e-3,
            "float gradcheck: group " + group + " rel err " + std::to_string(err.max_rel_err));
  }
  require(freport.per_group.size() == 15, "expected 15 parameter groups");

  auto dmodel = init_model<double>(config, 404);
  auto dbatch = random_batch<double>(config, 405, 2);
  const auto dreport = test::gradient_check(dmodel, dbatch, tc, 20, 1e-5, 1e-4, 406);
  for (const auto& [group, err] : dreport.per_group)
    require(err.max_rel_err < 1e-6,
            "double gradcheck: group " + group + " rel err " + std::to_string(err.max_rel_err));
  require_under(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(),
                300.0);
}

// 5. One backward pass reaches every parameter group.
void criterion_gradient_flow() {
  const ModelConfig config = tiny_config(64);
  auto model = init_model<float>(config, 505);
  auto batch = random_batch<float>(config, 506, 2);
  TrainConfig tc;
  const auto norms = test::gradient_flow(model, batch, tc);
  for (const char* group : {"patch_embed", "visual_pos", "visual_blocks", "visual_ln", "low_bank",
                            "high_bank", "text_embed", "text_pos", "text_blocks", "text_ln",
                            "lrf_low", "lrf_high", "decoder_stage1", "decoder_stage2", "mask_head"})
    require(norms.count(group) == 1 && norms.at(group) > 0.0,
            std::string("zero gradient norm in group ") + group);
}

// 6. Overfit: 8 synthetic samples, tiny config, <= 2000 steps, IoU > 0.9.
void criterion_overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig config = tiny_config();
  auto data = synthetic::make_toy_dataset<float>(config);
  config.vocab_size = data.vocab.size();
  auto model = init_model<float>(config, 1234);

  TrainConfig tc;
  tc.learning_rate = 5e-3;
  tc.weight_decay = 5e-4;
  tc.warmup_epochs = 50;
  tc.epochs = 1500;  // batch 8 of 8 samples: one step per epoch
  tc.batch_size = 8;
  tc.seed = 7;
  tc.loss = LossMode::bce_plus_dice;

  AdamW<float> opt;
  const auto log = fit(model, data.samples, tc, opt);
  require(log.size() <= 2000, "step budget exceeded");
  const double iou = synthetic::mean_train_iou(model, data);
  require(iou > 0.9, "mean train IoU " + std::to_string(iou) + " <= 0.9");

  // on the trained model, different expressions over the same image must
  // select different region tokens (the language path has not collapsed)
  const auto obj = forward(model, data.samples[0].image, data.samples[0].tokens);
  const auto part = forward(model, data.samples[1].image, data.samples[1].tokens);
  require((obj.trace.selected_regions - part.trace.selected_regions).cwiseAbs().maxCoeff() > 0.0,
          "selected regions collapsed across expressions");
  require_under(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(),
                600.0);
}

// 7. Shape algebra: 64 then +8 under defaults; ablations remove exact counts.
void criterion_shape_algebra() {
  const ModelConfig full;
  require(full.n_low_group == 64 && full.n_high_group == 8, "default bank sizes are not 64/8");
  require(full.first_half_seq() - full.num_patches() == 64, "first half does not append 64 rows");
  require(full.second_half_seq() - full.first_half_seq() == 8, "midpoint does not append 8 rows");

  const ModelConfig tiny = tiny_config(64);
  const std::int64_t d = tiny.embed_dim;
  const std::int64_t lrf_share = 3 * d * d + 3 * d;
  ModelConfig no_low = tiny;
  no_low.use_low_group = false;
  require(param_count(tiny) - param_count(no_low) == tiny.n_low_group * d + lrf_share,
          "low-bank ablation count is off");
  ModelConfig no_high = tiny;
  no_high.use_high_group = false;
  require(param_count(tiny) - param_count(no_high) == tiny.n_high_group * d + lrf_share,
          "high-bank ablation count is off");
  auto model = init_model<float>(tiny, 1);
  require(model.params.scalar_count() == param_count(tiny),
          "instantiated parameter count differs from the formula");
}

// 8. Recipe-constant conformance.
void criterion_paper_constants() {
  const ModelConfig model;
  require(model.mask_threshold == 0.35, "mask threshold default is not 0.35");
  require(model.max_text_len == 17, "default text window is not 17");
  require(kMaxTextLenDefault == 17 && kMaxTextLenLong == 22, "text window constants are off");

  const TrainConfig pre = TrainConfig::defaults(TrainMode::pretrain);
  const TrainConfig fin = TrainConfig::defaults(TrainMode::finetune);
  require(pre.learning_rate == 1e-5 && fin.learning_rate == 1e-5, "lr default is not 1e-5");
  require(pre.weight_decay == 5e-4 && fin.weight_decay == 5e-4, "weight decay is not 5e-4");
  require(pre.epochs == 50 && fin.epochs == 15, "epoch defaults are not 50/15");
  require(pre.batch_size == 128 && fin.batch_size == 64, "batch defaults are not 128/64");
  require(pre.warmup_epochs == 5 && fin.warmup_epochs == 1, "warmup defaults are not 5/1");

  require(engine::kSimilarityThreshold == 0.5, "similarity threshold is not 0.5");
  {  // strictness: a 0.5 score drops, 0.51 survives
    auto suite = engine::make_stub_suite({}, {{"at", 0.5}, {"above", 0.51}});
    GrayImage img = GrayImage::Constant(8, 8, 10);
    engine::GroundingRecord at, above;
    at.image_ref = above.image_ref = "x";
    at.bbox = above.bbox = engine::BBox{0, 0, 4, 4};
    at.object_category = above.object_category = "dog";
    at.caption = "at";
    above.caption = "above";
    const auto result = engine::filter_records({at, above}, img, suite);
    require(result.kept.size() == 1 && result.kept[0].caption == "above",
            "0.5 must drop and 0.51 must survive");
  }

  require(engine::kNormRange == 999, "normalized box range is not [0,999]");
  const auto full_box = engine::normalize_bbox(engine::BBox{0, 0, 123, 77}, 123, 77);
  require(full_box == engine::kFullImageBox && full_box.x1 == 999 && full_box.y1 == 999,
          "full-image box does not normalize to (0,0),(999,999)");
}

// 9. Engine end to end over the bundled 10-image fixture.
void criterion_engine_end_to_end() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string root = fixtures() + "/engine";
  const auto inputs = engine::load_engine_inputs(root + "/images.jsonl");
  require(inputs.size() == 10, "fixture must list 10 images");
  const auto suite = engine::load_backend_suite(root + "/backends.json");

  test::TempDir dir;
  engine::JsonlSink sink(dir.file("records.jsonl"));
  const auto report = engine::run_engine(inputs, suite, sink);
  require(report.images == 10, "not all fixture images processed");
  require(report.object_records == 20, "object fan-out is not 20");
  require(report.part_records == 39, "part fan-out is not 39");
  require(report.kept == 58, "kept count is not 58");
  require(report.dropped_by_reason.at("low_similarity") == 1, "exactly one record must drop");

  long kept_lines = 0;
  bool saw_051 = false, saw_050 = false;
  std::istringstream lines(test::read_text(dir.file("records.jsonl")));
  std::string line;
  while (std::getline(lines, line)) {
    ++kept_lines;
    const auto record = engine::record_from_json(line);  // schema validation
    if (record.similarity == 0.51) saw_051 = true;
    if (record.similarity == 0.50) saw_050 = true;
  }
  require(kept_lines == report.kept, "sink line count differs from the report");
  require(saw_051, "the 0.51 record must be kept");
  require(!saw_050, "the 0.50 record must be dropped");

  engine::JsonlSink sink2(dir.file("records2.jsonl"));
  engine::run_engine(inputs, suite, sink2);
  require(test::read_text(dir.file("records.jsonl")) == test::read_text(dir.file("records2.jsonl")),
          "rerun is not byte-identical");
  require_under(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 10.0);
}

// 10. Ground-truth-oracle evaluation is exactly 1.0 on all three settings.
void criterion_oracle_eval() {
  const auto split = load_benchmark(fixtures() + "/refcocom", "val");
  const auto report = evaluate(split, oracle_predictor(), 0.35);
  require(report.object_only && report.object_only->miou_value == 1.0,
          "object_only mIoU is not exactly 1.0");
  require(report.object_only->oiou_value == 1.0, "object_only oIoU is not exactly 1.0");
  require(report.part_only && report.part_only->miou_value == 1.0,
          "part_only mIoU is not exactly 1.0");
  require(report.object_and_part && report.object_and_part->miou_value == 1.0,
          "object_and_part mIoU is not exactly 1.0");
  require(report.object_only->count + report.part_only->count == report.object_and_part->count,
          "setting counts do not partition");
}

// 11. Learning-rate schedule endpoints.
void criterion_lr_schedule() {
  const double base = 1e-5;
  const long total = 5000, warmup = 500;
  require(lr_at(0, total, warmup, base) == 0.0, "lr_at(0) != 0");
  require(lr_at(warmup, total, warmup, base) == base, "lr at warmup end is not exactly 1e-5");
  require(lr_at(total, total, warmup, base) < 1e-12, "final lr not below 1e-12");
  const double ramp_end = base * double(warmup) / double(warmup);
  const double cosine_start = base * 0.5 * (1.0 + std::cos(0.0));
  require(std::abs(ramp_end - cosine_start) < 1e-12, "schedule discontinuous at the boundary");
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"metric oracle equivalence", criterion_metric_oracle},
      {"mIoU/oIoU divergence fixture", criterion_divergence_fixture},
      {"RLE round trip", criterion_rle_round_trip},
      {"gradient check", criterion_gradient_check},
      {"gradient flow", criterion_gradient_flow},
      {"overfit test", criterion_overfit},
      {"shape algebra", criterion_shape_algebra},
      {"recipe-constant conformance", criterion_paper_constants},
      {"engine end-to-end", criterion_engine_end_to_end},
      {"ground-truth-oracle evaluation", criterion_oracle_eval},
      {"lr schedule", criterion_lr_schedule},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    std::string status = "PASS", detail;
    try {
      criteria[i].body();
    } catch (const std::exception& e) {
      status = "FAIL";
      detail = std::string(" (") + e.what() + ")";
      ++failures;
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %2zu [%s] %s%s (%.2fs)\n", i + 1, status.c_str(),
                criteria[i].name.c_str(), detail.c_str(), secs);
    std::fflush(stdout);
  }
  if (failures) std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
