#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "mres/checkpoint.hpp"
#include "mres/dataset.hpp"
#include "mres/engine.hpp"
#include "mres/eval.hpp"
#include "mres/image_io.hpp"
#include "mres/model.hpp"
#include "mres/train_config.hpp"
#include "mres/training.hpp"

namespace {

using namespace mres;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const std::string& what) {
  if (!std::filesystem::exists(path)) throw UsageError(what + " not found: " + path);
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << content;
}

Mat<float> load_model_input(const std::string& path, int image_size) {
  const GrayImage raw = read_gray(path);
  ProbMaskF scaled = raw.cast<float>() / 255.f;
  scaled = resize_prob<float>(scaled, image_size, image_size);
  return scaled.matrix();
}

/// Wraps a trained checkpoint as a per-sample predictor: the image is
/// resampled to the model input size and the confidence map is resampled
/// back to the sample's native resolution.
Predictor checkpoint_predictor(const std::string& checkpoint_path, const std::string& root) {
  CheckpointMeta meta;
  auto model = std::make_shared<UniRESModel<float>>(load_checkpoint<float>(checkpoint_path, &meta));
  auto vocab = std::make_shared<Vocabulary>(meta.vocab_words);
  return [model, vocab, root](const ReferringSample& sample) -> ProbMaskF {
    const std::string path = root + "/" + sample.image_ref;
    Mat<float> input;
    try {
      input = load_model_input(path, model->config.image_size);
    } catch (const IoError& e) {
      throw MissingImage(e.what());
    }
    const auto tokens = tokenize(sample.expression, *vocab, model->config.max_text_len);
    auto result = forward(*model, input, tokens);
    return resize_prob<float>(result.prob, sample.image_w, sample.image_h);
  };
}

int cmd_eval(const std::string& dataset, const std::string& split, const std::string& setting,
             const std::string& checkpoint, double threshold, const std::string& out_path) {
  const std::string root = resolve_data_root(dataset);
  require_file(root + "/" + split + ".jsonl", "benchmark split");
  if (checkpoint != "oracle") require_file(checkpoint, "checkpoint");

  const auto split_data = load_benchmark(root, split);
  std::optional<EvalSetting> restrict_to;
  if (setting != "all") restrict_to = eval_setting_from_string(setting);
  if (restrict_to && *restrict_to == EvalSetting::object_and_part) restrict_to.reset();

  const Predictor predictor =
      checkpoint == "oracle" ? oracle_predictor() : checkpoint_predictor(checkpoint, root);
  EvalReport report = evaluate(split_data, predictor, threshold, restrict_to);
  report.dataset_name = root;
  report.checkpoint_id = checkpoint;

  write_file(out_path, report.to_json());
  write_file(out_path + ".txt", report.to_text_table());
  std::cout << report.to_text_table();
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& dataset, const std::string& split,
              const std::string& mode_name, const std::string& resume, const std::string& out_dir,
              int checkpoint_every) {
  require_file(config_path, "config file");
  const TrainMode mode = train_mode_from_string(mode_name);
  RunConfig cfg = parse_run_config(config_path, mode);

  const std::string root = resolve_data_root(dataset);
  const auto bench = load_benchmark(root, split);

  std::vector<std::string> expressions;
  for (const auto& s : bench.samples) expressions.push_back(s.expression);
  const Vocabulary vocab = Vocabulary::build(expressions);
  cfg.model.vocab_size = vocab.size();
  cfg.model.validate();

  std::vector<TrainSample<float>> samples;
  for (const auto& s : bench.samples) {
    TrainSample<float> t;
    t.image = load_model_input(root + "/" + s.image_ref, cfg.model.image_size);
    t.tokens = tokenize(s.expression, vocab, cfg.model.max_text_len);
    t.gt = resize_nearest(rle_decode(s.mask), cfg.model.image_size, cfg.model.image_size);
    samples.push_back(std::move(t));
  }

  std::filesystem::create_directories(out_dir);
  auto model = init_model<float>(cfg.model, cfg.train.seed);
  AdamW<float> opt;
  int start_epoch = 0;
  if (!resume.empty()) {
    require_file(resume, "resume checkpoint");
    const auto meta = load_checkpoint_into(model, resume, &opt);
    start_epoch = meta.epoch;
  }

  std::ofstream log_out(out_dir + "/train_log.jsonl", std::ios::app);
  CheckpointMeta meta;
  meta.vocab_words = vocab.words();
  // the rotating last.ckpt makes every epoch resumable; numbered snapshots
  // are kept every --checkpoint-every epochs
  const auto sink = [&](int epoch, long step) {
    meta.epoch = epoch + 1;
    meta.step = step;
    save_checkpoint(out_dir + "/last.ckpt", model, meta, &opt);
    if (checkpoint_every > 0 && (epoch + 1) % checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04d.ckpt", epoch + 1);
      save_checkpoint(out_dir + "/" + name, model, meta, &opt);
    }
  };

  const auto log = fit(model, samples, cfg.train, opt, start_epoch, -1, sink);
  for (const auto& e : log)
    log_out << json{{"step", e.step}, {"epoch", e.epoch}, {"loss", e.loss}, {"lr", e.lr},
                    {"wall_ms", e.wall_ms}}
                   .dump()
            << "\n";
  meta.epoch = cfg.train.epochs;
  save_checkpoint(out_dir + "/final.ckpt", model, meta, &opt);
  std::cout << "trained " << log.size() << " steps; final checkpoint at " << out_dir
            << "/final.ckpt\n";
  return kExitOk;
}

int cmd_engine(const std::string& images, const std::string& backends_path,
               const std::string& out_path, const std::string& report_path) {
  require_file(images, "image list");
  require_file(backends_path, "backend config");
  engine::BackendSuite backends;
  try {
    backends = engine::load_backend_suite(backends_path);
    backends.require_complete();
  } catch (const BackendError& e) {
    throw UsageError(e.what());
  }
  const auto inputs = engine::load_engine_inputs(images);
  engine::JsonlSink sink(out_path);
  const auto report = engine::run_engine(inputs, backends, sink);
  if (!report_path.empty()) write_file(report_path, report.to_json());
  std::cout << report.to_json();
  return kExitOk;
}

int cmd_stats(const std::string& dataset, const std::string& split, const std::string& out_path,
              const std::string& csv_path) {
  const std::string root = resolve_data_root(dataset);
  require_file(root + "/" + split + ".jsonl", "benchmark split");
  const auto bench = load_benchmark(root, split);
  const auto stats = compute_stats(bench);

  json j{{"avg_expression_length", stats.avg_expression_length},
         {"num_masks", stats.num_masks},
         {"num_references", stats.num_references},
         {"num_object_categories", stats.num_object_categories},
         {"num_part_categories", stats.num_part_categories},
         {"expressions_per_category", stats.expressions_per_category}};
  const std::string body = j.dump(2) + "\n";
  if (!out_path.empty()) write_file(out_path, body);
  std::cout << body;

  if (!csv_path.empty()) {
    std::string csv = "category,count\n";
    for (const auto& [category, count] : stats.expressions_per_category)
      csv += category + "," + std::to_string(count) + "\n";
    write_file(csv_path, csv);
  }
  return kExitOk;
}

int cmd_groups(const std::string& checkpoint, const std::string& image_path,
               const std::string& level_name, const std::string& out_path,
               const std::string& pgm_path) {
  require_file(checkpoint, "checkpoint");
  require_file(image_path, "image");
  if (level_name != "low" && level_name != "high")
    throw UsageError("--level must be low or high");
  const GroupLevel level = level_name == "low" ? GroupLevel::low : GroupLevel::high;

  auto model = load_checkpoint<float>(checkpoint);
  const auto input = load_model_input(image_path, model.config.image_size);

  // group assignment is language-independent: only the visual encoder runs
  ad::Tape<float> tape;
  auto vis = visual_encode(tape, model, input);
  ForwardTrace<float> trace;
  trace.patch_features = vis.patch_features.value();
  if (vis.low_group_out.valid()) trace.low_group_out = vis.low_group_out.value();
  if (vis.high_group_out.valid()) trace.high_group_out = vis.high_group_out.value();
  const auto assignment = group_assignment(trace, level);

  std::string csv;
  for (Eigen::Index r = 0; r < assignment.rows(); ++r) {
    for (Eigen::Index c = 0; c < assignment.cols(); ++c) {
      if (c) csv += ",";
      csv += std::to_string(assignment(r, c));
    }
    csv += "\n";
  }
  write_file(out_path, csv);

  if (!pgm_path.empty()) {
    const int n = level == GroupLevel::low ? model.config.n_low_group : model.config.n_high_group;
    GrayImage img(assignment.rows(), assignment.cols());
    for (Eigen::Index r = 0; r < img.rows(); ++r)
      for (Eigen::Index c = 0; c < img.cols(); ++c)
        img(r, c) = static_cast<std::uint8_t>(n > 1 ? assignment(r, c) * 255 / (n - 1) : 0);
    write_pgm(pgm_path, img);
  }
  std::cout << "wrote " << out_path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-granularity referring expression segmentation lab"};
  app.require_subcommand(1);

  std::string dataset, split = "val", setting = "all", checkpoint = "oracle";
  double threshold = 0.35;
  std::string out;

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint (or the oracle) on a split");
  eval->add_option("--dataset", dataset, "benchmark root (default: MRES_DATA_ROOT)");
  eval->add_option("--split", split, "val, testA or testB");
  eval->add_option("--setting", setting, "all, object_only, part_only or object_and_part");
  eval->add_option("--checkpoint", checkpoint, "checkpoint path, or 'oracle'");
  eval->add_option("--threshold", threshold, "binarization threshold");
  eval->add_option("--out", out, "report JSON path")->required();

  std::string config_path, mode = "finetune", resume, train_split = "train", out_dir;
  auto* train = app.add_subcommand("train", "train a model on a benchmark split");
  train->add_option("--config", config_path, "key=value run config")->required();
  train->add_option("--dataset", dataset, "benchmark root (default: MRES_DATA_ROOT)");
  train->add_option("--split", train_split, "training split name");
  train->add_option("--mode", mode, "pretrain or finetune");
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_option("--out", out_dir, "output directory")->required();
  int checkpoint_every = 0;
  train->add_option("--checkpoint-every", checkpoint_every,
                    "also keep a numbered snapshot every N epochs (0: only last+final)");

  std::string images, backends_path, report_path;
  auto* engine_cmd = app.add_subcommand("engine", "run the grounding data engine");
  engine_cmd->add_option("--images", images, "JSONL image list")->required();
  engine_cmd->add_option("--backends", backends_path, "backend config JSON")->required();
  engine_cmd->add_option("--out", out, "output records JSONL")->required();
  engine_cmd->add_option("--report", report_path, "pipeline report JSON");

  std::string csv_path;
  auto* stats = app.add_subcommand("stats", "corpus statistics for a split");
  stats->add_option("--dataset", dataset, "benchmark root (default: MRES_DATA_ROOT)");
  stats->add_option("--split", split, "split name");
  stats->add_option("--out", out, "stats JSON path");
  stats->add_option("--csv", csv_path, "per-category count CSV path");

  std::string image_path, level = "low", pgm_path;
  auto* groups = app.add_subcommand("groups", "export a group-assignment grid");
  groups->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
  groups->add_option("--image", image_path, "input image (PNG or PGM)")->required();
  groups->add_option("--level", level, "low or high");
  groups->add_option("--out", out, "assignment CSV path")->required();
  groups->add_option("--pgm", pgm_path, "optional PGM rendering");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (eval->parsed()) return cmd_eval(dataset, split, setting, checkpoint, threshold, out);
    if (train->parsed())
      return cmd_train(config_path, dataset, train_split, mode, resume, out_dir, checkpoint_every);
    if (engine_cmd->parsed()) return cmd_engine(images, backends_path, out, report_path);
    if (stats->parsed()) return cmd_stats(dataset, split, out, csv_path);
    if (groups->parsed()) return cmd_groups(checkpoint, image_path, level, out, pgm_path);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::cerr << "run with --help for usage\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
