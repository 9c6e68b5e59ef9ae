#include "wps/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "wps/backend.hpp"
#include "wps/baseline.hpp"
#include "wps/data.hpp"
#include "wps/evaluation.hpp"
#include "wps/inference.hpp"
#include "wps/teacher.hpp"
#include "wps/trainer.hpp"

namespace wps {

namespace fs = std::filesystem;
using nlohmann::json;

void emit_overlay(const ImageTensor& image, const SemanticSegmentation& seg, const std::vector<Rgb>& palette,
                  const std::string& path, const std::vector<std::string>& names, double alpha) {
  if (image.height != seg.height || image.width != seg.width) {
    throw Error(ErrorCode::kShapeMismatch, "overlay image and segmentation differ in size");
  }
  const int background = static_cast<int>(palette.size()) - 1;
  ImageTensor out = image;
  for (int y = 0; y < seg.height; ++y) {
    for (int x = 0; x < seg.width; ++x) {
      const int label = seg.at(y, x);
      if (label < 0 || label >= background) continue;
      for (int c = 0; c < 3; ++c) {
        out.at(y, x, c) = static_cast<float>((1.0 - alpha) * image.at(y, x, c) + alpha * palette[label][c] / 255.0);
      }
    }
  }
  write_png_rgb(path, out);

  json legend;
  legend["background"] = background;
  json cats = json::array();
  for (int c = 0; c < background; ++c) {
    cats.push_back({{"id", c},
                    {"name", c < static_cast<int>(names.size()) ? names[c] : "category_" + std::to_string(c)},
                    {"color", {palette[c][0], palette[c][1], palette[c][2]}}});
  }
  legend["categories"] = cats;
  std::ofstream side(path + ".legend.json");
  if (!side) throw Error(ErrorCode::kIOError, "cannot write legend for " + path);
  side << legend.dump(2) << '\n';
}

namespace {

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string backend = "mock";
};

void add_common(CLI::App* cmd, CommonOptions& common) {
  cmd->add_option("--config", common.config_path, "Config file (default: $WPS_CONFIG, else desk preset)");
  cmd->add_option("--set", common.overrides, "Config override key=value (repeatable)");
  cmd->add_option("--backend", common.backend, "mock | adapter:<path>");
}

// Explicit file, then the environment, then the desk preset sized to the data.
Config resolve_config(const CommonOptions& common, const Dataset* dataset) {
  std::string path = common.config_path;
  if (path.empty()) {
    if (const char* env = std::getenv(kConfigEnvVar)) path = env;
  }
  Config cfg;
  if (!path.empty()) {
    cfg = load_config_file(path);
  } else {
    cfg = Config::desk_scale();
    if (dataset) {
      cfg.image_size = dataset->image_size;
      cfg.num_categories = dataset->num_categories();
    }
  }
  for (const auto& kv : common.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kInvalidConfig, "override '" + kv + "' is not key=value");
    apply_config_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg = validate_config(cfg);
  if (dataset && (dataset->num_categories() != cfg.num_categories || dataset->image_size != cfg.image_size)) {
    throw Error(ErrorCode::kInvalidConfig, "config (" + std::to_string(cfg.num_categories) + " categories, " +
                                               std::to_string(cfg.image_size) + " px) does not match dataset (" +
                                               std::to_string(dataset->num_categories()) + ", " +
                                               std::to_string(dataset->image_size) + ")");
  }
  return cfg;
}

void log_config(const Config& cfg) {
  std::cerr << "[wps] config " << hash_hex(config_hash(cfg)) << '\n' << serialize_config(cfg);
}

void write_manifest(const fs::path& dir, const std::string& command, const std::vector<std::string>& args,
                    const Config& cfg, const json& extra) {
  fs::create_directories(dir);
  json m;
  m["command"] = command;
  m["args"] = args;
  m["config_hash"] = hash_hex(config_hash(cfg));
  m["config"] = serialize_config(cfg);
  for (const auto& [k, v] : extra.items()) m[k] = v;
  std::ofstream out(dir / ("manifest_" + command + ".json"));
  if (!out) throw Error(ErrorCode::kIOError, "cannot write manifest in " + dir.string());
  out << m.dump(2) << '\n';
  std::ofstream(dir / "config.txt") << serialize_config(cfg);
}

struct DataOptions {
  std::string dir;
  std::string coco_annotations;
  std::string coco_images;
};

void add_data(CLI::App* cmd, DataOptions& data) {
  cmd->add_option("--data", data.dir, "Dataset directory (dataset.json)");
  cmd->add_option("--coco-annotations", data.coco_annotations, "COCO-style part annotation JSON");
  cmd->add_option("--coco-images", data.coco_images, "Image directory for --coco-annotations");
}

// COCO input needs the image size up front; dataset directories carry their own.
std::pair<Dataset, Config> load_data_and_config(const DataOptions& data, const CommonOptions& common) {
  if (!data.coco_annotations.empty()) {
    Config cfg = resolve_config(common, nullptr);
    Dataset ds = load_coco_parts(data.coco_annotations, data.coco_images, cfg);
    if (ds.num_categories() != cfg.num_categories) {
      throw Error(ErrorCode::kInvalidConfig, "annotation file has " + std::to_string(ds.num_categories()) +
                                                 " categories, config has " + std::to_string(cfg.num_categories));
    }
    return {std::move(ds), cfg};
  }
  if (data.dir.empty()) throw Error(ErrorCode::kUsage, "--data or --coco-annotations is required");
  Dataset ds = load_dataset(data.dir);
  Config cfg = resolve_config(common, &ds);
  return {std::move(ds), cfg};
}

LabelKind parse_label_kind(const std::string& s) {
  if (s == "box") return LabelKind::kBox;
  if (s == "point") return LabelKind::kPoint;
  throw Error(ErrorCode::kUsage, "labels must be box or point");
}

int cmd_synth(const std::vector<std::string>& args, const CommonOptions& common, const SyntheticOptions& opt,
              const std::string& out, double val_fraction) {
  Dataset ds = generate_synthetic(opt);
  CommonOptions c = common;
  Config cfg = resolve_config(c, &ds);
  log_config(cfg);
  if (val_fraction > 0) {
    auto [train, val] = split_dataset(ds, {1.0 - val_fraction, val_fraction}, opt.seed);
    save_dataset(train, (fs::path(out) / "train").string());
    save_dataset(val, (fs::path(out) / "val").string());
    std::cout << "wrote " << train.records.size() << " train / " << val.records.size() << " val images to " << out << '\n';
  } else {
    save_dataset(ds, out);
    std::cout << "wrote " << ds.records.size() << " images to " << out << '\n';
  }
  write_manifest(out, "synth", args, cfg, {{"n_images", opt.n_images}, {"seed", opt.seed}});
  return 0;
}

int cmd_train(const std::vector<std::string>& args, const CommonOptions& common, const DataOptions& data,
              const std::string& out, const std::string& resume, const std::string& labels) {
  auto [dataset, cfg] = load_data_and_config(data, common);
  log_config(cfg);
  const auto backend = make_backend(common.backend, cfg);
  const Teacher teacher(cfg);
  const auto examples = prepare_examples(dataset, *backend, teacher, cfg, parse_label_kind(labels));

  TrainState state = resume.empty() ? init_train_state(cfg, cfg.seed) : load_checkpoint(resume, &cfg);
  const fs::path run(out);
  write_manifest(run, "train", args, cfg, {{"backend", backend->name()}, {"num_images", examples.size()}});
  FitOptions options;
  options.loss_log_path = (run / "loss_log.csv").string();
  options.checkpoint_dir = (run / "checkpoints").string();
  options.backend = backend.get();
  options.teacher = &teacher;
  options.on_epoch = [](const EpochRecord& r) {
    std::cerr << "epoch " << r.epoch << " total " << r.total << " cls " << r.cls << " reg " << r.reg << '\n';
  };
  fit(state, examples, cfg, options);
  save_checkpoint(state, (run / "final.ckpt").string());

  json history = json::array();
  for (const auto& h : state.history) history.push_back({{"epoch", h.epoch}, {"total", h.total}, {"cls", h.cls}, {"reg", h.reg}});
  std::ofstream(run / "history.json") << history.dump(2) << '\n';
  std::cout << "trained " << state.epoch << " epochs; checkpoint " << (run / "final.ckpt").string() << '\n';
  return 0;
}

struct EvalOptions {
  std::string checkpoint;
  std::string mode = "student";
  std::string out;
  double jitter = 0.0;
  double drop = 0.0;
  std::uint64_t seed = 0;
  std::string detections;
};

int cmd_eval(const std::vector<std::string>& args, const CommonOptions& common, const DataOptions& data,
             const EvalOptions& opt) {
  Dataset dataset;
  Config cfg;
  std::optional<TrainState> state;
  if (opt.mode == "student") {
    if (opt.checkpoint.empty()) throw Error(ErrorCode::kUsage, "--checkpoint is required for --mode student");
    state = load_checkpoint(opt.checkpoint);
    cfg = state->cfg;
    if (!common.config_path.empty() || !common.overrides.empty()) {
      const Config requested = resolve_config(common, nullptr);
      if (config_hash(requested) != config_hash(cfg)) {
        throw Error(ErrorCode::kVersionMismatch, "checkpoint was trained with config " + hash_hex(config_hash(cfg)));
      }
    }
    if (!data.coco_annotations.empty()) {
      dataset = load_coco_parts(data.coco_annotations, data.coco_images, cfg);
    } else if (!data.dir.empty()) {
      dataset = load_dataset(data.dir);
    } else {
      throw Error(ErrorCode::kUsage, "--data or --coco-annotations is required");
    }
  } else if (opt.mode == "oracle-box" || opt.mode == "oracle-point" || opt.mode == "detsam") {
    std::tie(dataset, cfg) = load_data_and_config(data, common);
  } else {
    throw Error(ErrorCode::kUsage, "unknown --mode " + opt.mode);
  }
  log_config(cfg);
  const auto backend = make_backend(common.backend, cfg);
  const Teacher teacher(cfg);
  if (state && backend->parameter_checksum() != state->backend_checksum && state->backend_checksum != 0) {
    throw Error(ErrorCode::kBackendError, "backend differs from the one used in training");
  }

  std::unique_ptr<Detector> detector;
  if (opt.mode == "detsam") {
    if (!opt.detections.empty()) {
      detector = std::make_unique<FileDetector>(opt.detections, cfg.image_size, cfg.num_categories);
    } else {
      detector = std::make_unique<OracleDetector>(opt.jitter, opt.drop, opt.seed);
    }
  }
  Predictor predictor = [&](const DatasetRecord& record) -> SemanticSegmentation {
    if (opt.mode == "student") return predict_image(record.image, state->params, *backend, cfg);
    if (opt.mode == "detsam") return det_sam_predict(record, *detector, *backend, teacher, cfg);
    const auto labels = derive_weak_labels(record, opt.mode == "oracle-box" ? LabelKind::kBox : LabelKind::kPoint);
    return oracle_predict(record.image, labels, *backend, teacher, cfg);
  };
  const MetricsReport report = evaluate_dataset(dataset, predictor, cfg);
  if (!opt.out.empty()) {
    const fs::path out(opt.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    report.write(opt.out);
    write_manifest(out.has_parent_path() ? out.parent_path() : fs::path("."), "eval", args, cfg,
                   {{"mode", opt.mode}, {"report", opt.out}, {"backend", backend->name()}});
  }
  std::cout << "mode " << opt.mode << " miou " << report.miou << " macc " << report.macc << " images "
            << report.num_images << '\n';
  return 0;
}

int cmd_infer(const std::vector<std::string>& args, const CommonOptions& common, const std::string& checkpoint,
              const std::string& image_path, const std::string& out, const std::string& overlay,
              const std::string& names_from) {
  const TrainState state = load_checkpoint(checkpoint);
  const Config& cfg = state.cfg;
  log_config(cfg);
  const auto backend = make_backend(common.backend, cfg);
  const ImageTensor original = read_image(image_path);
  const ImageTensor resized = resize_bilinear(original, cfg.image_size, cfg.image_size);
  const SemanticSegmentation seg = predict_image(resized, state.params, *backend, cfg);
  const SemanticSegmentation full = resize_nearest(seg, original.height, original.width);

  std::vector<std::string> names;
  if (!names_from.empty()) names = load_dataset(names_from).category_names;
  for (int c = static_cast<int>(names.size()); c < cfg.num_categories; ++c) names.push_back("category_" + std::to_string(c));

  const fs::path out_path(out);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  const auto palette = category_palette(cfg.num_categories);
  write_indexed_png(out, full, palette);
  json sidecar;
  for (int c = 0; c < cfg.num_categories; ++c) sidecar[std::to_string(c)] = names[c];
  sidecar[std::to_string(cfg.num_categories)] = "background";
  std::ofstream(out + ".json") << sidecar.dump(2) << '\n';
  if (!overlay.empty()) emit_overlay(original, full, palette, overlay, names);
  write_manifest(out_path.has_parent_path() ? out_path.parent_path() : fs::path("."), "infer", args, cfg,
                 {{"image", image_path}, {"output", out}});
  std::cout << "wrote " << out << '\n';
  return 0;
}

int cmd_baseline(const std::vector<std::string>& args, const CommonOptions& common, const DataOptions& data,
                 const std::string& out, const std::vector<double>& sigmas, int seeds, double drop) {
  auto [dataset, cfg] = load_data_and_config(data, common);
  log_config(cfg);
  const auto backend = make_backend(common.backend, cfg);
  const Teacher teacher(cfg);
  json result;
  result["sigmas"] = sigmas;
  result["drop"] = drop;
  json means = json::array(), per_seed = json::array();
  for (double sigma : sigmas) {
    double sum = 0.0;
    json runs = json::array();
    for (int s = 0; s < seeds; ++s) {
      const OracleDetector detector(sigma, drop, static_cast<std::uint64_t>(s));
      const auto report = evaluate_dataset(
          dataset, [&](const DatasetRecord& r) { return det_sam_predict(r, detector, *backend, teacher, cfg); }, cfg);
      sum += report.miou;
      runs.push_back(report.miou);
    }
    means.push_back(sum / seeds);
    per_seed.push_back(runs);
    std::cout << "sigma " << sigma << " mean miou " << sum / seeds << '\n';
  }
  result["miou_mean"] = means;
  result["miou_per_seed"] = per_seed;
  result["config_hash"] = hash_hex(config_hash(cfg));
  const fs::path out_path(out);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  std::ofstream file(out);
  if (!file) throw Error(ErrorCode::kIOError, "cannot write " + out);
  file << result.dump(2) << '\n';
  write_manifest(out_path.has_parent_path() ? out_path.parent_path() : fs::path("."), "baseline", args, cfg,
                 {{"output", out}});
  return 0;
}

ImageTensor side_by_side(const ImageTensor& a, const ImageTensor& b) {
  ImageTensor out(a.height, a.width + b.width);
  for (int y = 0; y < a.height; ++y) {
    for (int c = 0; c < 3; ++c) {
      for (int x = 0; x < a.width; ++x) out.at(y, x, c) = a.at(y, x, c);
      for (int x = 0; x < b.width; ++x) out.at(y, a.width + x, c) = b.at(y, x, c);
    }
  }
  return out;
}

int cmd_plot(const std::vector<std::string>& args, const CommonOptions& common, const std::string& pred_path,
             const std::string& gt_path, const std::string& image_path, const std::string& out) {
  const Config cfg = resolve_config(common, nullptr);
  const SemanticSegmentation pred = read_indexed_png(pred_path);
  ImageTensor image;
  if (!image_path.empty()) {
    image = resize_bilinear(read_image(image_path), pred.height, pred.width);
  } else {
    image = ImageTensor(pred.height, pred.width);
    for (auto& v : image.pixels) v = 0.5f;
  }
  SemanticSegmentation seg = pred;
  if (!gt_path.empty()) {
    const SemanticSegmentation gt = read_indexed_png(gt_path);
    if (gt.height != pred.height || gt.width != pred.width) throw Error(ErrorCode::kShapeMismatch, "--gt and --pred differ in size");
    image = side_by_side(image, image);
    seg = SemanticSegmentation(pred.height, 2 * pred.width, cfg.num_categories);
    for (int y = 0; y < pred.height; ++y) {
      for (int x = 0; x < pred.width; ++x) {
        seg.at(y, x) = gt.at(y, x);
        seg.at(y, pred.width + x) = pred.at(y, x);
      }
    }
  }
  const fs::path out_path(out);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  emit_overlay(image, seg, category_palette(cfg.num_categories), out);
  write_manifest(out_path.has_parent_path() ? out_path.parent_path() : fs::path("."), "plot", args, cfg,
                 {{"output", out}});
  std::cout << "wrote " << out << '\n';
  return 0;
}

constexpr const char* kSynopsis =
    "usage: wps {synth|train|eval|infer|baseline|plot} [options]  (wps <command> --help for details)";

}  // namespace

int run_command(const std::vector<std::string>& args) {
  CLI::App app{"Weakly-supervised part segmentation with a distilled query prompter", "wps"};
  app.require_subcommand(1, 1);

  CommonOptions common;
  DataOptions data;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic rectangle-parts dataset");
  SyntheticOptions synth_opt;
  std::string synth_out;
  double val_fraction = 0.0;
  synth->add_option("--out", synth_out, "Output dataset directory")->required();
  synth->add_option("--n", synth_opt.n_images, "Number of images");
  synth->add_option("--categories", synth_opt.n_categories, "Number of part categories");
  synth->add_option("--max-parts", synth_opt.max_parts, "Maximum parts per image");
  synth->add_option("--size", synth_opt.size, "Image side in pixels");
  synth->add_option("--seed", synth_opt.seed, "Generator seed");
  synth->add_option("--val-fraction", val_fraction, "Write train/ and val/ splits with this validation share");
  add_common(synth, common);

  auto* train = app.add_subcommand("train", "Distil the student prompter from weak labels");
  std::string train_out, resume, labels = "box";
  train->add_option("--out", train_out, "Run directory")->required();
  train->add_option("--resume", resume, "Checkpoint to resume from");
  train->add_option("--labels", labels, "Weak label kind: box | point");
  add_data(train, data);
  add_common(train, common);

  auto* eval = app.add_subcommand("eval", "Score a predictor against ground-truth masks");
  EvalOptions eval_opt;
  eval->add_option("--checkpoint", eval_opt.checkpoint, "Trained checkpoint (student mode)");
  eval->add_option("--mode", eval_opt.mode, "student | oracle-box | oracle-point | detsam");
  eval->add_option("--out", eval_opt.out, "Metrics report JSON");
  eval->add_option("--jitter", eval_opt.jitter, "Oracle detector corner jitter (fraction of image side)");
  eval->add_option("--drop", eval_opt.drop, "Oracle detector drop probability");
  eval->add_option("--seed", eval_opt.seed, "Oracle detector seed");
  eval->add_option("--detections", eval_opt.detections, "Detections JSON for detsam mode");
  add_data(eval, data);
  add_common(eval, common);

  auto* infer = app.add_subcommand("infer", "Segment one image with a trained checkpoint");
  std::string infer_ckpt, infer_image, infer_out, infer_overlay, infer_names;
  infer->add_option("--checkpoint", infer_ckpt, "Trained checkpoint")->required();
  infer->add_option("--image", infer_image, "Input PNG or JPEG")->required();
  infer->add_option("--out", infer_out, "Indexed PNG output")->required();
  infer->add_option("--overlay", infer_overlay, "Optional colour overlay PNG");
  infer->add_option("--names-from", infer_names, "Dataset directory supplying category names");
  add_common(infer, common);

  auto* baseline = app.add_subcommand("baseline", "Detector + promptable decoder jitter sweep");
  std::string baseline_out;
  std::vector<double> sigmas{0.0, 0.02, 0.05, 0.1};
  int seeds = 3;
  double drop = 0.0;
  baseline->add_option("--out", baseline_out, "Sweep result JSON")->required();
  baseline->add_option("--sigmas", sigmas, "Jitter values")->delimiter(',');
  baseline->add_option("--seeds", seeds, "Seeds per jitter value")->check(CLI::PositiveNumber);
  baseline->add_option("--drop", drop, "Drop probability");
  add_data(baseline, data);
  add_common(baseline, common);

  auto* plot = app.add_subcommand("plot", "Colour overlay of a predicted (and optional ground-truth) map");
  std::string plot_pred, plot_gt, plot_image, plot_out;
  plot->add_option("--pred", plot_pred, "Predicted indexed PNG")->required();
  plot->add_option("--gt", plot_gt, "Ground-truth indexed PNG (drawn on the left)");
  plot->add_option("--image", plot_image, "Image to draw on");
  plot->add_option("--out", plot_out, "Overlay PNG")->required();
  add_common(plot, common);

  std::vector<const char*> argv{"wps"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << '\n' << kSynopsis << '\n';
    return static_cast<int>(ErrorCode::kUsage);
  }

  try {
    if (synth->parsed()) return cmd_synth(args, common, synth_opt, synth_out, val_fraction);
    if (train->parsed()) return cmd_train(args, common, data, train_out, resume, labels);
    if (eval->parsed()) return cmd_eval(args, common, data, eval_opt);
    if (infer->parsed()) return cmd_infer(args, common, infer_ckpt, infer_image, infer_out, infer_overlay, infer_names);
    if (baseline->parsed()) return cmd_baseline(args, common, data, baseline_out, sigmas, seeds, drop);
    if (plot->parsed()) return cmd_plot(args, common, plot_pred, plot_gt, plot_image, plot_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    if (e.code() == ErrorCode::kUsage) std::cerr << kSynopsis << '\n';
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  std::cerr << kSynopsis << '\n';
  return static_cast<int>(ErrorCode::kUsage);
}

int run_command(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_command(args);
}

}  // namespace wps
