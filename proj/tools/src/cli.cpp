#include "couplenet/tools/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "couplenet/config.hpp"
#include "couplenet/io.hpp"
#include "couplenet/proposals.hpp"
#include "couplenet/rng.hpp"
#include "couplenet/synth.hpp"
#include "couplenet/tools/ablate.hpp"
#include "couplenet/tools/gradcheck.hpp"
#include "couplenet/train.hpp"

namespace couplenet::tools {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

/// Flags shared by the commands that build a RunConfig.
struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string coupling;
  std::string norm;
  std::string branches;
  std::string context;
  std::optional<std::size_t> k;
  std::string scales;
  std::optional<std::uint64_t> data_seed;
  std::optional<int> iterations;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool training) {
  cmd->add_option("--config", f.config_path, "JSON run configuration");
  cmd->add_option("--seed", f.seed,
                  training ? "run seed (initialization and sampling)" : "dataset seed");
  cmd->add_option("--out", f.out, "output directory");
  if (!training) return;
  cmd->add_option("--coupling", f.coupling, "sum | prod | max");
  cmd->add_option("--norm", f.norm, "none | l2 | conv");
  cmd->add_option("--branches", f.branches, "local | global | both");
  cmd->add_option("--context", f.context, "on | off");
  cmd->add_option("--k", f.k, "part grid size");
  cmd->add_option("--scales", f.scales, "comma separated training scales");
  cmd->add_option("--data-seed", f.data_seed, "dataset seed");
  cmd->add_option("--iterations", f.iterations, "training iterations");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
T parse_number(const std::string& text, const char* what) {
  T value{};
  std::istringstream in(text);
  in >> value;
  if (!in || !in.eof()) throw ConfigError(std::string(what) + ": cannot parse '" + text + "'");
  return value;
}

RunConfig resolve_config(const CommonFlags& f, bool seed_is_data_seed) {
  RunConfig c;
  if (!f.config_path.empty()) c = run_config_from_json(read_file(f.config_path));
  if (f.seed) (seed_is_data_seed ? c.data.seed : c.seed) = *f.seed;
  if (f.data_seed) c.data.seed = *f.data_seed;
  if (f.iterations) c.train.iterations = *f.iterations;
  try {
    if (!f.coupling.empty()) c.model.coupling.strategy = parse_strategy(f.coupling);
    if (!f.norm.empty()) c.model.coupling.normalization = parse_normalization(f.norm);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!f.branches.empty()) apply_branches(c.model.coupling, f.branches);
  if (!f.context.empty()) {
    if (f.context != "on" && f.context != "off") {
      throw ConfigError("--context expects on|off, got '" + f.context + "'");
    }
    c.model.use_context = f.context == "on";
  }
  if (f.k) c.model.k = *f.k;
  if (!f.scales.empty()) {
    c.train.scales.clear();
    for (const std::string& s : split_list(f.scales)) c.train.scales.push_back(parse_number<double>(s, "--scales"));
  }
  c.validate();
  return c;
}

fs::path resolve_out(const std::string& flag, const RunConfig& c, const std::string& command) {
  if (!flag.empty()) return flag;
  if (!c.out_dir.empty()) return c.out_dir;
  if (const char* root = std::getenv(kOutRootEnv); root != nullptr && *root != '\0') {
    return fs::path(root) / command;
  }
  return fs::path("couplenet_out") / command;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
  }
}

/// Creates the output directory and writes the resolved configuration there.
fs::path prepare_out(RunConfig& c, const std::string& flag, const std::string& command) {
  const fs::path dir = resolve_out(flag, c, command);
  make_dir(dir);
  c.out_dir = dir.string();
  write_file(dir / "resolved_config.json", to_json(c));
  return dir;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

json box_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

std::string class_name(std::size_t label) {
  return label >= 1 && label <= kNumShapeClasses ? std::string(kShapeClassNames[label - 1])
                                                  : "class-" + std::to_string(label);
}

std::span<const Scene> select_split(const Dataset& d, const std::string& split) {
  if (split == "train") return d.train;
  if (split == "test") return d.test;
  throw ConfigError("--split expects train|test, got '" + split + "'");
}

Dataset load_scenes(const RunConfig& c, const std::string& manifest_path) {
  if (manifest_path.empty()) return generate_dataset(c.data);
  return dataset_from_manifest(read_file(manifest_path));
}

int cmd_gen_data(CommonFlags& f, std::optional<std::size_t> train_size,
                 std::optional<std::size_t> test_size, bool images, std::ostream& out) {
  RunConfig c = resolve_config(f, true);
  if (train_size) c.data.train_size = *train_size;
  if (test_size) c.data.test_size = *test_size;
  if (images) c.export_images = true;
  const fs::path dir = prepare_out(c, f.out, "gen-data");
  const Dataset d = generate_dataset(c.data);
  write_file(dir / "manifest.json", manifest_to_json(d));
  if (c.export_images) {
    make_dir(dir / "images");
    std::size_t id = 0;
    for (const auto* split : {&d.train, &d.test}) {
      for (const Scene& s : *split) {
        char stem[32];
        std::snprintf(stem, sizeof stem, "scene_%04zu", id++);
        const Tensor image = rasterize(s, c.data.scene.noise_level);
        write_file(dir / "images" / (std::string(stem) + ".pgm"), encode_pgm(image));
        std::vector<Detection> gt;
        for (const SceneObject& o : s.objects) {
          gt.push_back({0, o.label(), 1.0, o.visible_box(s.image_w, s.image_h)});
        }
        write_file(dir / "images" / (std::string(stem) + "_gt.ppm"),
                   encode_ppm(s.image_w, s.image_h, render_overlay(image, gt, 0.0)));
      }
    }
  }
  out << "wrote " << d.train.size() << " train and " << d.test.size() << " test scenes to "
      << (dir / "manifest.json").string() << "\n";
  return kExitOk;
}

json eval_json(const EvalResult& ev, const std::string& split, std::size_t scenes,
               std::optional<double> eleven_point) {
  json per_class = json::object();
  for (std::size_t c = 0; c < ev.voc.per_class.size(); ++c) {
    const auto& ap = ev.voc.per_class[c];
    per_class[class_name(c + 1)] = ap ? json(*ap) : json(nullptr);
  }
  json j{{"split", split},
         {"scenes", scenes},
         {"detections", ev.detections.size()},
         {"map", ev.voc.map},
         {"coco_map", ev.coco},
         {"per_class_ap", per_class}};
  if (eleven_point) j["map_11point"] = *eleven_point;
  return j;
}

int cmd_train(CommonFlags& f, std::optional<int> val_interval, std::ostream& out) {
  RunConfig c = resolve_config(f, false);
  if (val_interval) c.train.val_interval = *val_interval;
  c.validate();
  const fs::path dir = prepare_out(c, f.out, "train");
  const Dataset d = generate_dataset(c.data);

  std::ofstream metrics(dir / "metrics.jsonl", std::ios::binary | std::ios::trunc);
  if (!metrics) throw IoError("cannot open '" + (dir / "metrics.jsonl").string() + "' for writing");
  const int report_every = std::max(1, c.train.iterations / 10);
  TrainResult trained = run_training(
      d.train, d.test, init_model_params(c.model, c.seed), c.train_setup(), c.seed,
      [&](const MetricRecord& r) {
        metrics << metric_line(r) << "\n";
        if ((r.iteration + 1) % report_every == 0 || r.val_map) {
          out << "iter " << r.iteration + 1 << " loss " << fixed(r.loss, 4) << " (cls "
              << fixed(r.cls_loss, 4) << ", bbox " << fixed(r.bbox_loss, 4) << ") lr " << r.lr;
          if (r.val_map) out << " val mAP " << fixed(100.0 * *r.val_map, 2);
          out << "\n";
        }
      });
  metrics.close();
  if (!metrics) throw IoError("failed writing metrics log");
  save_checkpoint(dir / "checkpoint.bin", Checkpoint{c, trained.params});

  const EvalResult ev = evaluate(trained.params, c.model, d.test, c.proposals,
                                 c.data.scene.noise_level, c.train.bbox_std, c.detect);
  write_file(dir / "eval.json", eval_json(ev, "test", d.test.size(), std::nullopt).dump(2) + "\n");
  out << "test mAP@0.5 " << fixed(100.0 * ev.voc.map, 2) << "  COCO mAP "
      << fixed(100.0 * ev.coco, 2) << "\ncheckpoint " << (dir / "checkpoint.bin").string() << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest, const std::string& split,
             bool eleven_point, const std::string& out_flag, std::ostream& out) {
  Checkpoint ck = load_checkpoint(checkpoint);
  RunConfig& c = ck.config;
  c.out_dir.clear();
  const fs::path dir = prepare_out(c, out_flag, "eval");
  const Dataset d = load_scenes(c, manifest);
  const std::span<const Scene> scenes = select_split(d, split);
  const EvalResult ev = evaluate(ck.params, c.model, scenes, c.proposals, c.data.scene.noise_level,
                                 c.train.bbox_std, c.detect);
  std::optional<double> map11;
  if (eleven_point) {
    map11 = mean_ap(ev.detections, ev.ground_truths, c.model.num_classes, 0.5, true).map;
  }
  write_file(dir / "eval.json", eval_json(ev, split, scenes.size(), map11).dump(2) + "\n");
  out << split << " scenes " << scenes.size() << "  mAP@0.5 " << fixed(100.0 * ev.voc.map, 2);
  if (map11) out << "  11-point " << fixed(100.0 * *map11, 2);
  out << "  COCO mAP " << fixed(100.0 * ev.coco, 2) << "\n";
  for (std::size_t i = 0; i < ev.voc.per_class.size(); ++i) {
    const auto& ap = ev.voc.per_class[i];
    out << "  " << class_name(i + 1) << " AP " << (ap ? fixed(100.0 * *ap, 2) : "n/a") << "\n";
  }
  return kExitOk;
}

struct InferFlags {
  std::string checkpoint;
  std::optional<std::size_t> scene;
  std::string image;
  std::string manifest;
  std::string split = "test";
  std::optional<double> score_thresh;
  std::string out;
};

int cmd_infer(const InferFlags& f, std::ostream& out) {
  if (f.scene.has_value() == !f.image.empty()) {
    throw ConfigError("infer: give exactly one of --scene or --image");
  }
  Checkpoint ck = load_checkpoint(f.checkpoint);
  RunConfig& c = ck.config;
  c.out_dir.clear();
  if (f.score_thresh) c.score_thresh = *f.score_thresh;
  const fs::path dir = prepare_out(c, f.out, "infer");

  Tensor image;
  std::vector<RoI> rois;
  std::size_t index = 0;
  if (f.scene) {
    const Dataset d = load_scenes(c, f.manifest);
    const std::span<const Scene> scenes = select_split(d, f.split);
    index = *f.scene;
    if (index >= scenes.size()) {
      throw ConfigError("infer: scene " + std::to_string(index) + " out of range (" + f.split +
                        " split has " + std::to_string(scenes.size()) + " scenes)");
    }
    image = rasterize(scenes[index], c.data.scene.noise_level);
    // Same proposals the evaluator uses for this scene.
    Rng prng = Rng(c.detect.proposal_seed).split(index);
    rois = generate_test_proposals(scenes[index], c.proposals, prng.next_u64());
  } else {
    try {
      image = decode_pgm(read_file(f.image));
    } catch (const std::invalid_argument& e) {
      throw IoError(f.image + ": " + e.what());
    }
    rois = grid_proposals(static_cast<int>(image.shape().w), static_cast<int>(image.shape().h));
  }
  const std::vector<Detection> all =
      detect(ck.params, c.model, image, rois, c.train.bbox_std, c.detect, index);
  std::vector<Detection> kept;
  for (const Detection& d : all) {
    if (d.score >= c.score_thresh) kept.push_back(d);
  }
  json dets = json::array();
  for (const Detection& d : kept) {
    dets.push_back(json{{"label", d.label}, {"class", class_name(d.label)}, {"score", d.score},
                        {"box", box_json(d.box)}});
  }
  json j{{"source", f.scene ? f.split + ":" + std::to_string(index) : f.image},
         {"score_thresh", c.score_thresh},
         {"detections", dets}};
  write_file(dir / "detections.json", j.dump(2) + "\n");
  write_file(dir / "overlay.ppm",
             encode_ppm(static_cast<int>(image.shape().w), static_cast<int>(image.shape().h),
                        render_overlay(image, kept, c.score_thresh)));
  out << kept.size() << " detection(s) at score >= " << c.score_thresh << "\n";
  for (const Detection& d : kept) {
    out << "  " << class_name(d.label) << " " << fixed(d.score, 3) << " [" << fixed(d.box.x1, 1)
        << ", " << fixed(d.box.y1, 1) << ", " << fixed(d.box.x2, 1) << ", " << fixed(d.box.y2, 1)
        << "]\n";
  }
  return kExitOk;
}

struct AblateFlags {
  std::string seeds = "1,2,3";
  std::string cells;
  bool with_context = false;
  unsigned jobs = 1;
  std::optional<std::size_t> train_size;
  std::optional<std::size_t> test_size;
};

int cmd_ablate(CommonFlags& f, const AblateFlags& a, std::ostream& out) {
  RunConfig c = resolve_config(f, false);
  if (a.train_size) c.data.train_size = *a.train_size;
  if (a.test_size) c.data.test_size = *a.test_size;
  c.validate();
  AblationOptions opt;
  opt.seeds.clear();
  for (const std::string& s : split_list(a.seeds)) opt.seeds.push_back(parse_number<std::uint64_t>(s, "--seeds"));
  if (a.cells.empty()) {
    opt.cells = default_cells(a.with_context);
  } else {
    opt.cells.clear();
    for (const std::string& id : split_list(a.cells)) opt.cells.push_back(parse_cell(id));
  }
  opt.jobs = a.jobs;
  const fs::path dir = prepare_out(c, f.out, "ablate");
  opt.base = c;
  const std::vector<CellResult> results = run_ablation(opt);
  const std::string md = format_markdown(results, opt.seeds);
  write_file(dir / "ablation.md", md);
  write_file(dir / "ablation.csv", format_csv(results, opt.seeds));
  out << md;
  return kExitOk;
}

int cmd_gradcheck(const GradcheckOptions& opt, std::ostream& out) {
  const std::vector<GradcheckResult> results = run_gradcheck(opt);
  out << format_gradcheck(results);
  const bool ok = std::all_of(results.begin(), results.end(),
                              [](const GradcheckResult& r) { return r.passed; });
  return ok ? kExitOk : kExitValidation;
}

}  // namespace

std::vector<std::uint8_t> render_overlay(const Tensor& image, std::span<const Detection> detections,
                                         double score_thresh) {
  static constexpr std::uint8_t kColors[][3] = {
      {230, 60, 60}, {60, 200, 80}, {70, 120, 240}, {240, 200, 40}, {200, 80, 220}};
  const std::size_t w = image.shape().w;
  const std::size_t h = image.shape().h;
  std::vector<std::uint8_t> rgb(w * h * 3);
  const double* p = image.plane(0, 0);
  for (std::size_t i = 0; i < w * h; ++i) {
    const auto v = static_cast<std::uint8_t>(std::lround(std::clamp(p[i], 0.0, 1.0) * 255.0));
    rgb[3 * i] = rgb[3 * i + 1] = rgb[3 * i + 2] = v;
  }
  auto put = [&](long x, long y, const std::uint8_t* color) {
    if (x < 0 || y < 0 || x >= static_cast<long>(w) || y >= static_cast<long>(h)) return;
    std::uint8_t* px = &rgb[(static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * 3];
    std::copy(color, color + 3, px);
  };
  for (const Detection& d : detections) {
    if (d.score < score_thresh) continue;
    const std::uint8_t* color = kColors[(d.label == 0 ? 0 : d.label - 1) % std::size(kColors)];
    const long x1 = std::lround(std::floor(d.box.x1));
    const long y1 = std::lround(std::floor(d.box.y1));
    const long x2 = std::lround(std::ceil(d.box.x2)) - 1;
    const long y2 = std::lround(std::ceil(d.box.y2)) - 1;
    for (long x = x1; x <= x2; ++x) {
      put(x, y1, color);
      put(x, y2, color);
    }
    for (long y = y1; y <= y2; ++y) {
      put(x1, y, color);
      put(x2, y, color);
    }
  }
  return rgb;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Coupled local/global detection head on synthetic scenes", "couplenet"};
  app.require_subcommand(1);

  CommonFlags gen_flags, train_flags, ablate_flags;
  std::optional<std::size_t> train_size, test_size;
  bool images = false;
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset manifest");
  add_common(gen, gen_flags, false);
  gen->add_option("--train-size", train_size, "number of training scenes");
  gen->add_option("--test-size", test_size, "number of test scenes");
  gen->add_flag("--images", images, "also write PGM renders and ground-truth overlays");

  std::optional<int> val_interval;
  auto* train = app.add_subcommand("train", "train a model and evaluate it on the test split");
  add_common(train, train_flags, true);
  train->add_option("--val-interval", val_interval, "iterations between validation passes");

  std::string ck_path, manifest, split = "test", eval_out;
  bool eleven = false;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", ck_path, "checkpoint file")->required();
  eval->add_option("--manifest", manifest, "dataset manifest (default: regenerate)");
  eval->add_option("--split", split, "train | test");
  eval->add_flag("--eleven-point", eleven, "also report VOC07 11-point mAP");
  eval->add_option("--out", eval_out, "output directory");

  GradcheckOptions gc;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suites");
  grad->add_option("--scope", gc.scope, "suite or group name, or all");
  grad->add_option("--corrupt", gc.corrupt_op, "perturb this op's analytic gradient (self-test)");
  grad->add_option("--seed", gc.seed, "seed for the random cases");

  AblateFlags ab;
  auto* ablate = app.add_subcommand("ablate", "normalization x coupling grid");
  add_common(ablate, ablate_flags, true);
  ablate->add_option("--seeds", ab.seeds, "comma separated run seeds");
  ablate->add_option("--cells", ab.cells, "comma separated cell ids (default: full grid)");
  ablate->add_flag("--with-context", ab.with_context, "add the conv-sum+ctx row");
  ablate->add_option("--jobs", ab.jobs, "concurrent runs")->check(CLI::Range(1U, 256U));
  ablate->add_option("--train-size", ab.train_size, "number of training scenes");
  ablate->add_option("--test-size", ab.test_size, "number of test scenes");

  InferFlags inf;
  auto* infer = app.add_subcommand("infer", "detect objects in one scene or PGM image");
  infer->add_option("--checkpoint", inf.checkpoint, "checkpoint file")->required();
  infer->add_option("--scene", inf.scene, "scene index within --split");
  infer->add_option("--image", inf.image, "binary PGM image");
  infer->add_option("--manifest", inf.manifest, "dataset manifest (default: regenerate)");
  infer->add_option("--split", inf.split, "train | test");
  infer->add_option("--score-thresh", inf.score_thresh, "drawing / reporting threshold");
  infer->add_option("--out", inf.out, "output directory");

  std::vector<std::string> argv_store{"couplenet"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (std::string& s : argv_store) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_flags, train_size, test_size, images, out);
    if (train->parsed()) return cmd_train(train_flags, val_interval, out);
    if (eval->parsed()) return cmd_eval(ck_path, manifest, split, eleven, eval_out, out);
    if (grad->parsed()) return cmd_gradcheck(gc, out);
    if (ablate->parsed()) return cmd_ablate(ablate_flags, ab, out);
    if (infer->parsed()) return cmd_infer(inf, out);
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const TrainingDiverged& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace couplenet::tools
