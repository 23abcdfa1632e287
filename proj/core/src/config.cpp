#include "couplenet/config.hpp"

#include <algorithm>
#include <initializer_list>

#include <nlohmann/json.hpp>

namespace couplenet {

using json = nlohmann::ordered_json;

namespace {

void check_keys(const json& j, std::initializer_list<std::string_view> allowed,
                const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

json data_json(const DatasetConfig& d) {
  const SceneConfig& s = d.scene;
  return json{{"seed", d.seed},
              {"train_size", d.train_size},
              {"test_size", d.test_size},
              {"min_size", s.min_size},
              {"max_size", s.max_size},
              {"min_objects", s.min_objects},
              {"max_objects", s.max_objects},
              {"occlusion_prob", s.occlusion_prob},
              {"truncation_prob", s.truncation_prob},
              {"noise_level", s.noise_level},
              {"min_object_size", s.min_object_size},
              {"max_object_size", s.max_object_size},
              {"max_overlap_iou", s.max_overlap_iou}};
}

void data_from(const json& j, DatasetConfig& d) {
  const std::string w = "data";
  check_keys(j, {"seed", "train_size", "test_size", "min_size", "max_size", "min_objects",
                 "max_objects", "occlusion_prob", "truncation_prob", "noise_level",
                 "min_object_size", "max_object_size", "max_overlap_iou"},
             w);
  SceneConfig& s = d.scene;
  read(j, "seed", d.seed, w);
  read(j, "train_size", d.train_size, w);
  read(j, "test_size", d.test_size, w);
  read(j, "min_size", s.min_size, w);
  read(j, "max_size", s.max_size, w);
  read(j, "min_objects", s.min_objects, w);
  read(j, "max_objects", s.max_objects, w);
  read(j, "occlusion_prob", s.occlusion_prob, w);
  read(j, "truncation_prob", s.truncation_prob, w);
  read(j, "noise_level", s.noise_level, w);
  read(j, "min_object_size", s.min_object_size, w);
  read(j, "max_object_size", s.max_object_size, w);
  read(j, "max_overlap_iou", s.max_overlap_iou, w);
}

json model_json(const ModelConfig& m) {
  return json{{"k", m.k},
              {"num_classes", m.num_classes},
              {"backbone_channels", {m.backbone_c1, m.backbone_c2, m.backbone_c3}},
              {"reduce_channels", m.reduce_channels},
              {"hidden_channels", m.hidden_channels},
              {"context", m.use_context},
              {"context_factor", m.context_factor}};
}

void model_from(const json& j, ModelConfig& m) {
  const std::string w = "model";
  check_keys(j, {"k", "num_classes", "backbone_channels", "reduce_channels", "hidden_channels",
                 "context", "context_factor"},
             w);
  read(j, "k", m.k, w);
  read(j, "num_classes", m.num_classes, w);
  if (auto it = j.find("backbone_channels"); it != j.end()) {
    std::vector<std::size_t> c;
    read(j, "backbone_channels", c, w);
    if (c.size() != 3) throw ConfigError("model.backbone_channels: expected 3 entries");
    m.backbone_c1 = c[0];
    m.backbone_c2 = c[1];
    m.backbone_c3 = c[2];
  }
  read(j, "reduce_channels", m.reduce_channels, w);
  read(j, "hidden_channels", m.hidden_channels, w);
  read(j, "context", m.use_context, w);
  read(j, "context_factor", m.context_factor, w);
}

json coupling_json(const CouplingConfig& c) {
  return json{{"normalization", to_string(c.normalization)},
              {"strategy", to_string(c.strategy)},
              {"branches", branches_to_string(c)}};
}

void coupling_from(const json& j, CouplingConfig& c) {
  const std::string w = "coupling";
  check_keys(j, {"normalization", "strategy", "branches"}, w);
  try {
    if (auto it = j.find("normalization"); it != j.end()) {
      c.normalization = parse_normalization(it->get<std::string>());
    }
    if (auto it = j.find("strategy"); it != j.end()) c.strategy = parse_strategy(it->get<std::string>());
    if (auto it = j.find("branches"); it != j.end()) apply_branches(c, it->get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError(w + ": " + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(w + ": " + e.what());
  }
}

json proposals_json(const ProposalConfig& p, const AssignConfig& a) {
  return json{{"jitter_scale", p.jitter_scale},
              {"positives_per_gt", p.positives_per_gt},
              {"negatives_per_image", p.negatives_per_image},
              {"test_proposals", p.test_proposals},
              {"min_extent", p.min_extent},
              {"fg_thresh", a.fg_thresh},
              {"bg_lo", a.bg_lo},
              {"bg_hi", a.bg_hi}};
}

void proposals_from(const json& j, ProposalConfig& p, AssignConfig& a) {
  const std::string w = "proposals";
  check_keys(j, {"jitter_scale", "positives_per_gt", "negatives_per_image", "test_proposals",
                 "min_extent", "fg_thresh", "bg_lo", "bg_hi"},
             w);
  read(j, "jitter_scale", p.jitter_scale, w);
  read(j, "positives_per_gt", p.positives_per_gt, w);
  read(j, "negatives_per_image", p.negatives_per_image, w);
  read(j, "test_proposals", p.test_proposals, w);
  read(j, "min_extent", p.min_extent, w);
  read(j, "fg_thresh", a.fg_thresh, w);
  read(j, "bg_lo", a.bg_lo, w);
  read(j, "bg_hi", a.bg_hi, w);
}

json train_json(const TrainConfig& t) {
  return json{{"lr_values", t.lr_values},
              {"lr_steps", t.lr_steps},
              {"iterations", t.iterations},
              {"momentum", t.momentum},
              {"weight_decay", t.weight_decay},
              {"rois_per_image", t.rois_per_image},
              {"cls_weight", t.cls_weight},
              {"bbox_weight", t.bbox_weight},
              {"ohem", t.ohem},
              {"scales", t.scales},
              {"bbox_std", t.bbox_std},
              {"flip", t.flip},
              {"val_interval", t.val_interval},
              {"val_scenes", t.val_scenes}};
}

void train_from(const json& j, TrainConfig& t) {
  const std::string w = "train";
  check_keys(j, {"lr_values", "lr_steps", "iterations", "momentum", "weight_decay",
                 "rois_per_image", "cls_weight", "bbox_weight", "ohem", "scales", "bbox_std",
                 "flip", "val_interval", "val_scenes"},
             w);
  read(j, "lr_values", t.lr_values, w);
  read(j, "lr_steps", t.lr_steps, w);
  read(j, "iterations", t.iterations, w);
  read(j, "momentum", t.momentum, w);
  read(j, "weight_decay", t.weight_decay, w);
  read(j, "rois_per_image", t.rois_per_image, w);
  read(j, "cls_weight", t.cls_weight, w);
  read(j, "bbox_weight", t.bbox_weight, w);
  read(j, "ohem", t.ohem, w);
  read(j, "scales", t.scales, w);
  read(j, "bbox_std", t.bbox_std, w);
  read(j, "flip", t.flip, w);
  read(j, "val_interval", t.val_interval, w);
  read(j, "val_scenes", t.val_scenes, w);
}

json eval_json(const DetectConfig& d, double score_thresh) {
  return json{{"nms_thresh", d.nms_thresh},
              {"min_score", d.min_score},
              {"max_per_image", d.max_per_image},
              {"proposal_seed", d.proposal_seed},
              {"score_thresh", score_thresh}};
}

void eval_from(const json& j, DetectConfig& d, double& score_thresh) {
  const std::string w = "eval";
  check_keys(j, {"nms_thresh", "min_score", "max_per_image", "proposal_seed", "score_thresh"}, w);
  read(j, "nms_thresh", d.nms_thresh, w);
  read(j, "min_score", d.min_score, w);
  read(j, "max_per_image", d.max_per_image, w);
  read(j, "proposal_seed", d.proposal_seed, w);
  read(j, "score_thresh", score_thresh, w);
}

}  // namespace

std::string branches_to_string(const CouplingConfig& c) {
  if (c.enable_local && c.enable_global) return "both";
  return c.enable_local ? "local" : "global";
}

void apply_branches(CouplingConfig& c, std::string_view branches) {
  if (branches == "both") {
    c.enable_local = c.enable_global = true;
  } else if (branches == "local") {
    c.enable_local = true;
    c.enable_global = false;
  } else if (branches == "global") {
    c.enable_local = false;
    c.enable_global = true;
  } else {
    throw ConfigError("unknown branch selector '" + std::string(branches) +
                      "' (expected local|global|both)");
  }
}

void RunConfig::validate() const {
  if (version != kRunConfigVersion) {
    throw ConfigError("unsupported config version " + std::to_string(version));
  }
  try {
    data.scene.validate();
    model.validate();
    proposals.validate();
    assign.validate();
    train.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (model.num_classes != kNumShapeClasses) {
    throw ConfigError("model.num_classes must equal the " + std::to_string(kNumShapeClasses) +
                      " synthetic classes");
  }
  if (!(detect.nms_thresh > 0.0 && detect.nms_thresh < 1.0)) {
    throw ConfigError("eval.nms_thresh must lie in (0, 1)");
  }
}

TrainSetup RunConfig::train_setup() const {
  return TrainSetup{model, train, proposals, assign, data.scene.noise_level};
}

bool operator==(const RunConfig& a, const RunConfig& b) { return to_json(a) == to_json(b); }

std::string to_json(const RunConfig& c) {
  json j;
  j["version"] = c.version;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["export_images"] = c.export_images;
  j["data"] = data_json(c.data);
  j["model"] = model_json(c.model);
  j["coupling"] = coupling_json(c.model.coupling);
  j["proposals"] = proposals_json(c.proposals, c.assign);
  j["train"] = train_json(c.train);
  j["eval"] = eval_json(c.detect, c.score_thresh);
  return j.dump(2) + "\n";
}

RunConfig run_config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, {"version", "seed", "out_dir", "export_images", "data", "model", "coupling",
                 "proposals", "train", "eval"},
             "config");
  RunConfig c;
  if (!j.contains("version")) throw ConfigError("config: missing 'version' field");
  read(j, "version", c.version, "config");
  read(j, "seed", c.seed, "config");
  read(j, "out_dir", c.out_dir, "config");
  read(j, "export_images", c.export_images, "config");
  if (j.contains("data")) data_from(j["data"], c.data);
  if (j.contains("model")) model_from(j["model"], c.model);
  if (j.contains("coupling")) coupling_from(j["coupling"], c.model.coupling);
  if (j.contains("proposals")) proposals_from(j["proposals"], c.proposals, c.assign);
  if (j.contains("train")) train_from(j["train"], c.train);
  if (j.contains("eval")) eval_from(j["eval"], c.detect, c.score_thresh);
  c.validate();
  return c;
}

}  // namespace couplenet
