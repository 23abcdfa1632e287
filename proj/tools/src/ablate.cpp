#include "couplenet/tools/ablate.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <thread>

#include "couplenet/eval.hpp"
#include "couplenet/synth.hpp"
#include "couplenet/train.hpp"

namespace couplenet::tools {

namespace {

constexpr const char* kContextSuffix = "+ctx";

std::optional<double> median(std::vector<double> v) {
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string percent(std::optional<double> v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *v);
  return buf;
}

std::string paper_text(const std::string& id) {
  const auto ref = paper_reference(id);
  if (!ref) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", *ref);
  return buf;
}

std::string seed_list(const CellResult& r, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < r.runs.size(); ++i) {
    if (i > 0) out += sep;
    out += r.runs[i].diverged ? std::string("diverged") : percent(r.runs[i].map);
  }
  return out;
}

/// Median mAP with a divergence annotation; "diverged" when no seed finished.
std::string cell_summary(const CellResult& r) {
  const auto m = r.median_map();
  if (!m) return "diverged";
  std::string s = percent(m);
  if (const std::size_t d = r.diverged_count(); d > 0) {
    s += " (" + std::to_string(d) + "/" + std::to_string(r.runs.size()) + " diverged)";
  }
  return s;
}

SeedRun run_one(const RunConfig& base, const AblationCell& cell, std::uint64_t seed,
                const Dataset& data) {
  RunConfig cfg = base;
  cfg.model.coupling = cell.coupling;
  cfg.model.use_context = cell.use_context;
  cfg.validate();
  SeedRun run;
  run.seed = seed;
  try {
    const TrainSetup setup = cfg.train_setup();
    TrainResult trained =
        run_training(data.train, {}, init_model_params(cfg.model, seed), setup, seed);
    const EvalResult ev = evaluate(trained.params, cfg.model, data.test, cfg.proposals,
                                   cfg.data.scene.noise_level, cfg.train.bbox_std, cfg.detect);
    run.map = ev.voc.map;
    run.per_class = ev.voc.per_class;
  } catch (const TrainingDiverged&) {
    run.diverged = true;
    run.per_class.assign(cfg.model.num_classes, std::nullopt);
  }
  return run;
}

}  // namespace

AblationCell parse_cell(const std::string& id) {
  AblationCell cell;
  cell.id = id;
  std::string core = id;
  if (core.ends_with(kContextSuffix)) {
    cell.use_context = true;
    core.resize(core.size() - std::string_view(kContextSuffix).size());
  }
  try {
    if (core == "local" || core == "global") {
      apply_branches(cell.coupling, core);
      return cell;
    }
    const auto dash = core.find('-');
    if (dash == std::string::npos) throw ConfigError("");
    cell.coupling.normalization = parse_normalization(core.substr(0, dash));
    cell.coupling.strategy = parse_strategy(core.substr(dash + 1));
  } catch (const std::invalid_argument&) {
    throw ConfigError("unknown ablation cell '" + id +
                      "' (expected <none|l2|conv>-<sum|prod|max>, local or global, optionally "
                      "with +ctx)");
  }
  return cell;
}

std::vector<AblationCell> default_cells(bool with_context) {
  std::vector<AblationCell> cells;
  for (const char* norm : {"none", "l2", "conv"}) {
    for (const char* strategy : {"sum", "prod", "max"}) {
      cells.push_back(parse_cell(std::string(norm) + "-" + strategy));
    }
  }
  cells.push_back(parse_cell("local"));
  cells.push_back(parse_cell("global"));
  if (with_context) cells.push_back(parse_cell("conv-sum+ctx"));
  return cells;
}

std::optional<double> CellResult::median_map() const {
  std::vector<double> v;
  for (const SeedRun& r : runs) {
    if (!r.diverged) v.push_back(r.map);
  }
  return median(std::move(v));
}

std::optional<double> CellResult::median_class_ap(std::size_t class_index) const {
  std::vector<double> v;
  for (const SeedRun& r : runs) {
    if (!r.diverged && class_index < r.per_class.size() && r.per_class[class_index]) {
      v.push_back(*r.per_class[class_index]);
    }
  }
  return median(std::move(v));
}

std::size_t CellResult::diverged_count() const {
  return static_cast<std::size_t>(
      std::count_if(runs.begin(), runs.end(), [](const SeedRun& r) { return r.diverged; }));
}

std::vector<CellResult> run_ablation(const AblationOptions& options) {
  if (options.seeds.empty()) throw ConfigError("ablate: need at least one seed");
  if (options.cells.empty()) throw ConfigError("ablate: need at least one cell");
  options.base.validate();
  const Dataset data = generate_dataset(options.base.data);

  std::vector<CellResult> results(options.cells.size());
  const std::size_t n_seeds = options.seeds.size();
  for (std::size_t c = 0; c < options.cells.size(); ++c) {
    results[c].cell = options.cells[c];
    results[c].runs.resize(n_seeds);
  }
  const std::size_t total = options.cells.size() * n_seeds;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t job = next++; job < total; job = next++) {
      const std::size_t c = job / n_seeds;
      const std::size_t s = job % n_seeds;
      try {
        results[c].runs[s] = run_one(options.base, options.cells[c], options.seeds[s], data);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const unsigned jobs = std::max(1U, std::min<unsigned>(options.jobs, static_cast<unsigned>(total)));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> threads;
    for (unsigned t = 0; t < jobs; ++t) threads.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

std::optional<double> paper_reference(const std::string& cell_id) {
  static const std::map<std::string, double> kReference = {
      {"none-sum", 81.1}, {"none-max", 80.7}, {"l2-sum", 80.3},  {"l2-prod", 63.5},
      {"l2-max", 78.2},   {"conv-sum", 81.7}, {"conv-max", 81.3}, {"local", 78.6},
      {"global", 78.5},   {"conv-sum+ctx", 82.1}};
  const auto it = kReference.find(cell_id);
  if (it == kReference.end()) return std::nullopt;
  return it->second;
}

std::string format_markdown(const std::vector<CellResult>& results,
                            const std::vector<std::uint64_t>& seeds) {
  std::map<std::string, const CellResult*> by_id;
  for (const CellResult& r : results) by_id[r.cell.id] = &r;

  std::string out = "# Normalization x coupling ablation\n\n";
  out += "Median mAP@0.5 (%) over seeds";
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    out += (i == 0 ? " " : ", ") + std::to_string(seeds[i]);
  }
  out += ". Paper VOC07 values in brackets, for qualitative comparison only.\n\n";
  out += "| Normalization methods | SUM | PROD | MAX |\n|---|---|---|---|\n";
  const std::pair<const char*, const char*> rows[] = {
      {"none", "eltwise"}, {"l2", "L2+eltwise"}, {"conv", "1x1 conv+eltwise"}};
  for (const auto& [norm, label] : rows) {
    out += std::string("| ") + label;
    for (const char* strategy : {"sum", "prod", "max"}) {
      const std::string id = std::string(norm) + "-" + strategy;
      const auto it = by_id.find(id);
      out += " | " + (it == by_id.end() ? std::string("not run") : cell_summary(*it->second)) +
             " [" + paper_text(id) + "]";
    }
    out += " |\n";
  }

  out += "\n## Cells\n\n| Cell | Branches | Context | mAP per seed | Median mAP |";
  for (auto name : kShapeClassNames) out += " " + std::string(name) + " AP |";
  out += " Paper |\n|---|---|---|---|---|";
  for (std::size_t i = 0; i < kNumShapeClasses; ++i) out += "---|";
  out += "---|\n";
  for (const CellResult& r : results) {
    out += "| " + r.cell.id + " | " + branches_to_string(r.cell.coupling) + " | " +
           (r.cell.use_context ? "on" : "off") + " | " + seed_list(r, ", ") + " | " +
           cell_summary(r) + " |";
    for (std::size_t c = 0; c < kNumShapeClasses; ++c) out += " " + percent(r.median_class_ap(c)) + " |";
    out += " " + paper_text(r.cell.id) + " |\n";
  }
  return out;
}

std::string format_csv(const std::vector<CellResult>& results,
                       const std::vector<std::uint64_t>& seeds) {
  std::string out = "cell,normalization,strategy,branches,context";
  for (std::uint64_t s : seeds) out += ",map_seed_" + std::to_string(s);
  out += ",median_map,diverged";
  for (auto name : kShapeClassNames) out += ",ap_" + std::string(name);
  out += ",paper_map\n";
  for (const CellResult& r : results) {
    const bool single = !r.cell.coupling.coupled();
    out += r.cell.id + "," + to_string(r.cell.coupling.normalization) + "," +
           (single ? std::string("-") : to_string(r.cell.coupling.strategy)) + "," +
           branches_to_string(r.cell.coupling) + "," + (r.cell.use_context ? "on" : "off") + "," +
           seed_list(r, ",") + "," + percent(r.median_map()) + "," +
           std::to_string(r.diverged_count());
    for (std::size_t c = 0; c < kNumShapeClasses; ++c) out += "," + percent(r.median_class_ap(c));
    out += "," + paper_text(r.cell.id) + "\n";
  }
  return out;
}

}  // namespace couplenet::tools
