#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "couplenet/config.hpp"

namespace couplenet::tools {

/// One configuration of the ablation grid.
struct AblationCell {
  std::string id;  ///< e.g. "conv-sum", "l2-prod", "local", "global", "conv-sum+ctx"
  CouplingConfig coupling;
  bool use_context = false;
};

/// Parses a cell id. Accepted forms: <norm>-<strategy> with norm in
/// none|l2|conv and strategy in sum|prod|max, "local", "global", each
/// optionally suffixed with "+ctx". Throws ConfigError otherwise.
AblationCell parse_cell(const std::string& id);

/// The nine normalization x strategy cells followed by the two single-branch
/// baselines, optionally followed by the context variant of conv-sum.
std::vector<AblationCell> default_cells(bool with_context);

struct SeedRun {
  std::uint64_t seed = 0;
  bool diverged = false;
  double map = 0.0;                                ///< mAP@0.5 in [0, 1]
  std::vector<std::optional<double>> per_class;    ///< AP@0.5 per class
};

struct CellResult {
  AblationCell cell;
  std::vector<SeedRun> runs;

  /// Median over runs that did not diverge; nullopt when all diverged.
  [[nodiscard]] std::optional<double> median_map() const;
  [[nodiscard]] std::optional<double> median_class_ap(std::size_t class_index) const;
  [[nodiscard]] std::size_t diverged_count() const;
};

struct AblationOptions {
  RunConfig base;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::vector<AblationCell> cells = default_cells(false);
  unsigned jobs = 1;  ///< concurrent (cell, seed) runs
};

/// Trains and evaluates every (cell, seed) pair on the dataset described by
/// base.data. Runs are independent; results do not depend on `jobs`.
std::vector<CellResult> run_ablation(const AblationOptions& options);

/// Reference values from the paper's normalization x coupling table
/// (VOC07 mAP %), keyed by cell id; absent for cells the paper did not run.
std::optional<double> paper_reference(const std::string& cell_id);

/// Markdown report: a grid with the paper table's rows (normalization) and
/// columns (SUM / PROD / MAX), then one detail row per cell that was run.
std::string format_markdown(const std::vector<CellResult>& results,
                            const std::vector<std::uint64_t>& seeds);

/// CSV with a header and one row per cell.
std::string format_csv(const std::vector<CellResult>& results,
                       const std::vector<std::uint64_t>& seeds);

}  // namespace couplenet::tools
