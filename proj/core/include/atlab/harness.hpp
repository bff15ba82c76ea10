#pragma once
// Experiment harness: expands named trick presets into training configs, runs
// repeat grids with hierarchical seeds, and reduces the stored RunLogs to
// summary tables and plot-ready curve files.

#include <cstdint>
#include <string>
#include <vector>

#include "atlab/data.hpp"
#include "atlab/runlog.hpp"
#include "atlab/training.hpp"

namespace atlab {

/// Dataset selector shared by the CLI and experiment specs.  Synthetic data is
/// described by its generator parameters, CIFAR by the directory holding the
/// binary batches.
struct DataSpec {
  std::string kind = "synth";  // synth | cifar10 | cifar100
  std::string dir;             // batch directory, cifar kinds only
  int64_t n = 5000;            // synthetic train-split size
  int64_t classes = 10;        // synthetic class count
  int64_t image_size = 16;     // synthetic image side length
  uint64_t seed = 77;

  bool operator==(const DataSpec&) const = default;
};

void validate(const DataSpec& spec);
DatasetHandle load_data(const DataSpec& spec);

/// Pins the model geometry (channels, spatial size, class count) to what the
/// dataset will provide, without touching the disk.
void sync_model_geometry(TrainConfig& cfg, const DataSpec& data);

/// Named single-trick switches applied on top of a base config.  "vanilla" is
/// the identity and exists so baseline rows carry an explicit label.
std::vector<std::string> preset_names();
void apply_preset(TrainConfig& cfg, const std::string& name);

struct RunSpec {
  std::string label;
  TrainConfig config;  // fully resolved; the per-repeat seed is derived later
  int64_t repeats = 1;

  bool operator==(const RunSpec&) const = default;
};

struct ExperimentSpec {
  std::string name = "experiment";
  DataSpec data;
  /// Starting point for baseline expansion and for JSON run entries that give
  /// a preset or overrides instead of a full config.
  TrainConfig base;
  std::vector<RunSpec> runs;
  /// Preset names appended as extra runs (label = preset name, config = base
  /// with the preset applied) so comparison rows need not be spelled out.
  std::vector<std::string> baselines;
  int64_t baseline_repeats = 1;
  std::string output_dir = "runs";
  uint64_t seed = 0;
  int64_t workers = 1;

  bool operator==(const ExperimentSpec&) const = default;
};

/// Explicit runs followed by the expanded baselines, geometry synced to the
/// dataset.  Labels must be unique across the full list.
std::vector<RunSpec> expanded_runs(const ExperimentSpec& spec);

/// Validates the spec and every resolved run config before anything executes.
void validate(const ExperimentSpec& spec);

std::string to_json(const ExperimentSpec& spec);
ExperimentSpec experiment_from_json(const std::string& text);

/// Seed for one repeat of one run.  Hashes the label rather than the run index
/// so adding runs or repeats never perturbs an existing run's streams.
uint64_t run_seed(uint64_t experiment_seed, const std::string& label, int64_t repeat);

/// One row per run label, reduced purely from the runlog.json files on disk.
/// Accuracy statistics cover the completed (non-diverged) repeats; the mean
/// and sample variance are taken across repeats of the final evaluation.
struct SummaryRow {
  std::string label;
  int64_t repeats = 0;    // logs found
  int64_t diverged = 0;   // logs flagged diverged, excluded from the stats
  double clean_mean = 0.0;
  double clean_var = 0.0;
  double robust_mean = 0.0;
  double robust_var = 0.0;
  int64_t collapse_events = 0;  // summed over all repeats

  bool operator==(const SummaryRow&) const = default;
};

/// Runs every repeat of every expanded run under
///   <output_dir>/<name>/<label>/rep<k>/
/// skipping repeats whose runlog.json already exists, then rewrites spec.json
/// and summary.csv in the experiment directory.  Returns the summary rows.
std::vector<SummaryRow> run_experiment(const ExperimentSpec& spec);

/// Rebuilds the rows from an experiment directory, sorted by label.  Reads
/// only stored logs; calling it again changes nothing on disk.
std::vector<SummaryRow> summarize(const std::string& experiment_dir);

std::string summary_csv(const std::vector<SummaryRow>& rows);
void write_summary_csv(const std::vector<SummaryRow>& rows, const std::string& path);

/// Writes curve_<metric>.csv per logged metric, rows "epoch,<metric>,collapse",
/// and returns the paths written.  Identical logs produce identical bytes.
std::vector<std::string> emit_curves(const RunLog& log, const std::string& out_dir);

/// Accepts "8/255" style rationals as well as plain decimals.
double parse_ratio(const std::string& text);

/// Entry point behind the atlab binary: verbs train, eval, sweep, summarize,
/// curves.  Exit codes: 0 success, 2 config or io error, 3 divergence.
int cli_main(int argc, char** argv);

}  // namespace atlab
