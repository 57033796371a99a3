#pragma once

// Experiment runner: config files, persisted run directories, sweeps, charts and sample grids.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fplab/attacks.hpp"
#include "fplab/data.hpp"
#include "fplab/defenses.hpp"
#include "fplab/fl_core.hpp"
#include "fplab/model.hpp"
#include "fplab/psg.hpp"

namespace fplab::harness {

enum class DataSource { synthetic, folder };

struct DataSpec {
    DataSource source = DataSource::synthetic;
    int num_classes = 4;
    int train_per_class = 100;
    int test_per_class = 50;
    int image_size = 16;
    /// Image-folder root; `train/` and `test/` subfolders are used when present.
    std::filesystem::path path;
};

struct ExperimentConfig {
    FederationConfig federation;
    psg::PsgConfig psg;
    attacks::AttackSpec attack;
    defenses::DefenseSpec defense;
    DataSpec data;
    ClassifierSpec classifier;
    std::filesystem::path output_dir = "runs/default";
    /// Round whose submitted models feed the MIS projection; negative means the last round.
    int mis_round = -1;
    bool save_snapshots = false;

    /// Copies shared settings (source/target, seed, poison ratio, class count) into the sub-specs.
    void propagate();
    void validate() const;
};

/// Parses `key = value` lines. Federation fields are unprefixed; the rest live under
/// `psg.`, `attack.`, `defense.`, `data.` and `model.`. Throws InvalidConfig naming the key.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical text form covering every field; parse_config(to_config_text(c)) reproduces c.
std::string to_config_text(const ExperimentConfig& config);

/// Sets one config field from its textual key and value.
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value);

/// Train and test splits for the configured dataset.
std::pair<data::Dataset, data::Dataset> load_data(const ExperimentConfig& config);

struct RunSummary {
    double final_acc = 0.0;
    double final_asr = 0.0;
    /// NaN when not computable (no rounds, or a single role among the projected models).
    double mis = 0.0;
    bool mis_coincident = false;
    int rounds_averaged = 0;
};

/// Mean of the last min(5, rounds) entries.
RunSummary summarize(std::span<const RoundRecord> records);

struct RunOutcome {
    RunSummary summary;
    FederationResult result;
    std::optional<psg::PoisonGenerator> generator;
};

/// Runs one experiment and writes config.txt, rounds.jsonl, final_model.fplb, mis.json and
/// summary.csv into `config.output_dir`.
RunOutcome run_experiment(const ExperimentConfig& config);
RunOutcome run_experiment(const std::filesystem::path& config_path);

inline constexpr const char* kSummaryHeader = "final_acc,final_asr,mis,rounds_averaged";
std::string summary_csv(const RunSummary& summary);
RunSummary read_summary(const std::filesystem::path& run_dir);

struct SweepSpec {
    /// One of pmr, psg_iterations, scaling_factor.
    std::string parameter;
    std::vector<double> values;
    std::vector<std::uint64_t> seeds;

    void validate() const;
};

struct SweepRow {
    double value = 0.0;
    int runs = 0;
    int failed = 0;
    double acc_mean = 0.0, acc_std = 0.0;
    double asr_mean = 0.0, asr_std = 0.0;
    double mis_mean = 0.0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    int failed_runs = 0;
};

/// One run per (value, seed) under `out_dir/<param>=<value>/seed=<seed>`; writes runs.csv and
/// sweep.csv. Failed runs are recorded and skipped.
SweepResult sweep(const SweepSpec& spec, const ExperimentConfig& base, const std::filesystem::path& out_dir);

struct ChartInfo {
    std::filesystem::path file;
    int series = 0;
    int x_ticks = 0;
    int points = 0;
};

/// Renders every chart the directory has inputs for: metrics by round, metrics by swept value
/// and the projected-model scatter. Throws InvalidInput listing expected files when none exist.
std::vector<ChartInfo> emit_plots(const std::filesystem::path& dir);

struct GrayImage {
    int rows = 0;
    int cols = 0;
    int channels = 1;
    std::vector<std::uint8_t> pixels;
};

/// Row r holds `per_checkpoint` samples of checkpoint r, tiles placed edge to edge.
GrayImage export_sample_grid(std::span<const psg::PoisonGenerator> checkpoints, int per_checkpoint,
                             std::uint64_t seed);
void write_png(const GrayImage& image, const std::filesystem::path& path);

/// Recomputes summary.csv and mis.json numbers from the round log; returns a list of mismatches.
std::vector<std::string> check_run(const std::filesystem::path& run_dir);

}  // namespace fplab::harness
