#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>

#include "fplab/errors.hpp"
#include "fplab/harness.hpp"
#include "fplab/io.hpp"
#include "fplab/psg.hpp"
#include "fplab/rng.hpp"

namespace fs = std::filesystem;
using namespace fplab;

namespace {

template <typename T>
std::vector<T> split_csv(const std::string& text, const char* what) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        std::istringstream cs(cell);
        T v{};
        if (!(cs >> v) || !(cs >> std::ws).eof()) throw InvalidConfig(std::string(what) + ": bad entry '" + cell + "'");
        out.push_back(v);
    }
    return out;
}

harness::ExperimentConfig config_from(const std::string& path, const std::optional<std::uint64_t>& seed) {
    auto c = path.empty() ? harness::ExperimentConfig{} : harness::load_config(path);
    if (seed) c.federation.seed = *seed;
    c.propagate();
    return c;
}

void print_summary(const harness::RunSummary& s) {
    std::printf("final_acc=%.4f final_asr=%.4f mis=%g\n", s.final_acc, s.final_asr, s.mis);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated poisoning lab"};
    app.require_subcommand(1);

    std::string config_path, out_dir, param, values, seeds, checkpoints = "100,200,300,400";
    std::optional<std::uint64_t> seed;
    int per_checkpoint = 8;

    auto* gen = app.add_subcommand("gen-data", "export the configured synthetic dataset as image folders");
    gen->add_option("--config", config_path)->check(CLI::ExistingFile);
    gen->add_option("--out", out_dir)->required();
    gen->add_option("--seed", seed);

    auto* run = app.add_subcommand("run", "run one experiment");
    run->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
    run->add_option("--out", out_dir);
    run->add_option("--seed", seed);

    auto* sw = app.add_subcommand("sweep", "run one experiment per (value, seed)");
    sw->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
    sw->add_option("--out", out_dir)->required();
    sw->add_option("--param", param)->required();
    sw->add_option("--values", values)->required();
    sw->add_option("--seeds", seeds)->required();

    auto* plot = app.add_subcommand("plot", "render charts for a run or sweep directory");
    plot->add_option("--out,dir", out_dir)->required();

    auto* grid = app.add_subcommand("grid", "train the poison generator and export a checkpoint sample grid");
    grid->add_option("--config", config_path)->check(CLI::ExistingFile);
    grid->add_option("--out", out_dir)->required();
    grid->add_option("--seed", seed);
    grid->add_option("--checkpoints", checkpoints);
    grid->add_option("--per-checkpoint", per_checkpoint);

    auto* check = app.add_subcommand("check", "verify a run directory's summary against its round log");
    check->add_option("--out,dir", out_dir)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            auto c = config_from(config_path, seed);
            c.validate();
            const auto [train, test] = harness::load_data(c);
            data::export_image_folder(train, fs::path(out_dir) / "train");
            data::export_image_folder(test, fs::path(out_dir) / "test");
            std::printf("wrote %zu train and %zu test images to %s\n", train.size(), test.size(), out_dir.c_str());
        } else if (*run) {
            auto c = config_from(config_path, seed);
            if (!out_dir.empty()) c.output_dir = out_dir;
            const auto outcome = harness::run_experiment(c);
            print_summary(outcome.summary);
        } else if (*sw) {
            harness::SweepSpec spec{param, split_csv<double>(values, "--values"),
                                    split_csv<std::uint64_t>(seeds, "--seeds")};
            const auto base = config_from(config_path, std::nullopt);
            const auto result = harness::sweep(spec, base, out_dir);
            for (const auto& r : result.rows)
                std::printf("%s=%g runs=%d acc=%.4f+-%.4f asr=%.4f+-%.4f\n", param.c_str(), r.value, r.runs,
                            r.acc_mean, r.acc_std, r.asr_mean, r.asr_std);
            if (result.failed_runs > 0) {
                std::fprintf(stderr, "%d run(s) failed; see %s/runs.csv\n", result.failed_runs, out_dir.c_str());
                return 1;
            }
        } else if (*plot) {
            for (const auto& chart : harness::emit_plots(out_dir)) std::printf("%s\n", chart.file.c_str());
        } else if (*grid) {
            auto c = config_from(config_path, seed);
            c.validate();
            const auto [train, test] = harness::load_data(c);
            auto cfg = c.psg;
            const auto marks = split_csv<int>(checkpoints, "--checkpoints");
            if (marks.empty()) throw InvalidConfig("--checkpoints: need at least one iteration");
            cfg.iterations = *std::max_element(marks.begin(), marks.end());
            std::vector<psg::PoisonGenerator> gens;
            psg::train_psg_state(train, cfg, marks, [&](const psg::PoisonGenerator& g) { gens.push_back(g); });
            const auto image = harness::export_sample_grid(gens, per_checkpoint, derive_seed(c.federation.seed, {stream::poison}));
            harness::write_png(image, fs::path(out_dir) / "sample_grid.png");
            for (std::size_t i = 0; i < gens.size(); ++i)
                io::save_generator(gens[i], fs::path(out_dir) / ("generator_" + std::to_string(gens[i].training_iterations) + ".fplb"));
            std::printf("%s\n", (fs::path(out_dir) / "sample_grid.png").c_str());
        } else if (*check) {
            const auto problems = harness::check_run(out_dir);
            for (const auto& p : problems) std::printf("MISMATCH %s\n", p.c_str());
            if (!problems.empty()) return 1;
            std::printf("consistent\n");
        }
    } catch (const InvalidConfig& e) {
        std::fprintf(stderr, "invalid config: %s\n", e.what());
        return 2;
    } catch (const RoundError& e) {
        std::fprintf(stderr, "run failed in round %d: %s\n", e.round(), e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
