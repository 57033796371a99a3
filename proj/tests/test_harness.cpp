#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>

#include "fplab/errors.hpp"
#include "fplab/harness.hpp"
#include "fplab/io.hpp"
#include "fplab/metrics.hpp"
#include "support.hpp"

using namespace fplab;
using namespace fplab::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("fplab_test_harness_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

const char* kTinyConfig = R"(# small and fast
n_clients = 6
clients_per_round = 4
rounds = 3
local_epochs = 1
pmr = 0.34
poison_start_round = 1
attack.kind = poicgan
psg.iterations = 2
psg.batch_size = 4
data.classes = 3
data.train_per_class = 20
data.test_per_class = 10
data.image_size = 8
)";

ExperimentConfig tiny(const fs::path& out) {
    auto c = parse_config(kTinyConfig);
    c.output_dir = out;
    return c;
}

int cli(const std::string& args) {
    const std::string cmd = std::string(FPLAB_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) { return io::read_text(p); }

}  // namespace

TEST_CASE("fplb round trip and header") {
    const auto dir = scratch("fplb");
    const std::vector<double> v{0.0, -1.5, 3.25, 1e-3};
    io::write_fplb(dir / "v.fplb", v);
    const auto bytes = slurp(dir / "v.fplb");
    REQUIRE(bytes.size() == 16 + 4 * v.size());
    CHECK(bytes.substr(0, 4) == "FPLB");
    CHECK(static_cast<unsigned char>(bytes[4]) == 1);
    CHECK(static_cast<unsigned char>(bytes[8]) == 4);
    // 3.25f = 0x40500000, little-endian.
    CHECK(static_cast<unsigned char>(bytes[16 + 8 + 3]) == 0x40);
    CHECK(static_cast<unsigned char>(bytes[16 + 8 + 2]) == 0x50);
    const auto back = io::read_fplb(dir / "v.fplb");
    REQUIRE(back.size() == v.size());
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(back[i] == doctest::Approx(v[i]).epsilon(1e-7));

    std::ofstream(dir / "bad.fplb") << "XXXX0000";
    CHECK_THROWS_AS(io::read_fplb(dir / "bad.fplb"), InvalidInput);
    fs::remove_all(dir);
}

TEST_CASE("round log round trip") {
    RoundRecord r;
    r.round = 4;
    r.selected_ids = {1, 3};
    r.acc = 0.75;
    r.asr = 0.125;
    r.class_acc = {1.0, std::nan(""), 0.5};
    r.defense_diagnostics = {{"admitted", 3.0}};
    r.mis = 2.5;
    const auto back = io::round_from_json(io::to_json(r));
    CHECK(back.round == 4);
    CHECK(back.selected_ids == r.selected_ids);
    CHECK(back.acc == 0.75);
    CHECK(std::isnan(back.class_acc[1]));
    CHECK(back.defense_diagnostics.at("admitted") == 3.0);
    CHECK(back.mis == 2.5);
}

TEST_CASE("config text") {
    const auto c = parse_config(kTinyConfig);
    CHECK(c.federation.n_clients == 6);
    CHECK(c.attack.kind == attacks::AttackKind::poicgan);
    CHECK(c.data.image_size == 8);
    const auto again = parse_config(to_config_text(c));
    CHECK(to_config_text(again) == to_config_text(c));

    try {
        parse_config("n_clients = 4\nbogus_key = 1\n");
        FAIL("expected InvalidConfig");
    } catch (const InvalidConfig& e) {
        CHECK(std::string(e.what()).find("bogus_key") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config("rounds = many"), InvalidConfig);
    CHECK_THROWS_AS(parse_config("defense.kind = median"), InvalidConfig);

    auto k = parse_config("defense.kind = krum\nclients_per_round = 4\npmr = 0.5\n");
    CHECK_THROWS_AS(k.validate(), InvalidConfig);
}

TEST_CASE("run directory contents") {
    const auto dir = scratch("run");
    const auto out = run_experiment(tiny(dir / "a"));
    for (const char* f : {"config.txt", "rounds.jsonl", "final_model.fplb", "mis.json", "summary.csv",
                          "generator.fplb", "generator.json"})
        CHECK_MESSAGE(fs::exists(dir / "a" / f), f);
    CHECK(io::read_round_log(dir / "a" / "rounds.jsonl").size() == 3);
    CHECK(check_run(dir / "a").empty());
    const auto s = read_summary(dir / "a");
    CHECK(s.final_acc == doctest::Approx(out.summary.final_acc));
    CHECK(s.rounds_averaged == 3);

    SUBCASE("rerunning gives byte-identical logs") {
        run_experiment(tiny(dir / "b"));
        CHECK(slurp(dir / "a" / "rounds.jsonl") == slurp(dir / "b" / "rounds.jsonl"));
        CHECK(slurp(dir / "a" / "summary.csv") == slurp(dir / "b" / "summary.csv"));
    }
    SUBCASE("a tampered summary is reported") {
        io::write_text(dir / "a" / "summary.csv", std::string(kSummaryHeader) + "\n0.5,0.5,1,3\n");
        CHECK(!check_run(dir / "a").empty());
    }
    fs::remove_all(dir);
}

TEST_CASE("zero rounds still produces a run directory") {
    const auto dir = scratch("zero");
    auto c = tiny(dir);
    c.federation.rounds = 0;
    const auto out = run_experiment(c);
    CHECK(out.result.records.empty());
    CHECK(fs::exists(dir / "summary.csv"));
    CHECK(io::read_round_log(dir / "rounds.jsonl").empty());
    CHECK(nlohmann::json::parse(slurp(dir / "mis.json"))["mis"].is_null());
    CHECK(check_run(dir).empty());
    fs::remove_all(dir);
}

TEST_CASE("summaries average the last five rounds") {
    std::vector<RoundRecord> recs(7);
    for (int i = 0; i < 7; ++i) {
        recs[i].round = i;
        recs[i].acc = i;
        recs[i].asr = 10 - i;
    }
    recs[6].mis = 1.5;
    const auto s = summarize(recs);
    CHECK(s.final_acc == doctest::Approx(4.0));
    CHECK(s.final_asr == doctest::Approx(6.0));
    CHECK(s.rounds_averaged == 5);
    CHECK(s.mis == 1.5);
    const auto two = summarize(std::span(recs).first(2));
    CHECK(two.final_acc == doctest::Approx(0.5));
    CHECK(std::isnan(two.mis));
}

TEST_CASE("sweeps") {
    const auto dir = scratch("sweep");
    auto base = tiny(dir);
    base.attack.kind = attacks::AttackKind::tdp_label_flip;

    SweepSpec spec{"pmr", {0.2, 0.34, 0.5}, {1, 2, 3}};
    const auto r = sweep(spec, base, dir / "grid");
    CHECK(r.failed_runs == 0);
    REQUIRE(r.rows.size() == 3);
    for (const auto& row : r.rows) CHECK(row.runs == 3);
    int run_dirs = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir / "grid"))
        if (e.path().filename() == "summary.csv") ++run_dirs;
    CHECK(run_dirs == 9);
    std::ifstream in(dir / "grid" / "sweep.csv");
    int lines = 0;
    for (std::string l; std::getline(in, l);) ++lines;
    CHECK(lines == 4);

    SUBCASE("a single run reduces to its own summary") {
        SweepSpec one{"scaling_factor", {2.0}, {7}};
        const auto s = sweep(one, base, dir / "one");
        REQUIRE(s.rows.size() == 1);
        const auto summary = read_summary(dir / "one" / "scaling_factor=2" / "seed=7");
        CHECK(s.rows[0].acc_mean == summary.final_acc);
        CHECK(s.rows[0].asr_mean == summary.final_asr);
        CHECK(s.rows[0].acc_std == 0.0);
    }
    SUBCASE("invalid specs") {
        CHECK_THROWS_AS(sweep(SweepSpec{"rounds", {1}, {1}}, base, dir / "x"), InvalidConfig);
        CHECK_THROWS_AS(sweep(SweepSpec{"pmr", {}, {1}}, base, dir / "x"), InvalidConfig);
        CHECK_THROWS_AS(sweep(SweepSpec{"pmr", {0.2}, {}}, base, dir / "x"), InvalidConfig);
    }
    fs::remove_all(dir);
}

TEST_CASE("plots") {
    const auto dir = scratch("plots");
    CHECK_THROWS_AS(emit_plots(dir), InvalidInput);

    io::write_text(dir / "rounds.jsonl", "");
    auto charts = emit_plots(dir);
    REQUIRE(charts.size() == 1);
    CHECK(charts[0].x_ticks == 0);
    CHECK(fs::exists(dir / "metrics_by_round.png"));

    std::vector<RoundRecord> recs(3);
    for (int i = 0; i < 3; ++i) recs[i].round = i;
    io::write_round_log(dir / "rounds.jsonl", recs);
    charts = emit_plots(dir);
    CHECK(charts[0].x_ticks == 3);
    CHECK(charts[0].series == 2);

    std::vector<RoundRecord> many(40);
    for (int i = 0; i < 40; ++i) many[i].round = i;
    io::write_round_log(dir / "rounds.jsonl", many);
    CHECK(emit_plots(dir)[0].x_ticks <= 11);

    metrics::MisReport rep;
    for (int i = 0; i < 5; ++i)
        rep.points.push_back({{double(i), double(i % 2)}, i < 2 ? Role::malicious : Role::benign, i});
    rep.mis = 1.0;
    io::write_text(dir / "mis.json", metrics::to_json(rep).dump());
    charts = emit_plots(dir);
    REQUIRE(charts.size() == 2);
    CHECK(charts[1].points == 5);
    CHECK(fs::exists(dir / "mis_scatter.png"));
    fs::remove_all(dir);
}

TEST_CASE("sample grid layout") {
    const auto set = data::synth_texture_dataset(2, 10, 8, 2);
    psg::PsgConfig c;
    c.iterations = 2;
    c.batch_size = 4;
    const auto g = psg::train_psg(set, c);

    const std::vector<psg::PoisonGenerator> one{g};
    const auto single = export_sample_grid(one, 1, 3);
    CHECK(single.rows == 8);
    CHECK(single.cols == 8);

    const std::vector<psg::PoisonGenerator> four(4, g);
    const auto grid = export_sample_grid(four, 8, 3);
    CHECK(grid.rows == 32);
    CHECK(grid.cols == 64);
    REQUIRE(grid.pixels.size() == 32u * 64u);
    // Tile (r, k) is sample k of checkpoint r, mapped to bytes.
    const auto samples = psg::generate_poison_set(g, 8, 3);
    for (int k = 0; k < 8; ++k)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                CHECK(grid.pixels[(16 + y) * 64 + k * 8 + x] == data::to_byte(samples.samples[k].pixels[y * 8 + x]));

    const auto dir = scratch("grid");
    write_png(grid, dir / "grid.png");
    const auto img = cv::imread((dir / "grid.png").string(), cv::IMREAD_UNCHANGED);
    CHECK(img.rows == 32);
    CHECK(img.cols == 64);
    CHECK_THROWS_AS(export_sample_grid({}, 8, 3), InvalidInput);
    fs::remove_all(dir);
}

TEST_CASE("later checkpoints produce images closer to the source class") {
    const auto all = data::synth_texture_dataset(4, 100, 16, 21);
    const auto set = data::stratified_split(all, 25, 21).first;
    psg::PsgConfig c;
    c.iterations = 150;
    c.seed = 5;
    std::vector<psg::PoisonGenerator> cps;
    const std::vector<int> at{1, 150};
    psg::train_psg_state(set, c, at, [&](const psg::PoisonGenerator& g) { cps.push_back(g); });
    REQUIRE(cps.size() == 2);

    const auto source = data::filter_by_label(set, 0);
    auto nearest = [&](const psg::PoisonGenerator& g) {
        const auto p = psg::generate_poison_set(g, 32, 4);
        double total = 0.0;
        for (const auto& s : p.samples) {
            double best = 1e300;
            for (const auto& r : source.samples) {
                double d = 0.0;
                for (std::size_t j = 0; j < s.pixels.size(); ++j) d += (s.pixels[j] - r.pixels[j]) * (s.pixels[j] - r.pixels[j]);
                best = std::min(best, d);
            }
            total += std::sqrt(best);
        }
        return total / p.size();
    };
    CHECK(nearest(cps[1]) < nearest(cps[0]));
}

TEST_CASE("command line exit codes") {
    const auto dir = scratch("cli");
    io::write_text(dir / "good.txt", kTinyConfig);
    io::write_text(dir / "bad.txt", std::string(kTinyConfig) + "rounds = -2\n");
    io::write_text(dir / "unknown.txt", "whatever = 3\n");

    CHECK(cli("run --config " + (dir / "good.txt").string() + " --out " + (dir / "run").string()) == 0);
    CHECK(fs::exists(dir / "run" / "summary.csv"));
    CHECK(cli("check --out " + (dir / "run").string()) == 0);
    CHECK(cli("plot --out " + (dir / "run").string()) == 0);
    CHECK(fs::exists(dir / "run" / "metrics_by_round.png"));
    CHECK(cli("run --config " + (dir / "bad.txt").string()) == 2);
    CHECK(cli("run --config " + (dir / "unknown.txt").string()) == 2);
    CHECK(cli("plot --out " + (dir / "nothing").string()) == 1);
    CHECK(cli("gen-data --config " + (dir / "good.txt").string() + " --out " + (dir / "data").string()) == 0);
    CHECK(fs::exists(dir / "data" / "train" / "manifest.json"));
    CHECK(cli("sweep --config " + (dir / "good.txt").string() + " --out " + (dir / "sw").string() +
              " --param pmr --values 0.2,0.4 --seeds 1") == 0);
    CHECK(fs::exists(dir / "sw" / "sweep.csv"));
    CHECK(cli("sweep --config " + (dir / "good.txt").string() + " --out " + (dir / "sw2").string() +
              " --param pmr --values 0.2,abc --seeds 1") == 2);
    fs::remove_all(dir);
}
