#include "fplab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fplab/errors.hpp"
#include "fplab/io.hpp"
#include "fplab/metrics.hpp"
#include "fplab/rng.hpp"

namespace fplab::harness {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

int parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const long long x = std::stoll(v, &used);
        if (used == v.size() && x >= INT32_MIN && x <= INT32_MAX) return static_cast<int>(x);
    } catch (const std::exception&) {
    }
    throw InvalidConfig(key + ": expected an integer, got '" + v + "'");
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        if (!v.empty() && v[0] != '-') {
            const auto x = std::stoull(v, &used);
            if (used == v.size()) return x;
        }
    } catch (const std::exception&) {
    }
    throw InvalidConfig(key + ": expected a non-negative integer, got '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used == v.size()) return x;
    } catch (const std::exception&) {
    }
    throw InvalidConfig(key + ": expected a number, got '" + v + "'");
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw InvalidConfig(key + ": expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string short_fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)>;

#define FPLAB_INT(field) [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.field = parse_int(k, v); }
#define FPLAB_DBL(field) \
    [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.field = parse_double(k, v); }

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"n_clients", FPLAB_INT(federation.n_clients)},
        {"clients_per_round", FPLAB_INT(federation.clients_per_round)},
        {"rounds", FPLAB_INT(federation.rounds)},
        {"local_epochs", FPLAB_INT(federation.local_epochs)},
        {"learning_rate", FPLAB_DBL(federation.learning_rate)},
        {"batch_size", FPLAB_INT(federation.batch_size)},
        {"optimizer",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             if (v == "adam") c.federation.optimizer = LocalOptimizer::adam;
             else if (v == "sgd") c.federation.optimizer = LocalOptimizer::sgd;
             else throw InvalidConfig(k + ": expected adam or sgd, got '" + v + "'");
         }},
        {"pmr", FPLAB_DBL(federation.pmr)},
        {"poison_start_round", FPLAB_INT(federation.poison_start_round)},
        {"scaling_factor", FPLAB_DBL(federation.scaling_factor)},
        {"source_class", FPLAB_INT(federation.source_class)},
        {"target_class", FPLAB_INT(federation.target_class)},
        {"poison_ratio", FPLAB_DBL(federation.poison_ratio)},
        {"seed", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.federation.seed = parse_u64(k, v); }},
        {"output_dir", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.output_dir = v; }},
        {"mis_round", FPLAB_INT(mis_round)},
        {"save_snapshots",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.save_snapshots = parse_bool(k, v); }},

        {"psg.iterations", FPLAB_INT(psg.iterations)},
        {"psg.batch_size", FPLAB_INT(psg.batch_size)},
        {"psg.noise_dim", FPLAB_INT(psg.noise_dim)},
        {"psg.gen_lr", FPLAB_DBL(psg.gen_lr)},
        {"psg.disc_lr", FPLAB_DBL(psg.disc_lr)},
        {"psg.beta1", FPLAB_DBL(psg.beta1)},
        {"psg.arch_scale", FPLAB_INT(psg.arch_scale)},
        {"psg.generator_loss",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             if (v == "nonsaturating") c.psg.generator_loss_form = psg::GeneratorLossForm::nonsaturating;
             else if (v == "literal") c.psg.generator_loss_form = psg::GeneratorLossForm::literal_alg1;
             else throw InvalidConfig(k + ": expected nonsaturating or literal, got '" + v + "'");
         }},

        {"attack.kind",
         [](ExperimentConfig& c, const std::string&, const std::string& v) {
             c.attack.kind = attacks::parse_attack_kind(v);
         }},
        {"attack.boost", FPLAB_DBL(attack.boost)},
        {"attack.source", FPLAB_INT(federation.source_class)},
        {"attack.target", FPLAB_INT(federation.target_class)},

        {"defense.kind",
         [](ExperimentConfig& c, const std::string&, const std::string& v) {
             c.defense.kind = defenses::parse_defense_kind(v);
         }},
        {"defense.krum_f", FPLAB_INT(defense.krum_f)},
        {"defense.rlr_threshold", FPLAB_INT(defense.rlr_threshold)},
        {"defense.rlr_lr", FPLAB_DBL(defense.rlr_lr)},
        {"defense.flame_noise", FPLAB_DBL(defense.flame_noise)},

        {"data.source",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             if (v == "synthetic") c.data.source = DataSource::synthetic;
             else if (v == "folder") c.data.source = DataSource::folder;
             else throw InvalidConfig(k + ": expected synthetic or folder, got '" + v + "'");
         }},
        {"data.classes", FPLAB_INT(data.num_classes)},
        {"data.train_per_class", FPLAB_INT(data.train_per_class)},
        {"data.test_per_class", FPLAB_INT(data.test_per_class)},
        {"data.image_size", FPLAB_INT(data.image_size)},
        {"data.path", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.data.path = v; }},

        {"model.kind",
         [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             if (v == "cnn") c.classifier.kind = ClassifierKind::cnn;
             else if (v == "linear") c.classifier.kind = ClassifierKind::linear;
             else throw InvalidConfig(k + ": expected cnn or linear, got '" + v + "'");
         }},
        {"model.conv1", FPLAB_INT(classifier.conv1_channels)},
        {"model.conv2", FPLAB_INT(classifier.conv2_channels)},
        {"model.hidden", FPLAB_INT(classifier.hidden)},
    };
    return table;
}

#undef FPLAB_INT
#undef FPLAB_DBL

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? NAN : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
    std::istringstream in(io::read_text(path));
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(trim(cell));
        rows.push_back(std::move(cells));
    }
    return rows;
}

}  // namespace

void ExperimentConfig::propagate() {
    attack.source = federation.source_class;
    attack.target = federation.target_class;
    attack.poison_ratio = federation.poison_ratio;
    psg.source = federation.source_class;
    psg.target = federation.target_class;
    psg.seed = federation.seed;
    attack.psg = attack.kind == attacks::AttackKind::poicgan ? std::optional(psg) : std::nullopt;
    classifier.num_classes = data.num_classes;
    classifier.input = {1, data.image_size, data.image_size};
}

void ExperimentConfig::validate() const {
    federation.validate();
    if (data.num_classes < 2) throw InvalidConfig("data.classes: need at least 2 classes");
    if (data.train_per_class < 1) throw InvalidConfig("data.train_per_class: must be positive");
    if (data.test_per_class < 1) throw InvalidConfig("data.test_per_class: must be positive");
    if (data.image_size < 4 || data.image_size % 4 != 0)
        throw InvalidConfig("data.image_size: must be a positive multiple of 4");
    if (data.source == DataSource::folder && data.path.empty())
        throw InvalidConfig("data.path: required for folder datasets");
    if (federation.source_class >= data.num_classes)
        throw InvalidConfig("source_class: dataset has only " + std::to_string(data.num_classes) + " classes");
    if (federation.target_class >= data.num_classes)
        throw InvalidConfig("target_class: dataset has only " + std::to_string(data.num_classes) + " classes");
    if (attack.kind == attacks::AttackKind::poicgan) psg.validate();
    attack.validate();
    const auto d = defense.resolved(federation);
    d.validate();
    if (d.kind == defenses::DefenseKind::krum && federation.clients_per_round < d.krum_f + 3)
        throw InvalidConfig("defense.krum_f: clients_per_round must be at least krum_f + 3");
    if (d.kind == defenses::DefenseKind::flame && federation.clients_per_round < 2)
        throw InvalidConfig("defense.kind: flame needs clients_per_round >= 2");
    if (mis_round >= federation.rounds && federation.rounds > 0)
        throw InvalidConfig("mis_round: must be below rounds");
}

void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value) {
    const auto it = setters().find(key);
    if (it == setters().end()) throw InvalidConfig(key + ": unknown key");
    it->second(config, key, value);
}

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw InvalidConfig("line " + std::to_string(lineno) + ": expected 'key = value'");
        set_config_value(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    c.propagate();
    return c;
}

ExperimentConfig load_config(const fs::path& path) {
    if (!fs::exists(path)) throw InvalidConfig("config: file not found: " + path.string());
    return parse_config(io::read_text(path));
}

std::string to_config_text(const ExperimentConfig& c) {
    const auto& f = c.federation;
    std::ostringstream o;
    o << "n_clients = " << f.n_clients << "\n"
      << "clients_per_round = " << f.clients_per_round << "\n"
      << "rounds = " << f.rounds << "\n"
      << "local_epochs = " << f.local_epochs << "\n"
      << "learning_rate = " << fmt(f.learning_rate) << "\n"
      << "batch_size = " << f.batch_size << "\n"
      << "optimizer = " << (f.optimizer == LocalOptimizer::adam ? "adam" : "sgd") << "\n"
      << "pmr = " << fmt(f.pmr) << "\n"
      << "poison_start_round = " << f.poison_start_round << "\n"
      << "scaling_factor = " << fmt(f.scaling_factor) << "\n"
      << "source_class = " << f.source_class << "\n"
      << "target_class = " << f.target_class << "\n"
      << "poison_ratio = " << fmt(f.poison_ratio) << "\n"
      << "seed = " << f.seed << "\n"
      << "output_dir = " << c.output_dir.string() << "\n"
      << "mis_round = " << c.mis_round << "\n"
      << "save_snapshots = " << (c.save_snapshots ? "true" : "false") << "\n"
      << "\n"
      << "psg.iterations = " << c.psg.iterations << "\n"
      << "psg.batch_size = " << c.psg.batch_size << "\n"
      << "psg.noise_dim = " << c.psg.noise_dim << "\n"
      << "psg.gen_lr = " << fmt(c.psg.gen_lr) << "\n"
      << "psg.disc_lr = " << fmt(c.psg.disc_lr) << "\n"
      << "psg.beta1 = " << fmt(c.psg.beta1) << "\n"
      << "psg.arch_scale = " << c.psg.arch_scale << "\n"
      << "psg.generator_loss = "
      << (c.psg.generator_loss_form == psg::GeneratorLossForm::nonsaturating ? "nonsaturating" : "literal") << "\n"
      << "\n"
      << "attack.kind = " << attacks::to_string(c.attack.kind) << "\n"
      << "attack.boost = " << fmt(c.attack.boost) << "\n"
      << "\n"
      << "defense.kind = " << defenses::to_string(c.defense.kind) << "\n"
      << "defense.krum_f = " << c.defense.krum_f << "\n"
      << "defense.rlr_threshold = " << c.defense.rlr_threshold << "\n"
      << "defense.rlr_lr = " << fmt(c.defense.rlr_lr) << "\n"
      << "defense.flame_noise = " << fmt(c.defense.flame_noise) << "\n"
      << "\n"
      << "data.source = " << (c.data.source == DataSource::synthetic ? "synthetic" : "folder") << "\n"
      << "data.classes = " << c.data.num_classes << "\n"
      << "data.train_per_class = " << c.data.train_per_class << "\n"
      << "data.test_per_class = " << c.data.test_per_class << "\n"
      << "data.image_size = " << c.data.image_size << "\n";
    if (!c.data.path.empty()) o << "data.path = " << c.data.path.string() << "\n";
    o << "\n"
      << "model.kind = " << (c.classifier.kind == ClassifierKind::cnn ? "cnn" : "linear") << "\n"
      << "model.conv1 = " << c.classifier.conv1_channels << "\n"
      << "model.conv2 = " << c.classifier.conv2_channels << "\n"
      << "model.hidden = " << c.classifier.hidden << "\n";
    return o.str();
}

std::pair<data::Dataset, data::Dataset> load_data(const ExperimentConfig& c) {
    const auto seed = derive_seed(c.federation.seed, {stream::data});
    if (c.data.source == DataSource::synthetic) {
        auto all = data::synth_texture_dataset(c.data.num_classes, c.data.train_per_class + c.data.test_per_class,
                                               c.data.image_size, seed);
        return data::stratified_split(all, c.data.test_per_class, seed);
    }
    if (fs::is_directory(c.data.path / "train") && fs::is_directory(c.data.path / "test"))
        return {data::load_image_folder(c.data.path / "train", c.data.image_size),
                data::load_image_folder(c.data.path / "test", c.data.image_size)};
    auto all = data::load_image_folder(c.data.path, c.data.image_size);
    return data::stratified_split(all, c.data.test_per_class, seed);
}

RunSummary summarize(std::span<const RoundRecord> records) {
    RunSummary s;
    s.mis = NAN;
    if (records.empty()) {
        s.final_acc = s.final_asr = NAN;
        return s;
    }
    const std::size_t k = std::min<std::size_t>(5, records.size());
    double acc = 0.0, asr = 0.0;
    for (std::size_t i = records.size() - k; i < records.size(); ++i) {
        acc += records[i].acc;
        asr += records[i].asr;
    }
    s.final_acc = acc / static_cast<double>(k);
    s.final_asr = asr / static_cast<double>(k);
    s.rounds_averaged = static_cast<int>(k);
    for (const auto& r : records)
        if (r.mis) {
            s.mis = *r.mis;
            s.mis_coincident = std::isinf(*r.mis);
        }
    return s;
}

std::string summary_csv(const RunSummary& s) {
    return std::string(kSummaryHeader) + "\n" + fmt(s.final_acc) + "," + fmt(s.final_asr) + "," + fmt(s.mis) + "," +
           std::to_string(s.rounds_averaged) + "\n";
}

RunSummary read_summary(const fs::path& run_dir) {
    const auto rows = read_csv(run_dir / "summary.csv");
    if (rows.size() != 2 || rows[1].size() != 4) throw InvalidInput("summary.csv: expected a header and one row");
    RunSummary s;
    s.final_acc = std::strtod(rows[1][0].c_str(), nullptr);
    s.final_asr = std::strtod(rows[1][1].c_str(), nullptr);
    s.mis = std::strtod(rows[1][2].c_str(), nullptr);
    s.mis_coincident = std::isinf(s.mis);
    s.rounds_averaged = std::atoi(rows[1][3].c_str());
    return s;
}

RunOutcome run_experiment(const ExperimentConfig& input) {
    ExperimentConfig config = input;
    config.propagate();
    config.validate();
    const fs::path dir = config.output_dir;
    fs::create_directories(dir);
    io::write_text(dir / "config.txt", to_config_text(config));

    const auto [train, test] = load_data(config);
    Classifier model(config.classifier);
    attacks::Attack attack(config.attack);
    const auto defense = defenses::make_defense(config.defense.resolved(config.federation));

    const int rounds = config.federation.rounds;
    const int mis_round = config.mis_round >= 0 ? config.mis_round : rounds - 1;
    std::vector<ClientUpdate> mis_updates;
    RoundObserver observer = [&](const RoundRecord& r, const ParamVector& global,
                                 std::span<const ClientUpdate> updates) -> std::optional<std::string> {
        if (r.round == mis_round) mis_updates.assign(updates.begin(), updates.end());
        if (!config.save_snapshots) return std::nullopt;
        char name[32];
        std::snprintf(name, sizeof name, "round_%04d.fplb", r.round);
        io::write_fplb(dir / "snapshots" / name, global.span());
        return std::string("snapshots/") + name;
    };

    RunOutcome out;
    out.result = run_federation(config.federation, model, train, test, &attack, defense.get(), observer);
    out.generator = attack.generator();

    nlohmann::json mis_json;
    if (mis_updates.empty()) {
        mis_json = {{"mis", nullptr}, {"coincident", false}, {"round", nullptr}, {"diagnostic", "no rounds were run"}};
    } else {
        try {
            const auto report = metrics::mis_from_updates(mis_updates);
            mis_json = metrics::to_json(report);
            out.result.records[mis_round].mis = report.mis;
        } catch (const InvalidInput& e) {
            mis_json = {{"mis", nullptr}, {"coincident", false}, {"diagnostic", e.what()}};
            nlohmann::json points = nlohmann::json::array();
            for (const auto& u : mis_updates)
                points.push_back({{"client_id", u.client_id}, {"role", u.role == Role::malicious ? "malicious" : "benign"}});
            mis_json["clients"] = points;
        }
        mis_json["round"] = mis_round;
    }

    io::write_round_log(dir / "rounds.jsonl", out.result.records);
    io::write_fplb(dir / "final_model.fplb", out.result.final_params.span());
    io::write_text(dir / "mis.json", mis_json.dump(2) + "\n");
    if (out.generator) io::save_generator(*out.generator, dir / "generator.fplb");
    out.summary = summarize(out.result.records);
    io::write_text(dir / "summary.csv", summary_csv(out.summary));
    return out;
}

RunOutcome run_experiment(const fs::path& config_path) { return run_experiment(load_config(config_path)); }

void SweepSpec::validate() const {
    if (parameter != "pmr" && parameter != "psg_iterations" && parameter != "scaling_factor")
        throw InvalidConfig("sweep.param: expected pmr, psg_iterations or scaling_factor, got '" + parameter + "'");
    if (values.empty()) throw InvalidConfig("sweep.values: need at least one value");
    if (seeds.empty()) throw InvalidConfig("sweep.seeds: need at least one seed");
}

SweepResult sweep(const SweepSpec& spec, const ExperimentConfig& base, const fs::path& out_dir) {
    spec.validate();
    struct Job {
        std::size_t value_index;
        std::uint64_t seed;
        ExperimentConfig config;
        std::optional<RunSummary> summary;
        std::string error;
    };
    std::vector<Job> jobs;
    for (std::size_t vi = 0; vi < spec.values.size(); ++vi)
        for (auto seed : spec.seeds) {
            ExperimentConfig c = base;
            const double v = spec.values[vi];
            if (spec.parameter == "pmr") c.federation.pmr = v;
            else if (spec.parameter == "scaling_factor") c.federation.scaling_factor = v;
            else c.psg.iterations = static_cast<int>(std::lround(v));
            c.federation.seed = seed;
            c.output_dir = out_dir / (spec.parameter + "=" + short_fmt(v)) / ("seed=" + std::to_string(seed));
            c.propagate();
            // Surface configuration errors before any run starts.
            c.validate();
            jobs.push_back({vi, seed, std::move(c), std::nullopt, {}});
        }

    parallel_for(static_cast<int>(jobs.size()), [&](int i) {
        try {
            jobs[i].summary = run_experiment(jobs[i].config).summary;
        } catch (const std::exception& e) {
            jobs[i].error = e.what();
        }
    });

    SweepResult result;
    std::string runs_csv = "parameter,value,seed,status,final_acc,final_asr,mis,error\n";
    for (const auto& j : jobs) {
        runs_csv += spec.parameter + "," + short_fmt(spec.values[j.value_index]) + "," + std::to_string(j.seed) + ",";
        if (j.summary)
            runs_csv += "ok," + fmt(j.summary->final_acc) + "," + fmt(j.summary->final_asr) + "," + fmt(j.summary->mis) + ",\n";
        else {
            std::string err = j.error;
            std::replace(err.begin(), err.end(), ',', ';');
            std::replace(err.begin(), err.end(), '\n', ' ');
            runs_csv += "failed,,,," + err + "\n";
            ++result.failed_runs;
        }
    }

    std::string table = "parameter,value,runs,failed,acc_mean,acc_std,asr_mean,asr_std,mis_mean\n";
    for (std::size_t vi = 0; vi < spec.values.size(); ++vi) {
        SweepRow row;
        row.value = spec.values[vi];
        std::vector<double> acc, asr, mis;
        for (const auto& j : jobs) {
            if (j.value_index != vi) continue;
            if (!j.summary) {
                ++row.failed;
                continue;
            }
            acc.push_back(j.summary->final_acc);
            asr.push_back(j.summary->final_asr);
            mis.push_back(j.summary->mis);
        }
        row.runs = static_cast<int>(acc.size());
        row.acc_mean = mean_of(acc);
        row.acc_std = std_of(acc);
        row.asr_mean = mean_of(asr);
        row.asr_std = std_of(asr);
        row.mis_mean = mean_of(mis);
        table += spec.parameter + "," + short_fmt(row.value) + "," + std::to_string(row.runs) + "," +
                 std::to_string(row.failed) + "," + fmt(row.acc_mean) + "," + fmt(row.acc_std) + "," +
                 fmt(row.asr_mean) + "," + fmt(row.asr_std) + "," + fmt(row.mis_mean) + "\n";
        result.rows.push_back(row);
    }
    io::write_text(out_dir / "runs.csv", runs_csv);
    io::write_text(out_dir / "sweep.csv", table);
    return result;
}

// ---------------------------------------------------------------- charts

namespace {

struct Series {
    std::string name;
    cv::Scalar color;
    std::vector<double> y;
    std::vector<double> err;
};

constexpr int kW = 720, kH = 440, kLeft = 70, kRight = 150, kTop = 40, kBottom = 60;

cv::Point to_px(double x, double y, double x0, double x1, double y0, double y1) {
    const double fx = x1 > x0 ? (x - x0) / (x1 - x0) : 0.5;
    const double fy = y1 > y0 ? (y - y0) / (y1 - y0) : 0.5;
    return {kLeft + static_cast<int>(std::lround(fx * (kW - kLeft - kRight))),
            kH - kBottom - static_cast<int>(std::lround(fy * (kH - kTop - kBottom)))};
}

void draw_text(cv::Mat& img, const std::string& s, cv::Point at, double scale = 0.4) {
    cv::putText(img, s, at, cv::FONT_HERSHEY_SIMPLEX, scale, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
}

cv::Mat axes(const std::string& title, const std::string& xlabel, const std::string& ylabel, double y0, double y1) {
    cv::Mat img(kH, kW, CV_8UC3, cv::Scalar(255, 255, 255));
    cv::line(img, {kLeft, kTop}, {kLeft, kH - kBottom}, cv::Scalar(0, 0, 0), 1);
    cv::line(img, {kLeft, kH - kBottom}, {kW - kRight, kH - kBottom}, cv::Scalar(0, 0, 0), 1);
    for (int i = 0; i <= 4; ++i) {
        const double v = y0 + (y1 - y0) * i / 4.0;
        const auto p = to_px(0, v, 0, 1, y0, y1);
        cv::line(img, {kLeft - 4, p.y}, {kLeft, p.y}, cv::Scalar(0, 0, 0), 1);
        cv::line(img, {kLeft + 1, p.y}, {kW - kRight, p.y}, cv::Scalar(225, 225, 225), 1);
        draw_text(img, short_fmt(v), {8, p.y + 4});
    }
    draw_text(img, title, {kLeft, 24}, 0.55);
    draw_text(img, xlabel, {(kW - kRight + kLeft) / 2 - 30, kH - 14});
    draw_text(img, ylabel, {8, kTop - 10});
    return img;
}

void x_tick(cv::Mat& img, cv::Point p, const std::string& label) {
    cv::line(img, {p.x, kH - kBottom}, {p.x, kH - kBottom + 4}, cv::Scalar(0, 0, 0), 1);
    draw_text(img, label, {p.x - 10, kH - kBottom + 18});
}

void legend(cv::Mat& img, const std::vector<std::pair<std::string, cv::Scalar>>& entries) {
    int y = kTop + 10;
    for (const auto& [name, color] : entries) {
        cv::rectangle(img, {kW - kRight + 15, y - 8}, {kW - kRight + 27, y + 2}, color, cv::FILLED);
        draw_text(img, name, {kW - kRight + 33, y + 1});
        y += 20;
    }
}

void save_chart(const cv::Mat& img, const fs::path& path) {
    if (!cv::imwrite(path.string(), img)) throw Error("cannot write " + path.string());
}

ChartInfo line_chart(const fs::path& file, const std::string& title, const std::string& xlabel,
                     const std::vector<double>& xs, const std::vector<std::string>& tick_labels,
                     std::vector<int> tick_index, const std::vector<Series>& series) {
    cv::Mat img = axes(title, xlabel, "value", 0.0, 1.0);
    const double x0 = xs.empty() ? 0.0 : xs.front(), x1 = xs.empty() ? 1.0 : xs.back();
    for (int t : tick_index) x_tick(img, to_px(xs[t], 0, x0, x1, 0, 1), tick_labels[t]);
    ChartInfo info{file, 0, static_cast<int>(tick_index.size()), 0};
    std::vector<std::pair<std::string, cv::Scalar>> entries;
    for (const auto& s : series) {
        if (s.y.empty()) continue;
        std::vector<cv::Point> pts;
        for (std::size_t i = 0; i < s.y.size(); ++i) {
            if (!std::isfinite(s.y[i])) continue;
            pts.push_back(to_px(xs[i], std::clamp(s.y[i], 0.0, 1.0), x0, x1, 0, 1));
            if (!s.err.empty() && s.err[i] > 0.0) {
                const auto lo = to_px(xs[i], std::clamp(s.y[i] - s.err[i], 0.0, 1.0), x0, x1, 0, 1);
                const auto hi = to_px(xs[i], std::clamp(s.y[i] + s.err[i], 0.0, 1.0), x0, x1, 0, 1);
                cv::line(img, lo, hi, s.color, 1);
            }
        }
        cv::polylines(img, pts, false, s.color, 2, cv::LINE_AA);
        if (pts.size() <= 20)
            for (const auto& p : pts) cv::circle(img, p, 3, s.color, cv::FILLED, cv::LINE_AA);
        entries.emplace_back(s.name, s.color);
        ++info.series;
        info.points += static_cast<int>(pts.size());
    }
    legend(img, entries);
    save_chart(img, file);
    return info;
}

const cv::Scalar kBlue(200, 110, 30), kRed(40, 40, 210), kGreen(60, 160, 60);

}  // namespace

std::vector<ChartInfo> emit_plots(const fs::path& dir) {
    std::vector<ChartInfo> charts;
    const auto log_path = dir / "rounds.jsonl", sweep_path = dir / "sweep.csv", mis_path = dir / "mis.json";

    if (fs::exists(log_path)) {
        const auto records = io::read_round_log(log_path);
        std::vector<double> xs, acc, asr;
        std::vector<std::string> labels;
        for (const auto& r : records) {
            xs.push_back(r.round);
            acc.push_back(r.acc);
            asr.push_back(r.asr);
            labels.push_back(std::to_string(r.round));
        }
        std::vector<int> ticks;
        const int n = static_cast<int>(xs.size());
        const int step = std::max(1, (n + 9) / 10);
        for (int i = 0; i < n; i += step) ticks.push_back(i);
        if (n > 0 && ticks.back() != n - 1) ticks.push_back(n - 1);
        charts.push_back(line_chart(dir / "metrics_by_round.png", "ACC and ASR per round", "round", xs, labels, ticks,
                                    {{"ACC", kBlue, acc, {}}, {"ASR", kRed, asr, {}}}));
    }

    if (fs::exists(sweep_path)) {
        const auto rows = read_csv(sweep_path);
        std::vector<double> xs, acc, acc_sd, asr, asr_sd;
        std::vector<std::string> labels;
        std::vector<int> ticks;
        std::string param = "value";
        for (std::size_t i = 1; i < rows.size(); ++i) {
            if (rows[i].size() < 9) throw InvalidInput("sweep.csv: malformed row " + std::to_string(i));
            param = rows[i][0];
            xs.push_back(static_cast<double>(i - 1));
            labels.push_back(rows[i][1]);
            ticks.push_back(static_cast<int>(i - 1));
            acc.push_back(std::strtod(rows[i][4].c_str(), nullptr));
            acc_sd.push_back(std::strtod(rows[i][5].c_str(), nullptr));
            asr.push_back(std::strtod(rows[i][6].c_str(), nullptr));
            asr_sd.push_back(std::strtod(rows[i][7].c_str(), nullptr));
        }
        if (xs.size() == 1) xs = {0.0};
        charts.push_back(line_chart(dir / "sweep_metrics.png", "Final ACC and ASR by " + param, param, xs, labels,
                                    ticks, {{"ACC", kBlue, acc, acc_sd}, {"ASR", kRed, asr, asr_sd}}));
    }

    if (fs::exists(mis_path)) {
        const auto j = nlohmann::json::parse(io::read_text(mis_path));
        std::vector<std::array<double, 2>> pts;
        std::vector<bool> poisoned;
        if (j.contains("points"))
            for (const auto& p : j["points"]) {
                pts.push_back({p.at("x").get<double>(), p.at("y").get<double>()});
                poisoned.push_back(p.at("role").get<std::string>() != "benign");
            }
        double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
        if (!pts.empty()) {
            x0 = x1 = pts[0][0];
            y0 = y1 = pts[0][1];
            for (const auto& p : pts) {
                x0 = std::min(x0, p[0]), x1 = std::max(x1, p[0]);
                y0 = std::min(y0, p[1]), y1 = std::max(y1, p[1]);
            }
            const double px = std::max(1e-9, 0.08 * (x1 - x0)), py = std::max(1e-9, 0.08 * (y1 - y0));
            x0 -= px, x1 += px, y0 -= py, y1 += py;
        }
        std::string title = "Projected client models";
        if (j.contains("mis") && j["mis"].is_number()) title += ", MIS = " + short_fmt(j["mis"].get<double>());
        cv::Mat img = axes(title, "PC1", "PC2", y0, y1);
        for (int i = 0; i <= 4; ++i) {
            const double v = x0 + (x1 - x0) * i / 4.0;
            x_tick(img, to_px(v, y0, x0, x1, y0, y1), short_fmt(v));
        }
        for (std::size_t i = 0; i < pts.size(); ++i)
            cv::circle(img, to_px(pts[i][0], pts[i][1], x0, x1, y0, y1), 5, poisoned[i] ? kRed : kBlue, cv::FILLED,
                       cv::LINE_AA);
        legend(img, {{"benign", kBlue}, {"poisoned", kRed}});
        const auto file = dir / "mis_scatter.png";
        save_chart(img, file);
        charts.push_back({file, pts.empty() ? 0 : 1, 5, static_cast<int>(pts.size())});
    }

    if (charts.empty())
        throw InvalidInput("plot: " + dir.string() + " has none of rounds.jsonl, sweep.csv, mis.json");
    return charts;
}

GrayImage export_sample_grid(std::span<const psg::PoisonGenerator> checkpoints, int per_checkpoint,
                             std::uint64_t seed) {
    if (checkpoints.empty()) throw InvalidInput("export_sample_grid: need at least one checkpoint");
    if (per_checkpoint < 1) throw InvalidInput("export_sample_grid: per_checkpoint must be >= 1");
    const auto shape = checkpoints[0].arch.image;
    GrayImage img;
    img.channels = shape.c;
    img.rows = shape.h * static_cast<int>(checkpoints.size());
    img.cols = shape.w * per_checkpoint;
    img.pixels.assign(static_cast<std::size_t>(img.rows) * img.cols * img.channels, 0);
    for (std::size_t r = 0; r < checkpoints.size(); ++r) {
        const auto& g = checkpoints[r];
        if (g.arch.image.c != shape.c || g.arch.image.h != shape.h || g.arch.image.w != shape.w)
            throw ShapeError("export_sample_grid: checkpoints differ in image shape");
        // Same noise for every row so rows differ only by training progress.
        const auto set = psg::generate_poison_set(g, per_checkpoint, seed);
        for (int k = 0; k < per_checkpoint; ++k) {
            const auto& px = set.samples[k].pixels;
            for (int c = 0; c < shape.c; ++c)
                for (int y = 0; y < shape.h; ++y)
                    for (int x = 0; x < shape.w; ++x) {
                        const std::size_t row = r * shape.h + y, col = static_cast<std::size_t>(k) * shape.w + x;
                        img.pixels[(row * img.cols + col) * shape.c + c] =
                            data::to_byte(px[(static_cast<std::size_t>(c) * shape.h + y) * shape.w + x]);
                    }
        }
    }
    return img;
}

void write_png(const GrayImage& image, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    cv::Mat m(image.rows, image.cols, image.channels == 1 ? CV_8UC1 : CV_8UC3,
              const_cast<std::uint8_t*>(image.pixels.data()));
    cv::Mat out = m;
    if (image.channels == 3) cv::cvtColor(m, out, cv::COLOR_RGB2BGR);
    if (!cv::imwrite(path.string(), out)) throw Error("cannot write " + path.string());
}

std::vector<std::string> check_run(const fs::path& run_dir) {
    std::vector<std::string> problems;
    for (const char* f : {"config.txt", "rounds.jsonl", "summary.csv", "final_model.fplb", "mis.json"})
        if (!fs::exists(run_dir / f)) problems.push_back(std::string("missing ") + f);
    if (!problems.empty()) return problems;

    const auto records = io::read_round_log(run_dir / "rounds.jsonl");
    const auto expect = summarize(records);
    const auto got = read_summary(run_dir);
    auto same = [](double a, double b) {
        if (std::isnan(a) || std::isnan(b)) return std::isnan(a) && std::isnan(b);
        if (std::isinf(a) || std::isinf(b)) return a == b;
        return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(a));
    };
    if (!same(expect.final_acc, got.final_acc))
        problems.push_back("final_acc " + fmt(got.final_acc) + " != log " + fmt(expect.final_acc));
    if (!same(expect.final_asr, got.final_asr))
        problems.push_back("final_asr " + fmt(got.final_asr) + " != log " + fmt(expect.final_asr));
    if (!same(expect.mis, got.mis)) problems.push_back("mis " + fmt(got.mis) + " != log " + fmt(expect.mis));
    if (expect.rounds_averaged != got.rounds_averaged) problems.push_back("rounds_averaged differs from log");

    const auto j = nlohmann::json::parse(io::read_text(run_dir / "mis.json"));
    const double mis_json = j["mis"].is_null() ? (j.value("coincident", false) ? INFINITY : NAN) : j["mis"].get<double>();
    if (!same(mis_json, got.mis)) problems.push_back("mis.json value differs from summary");

    const auto config = load_config(run_dir / "config.txt");
    if (static_cast<int>(records.size()) != config.federation.rounds)
        problems.push_back("round log has " + std::to_string(records.size()) + " rounds, config says " +
                           std::to_string(config.federation.rounds));
    return problems;
}

}  // namespace fplab::harness
