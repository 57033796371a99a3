#include "fplab/io.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fplab/errors.hpp"

namespace fplab::io {

namespace {

template <typename T>
void put_le(std::string& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const unsigned char* p) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
    return v;
}

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("write failed: " + path.string());
}

void write_fplb(const std::filesystem::path& path, std::span<const double> values) {
    std::string buf = "FPLB";
    buf.reserve(16 + 4 * values.size());
    put_le<std::uint32_t>(buf, kFplbVersion);
    put_le<std::uint64_t>(buf, values.size());
    for (double v : values) put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    write_text(path, buf);
}

std::vector<double> read_fplb(const std::filesystem::path& path) {
    const std::string buf = read_text(path);
    if (buf.size() < 16 || buf.compare(0, 4, "FPLB") != 0) throw InvalidInput(path.string() + ": not an FPLB file");
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
    const auto version = get_le<std::uint32_t>(p + 4);
    if (version != kFplbVersion)
        throw InvalidInput(path.string() + ": unsupported FPLB version " + std::to_string(version));
    const auto dim = get_le<std::uint64_t>(p + 8);
    if (buf.size() != 16 + 4 * dim) throw InvalidInput(path.string() + ": size does not match header");
    std::vector<double> out(dim);
    for (std::uint64_t i = 0; i < dim; ++i) out[i] = std::bit_cast<float>(get_le<std::uint32_t>(p + 16 + 4 * i));
    return out;
}

void save_generator(const psg::PoisonGenerator& g, const std::filesystem::path& fplb_path) {
    std::vector<double> flat(g.generator_params.values());
    flat.insert(flat.end(), g.generator_state.begin(), g.generator_state.end());
    write_fplb(fplb_path, flat);
    nlohmann::json side = {
        {"target_label", g.target_label},
        {"noise_dim", g.noise_dim},
        {"iterations", g.training_iterations},
        {"id", g.id},
        {"param_count", g.generator_params.dim()},
        {"state_count", g.generator_state.size()},
        {"arch",
         {{"channels", g.arch.image.c},
          {"height", g.arch.image.h},
          {"width", g.arch.image.w},
          {"num_classes", g.arch.num_classes},
          {"noise_dim", g.arch.noise_dim},
          {"arch_scale", g.arch.arch_scale}}},
    };
    auto side_path = fplb_path;
    write_text(side_path.replace_extension(".json"), side.dump(2) + "\n");
}

psg::PoisonGenerator load_generator(const std::filesystem::path& fplb_path) {
    auto side_path = fplb_path;
    nlohmann::json side;
    try {
        side = nlohmann::json::parse(read_text(side_path.replace_extension(".json")));
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput("generator sidecar: " + std::string(e.what()));
    }
    psg::PoisonGenerator g;
    const auto& a = side.at("arch");
    g.arch.image = {a.at("channels").get<int>(), a.at("height").get<int>(), a.at("width").get<int>()};
    g.arch.num_classes = a.at("num_classes").get<int>();
    g.arch.noise_dim = a.at("noise_dim").get<int>();
    g.arch.arch_scale = a.at("arch_scale").get<int>();
    g.target_label = side.at("target_label").get<int>();
    g.noise_dim = side.at("noise_dim").get<int>();
    g.training_iterations = side.at("iterations").get<int>();
    g.id = side.value("id", std::string{});

    auto flat = read_fplb(fplb_path);
    const auto expected = psg::build_generator(g.arch);
    const std::size_t np = expected.params().size(), ns = expected.state().size();
    if (flat.size() != np + ns) throw InvalidInput(fplb_path.string() + ": parameter count does not match arch");
    g.generator_state.assign(flat.begin() + static_cast<std::ptrdiff_t>(np), flat.end());
    flat.resize(np);
    g.generator_params = ParamVector(std::move(flat));
    return g;
}

nlohmann::json to_json(const RoundRecord& r) {
    nlohmann::json diag = nlohmann::json::object();
    for (const auto& [k, v] : r.defense_diagnostics) diag[k] = finite_or_null(v);
    nlohmann::json class_acc = nlohmann::json::array();
    for (double v : r.class_acc) class_acc.push_back(finite_or_null(v));
    nlohmann::json j = {
        {"round", r.round},     {"selected_ids", r.selected_ids}, {"acc", r.acc},
        {"asr", r.asr},         {"defense_diagnostics", diag},    {"class_acc", class_acc},
    };
    if (r.update_snapshot_ref) j["snapshot"] = *r.update_snapshot_ref;
    // Unbounded MIS (coincident centroids) is written as null.
    if (r.mis) j["mis"] = finite_or_null(*r.mis);
    return j;
}

RoundRecord round_from_json(const nlohmann::json& j) {
    RoundRecord r;
    r.round = j.at("round").get<int>();
    r.selected_ids = j.at("selected_ids").get<std::vector<int>>();
    r.acc = j.at("acc").get<double>();
    r.asr = j.at("asr").get<double>();
    for (const auto& [k, v] : j.at("defense_diagnostics").items())
        r.defense_diagnostics[k] = v.is_null() ? NAN : v.get<double>();
    if (j.contains("class_acc"))
        for (const auto& v : j["class_acc"]) r.class_acc.push_back(v.is_null() ? NAN : v.get<double>());
    if (j.contains("snapshot")) r.update_snapshot_ref = j["snapshot"].get<std::string>();
    if (j.contains("mis")) r.mis = j["mis"].is_null() ? INFINITY : j["mis"].get<double>();
    return r;
}

void write_round_log(const std::filesystem::path& path, std::span<const RoundRecord> records) {
    std::string text;
    for (const auto& r : records) text += to_json(r).dump() + "\n";
    write_text(path, text);
}

std::vector<RoundRecord> read_round_log(const std::filesystem::path& path) {
    std::istringstream in(read_text(path));
    std::vector<RoundRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(round_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace fplab::io
