#include "fplab/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fplab/errors.hpp"
#include "fplab/rng.hpp"

namespace fplab::defenses {

namespace {

void require_common_dim(std::span<const ClientUpdate> updates, const ParamVector& global, const char* who) {
    for (const auto& u : updates) require_same_dim(global, u.params, who);
}

std::vector<std::vector<double>> deltas_of(std::span<const ClientUpdate> updates, const ParamVector& global) {
    std::vector<std::vector<double>> out;
    out.reserve(updates.size());
    for (const auto& u : updates) {
        std::vector<double> d(global.dim());
        for (std::size_t j = 0; j < d.size(); ++j) d[j] = u.params[j] - global[j];
        out.push_back(std::move(d));
    }
    return out;
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

void mark_clients(Diagnostics* diag, const char* prefix, std::span<const ClientUpdate> updates,
                  const std::vector<bool>& flag) {
    if (!diag) return;
    for (std::size_t i = 0; i < updates.size(); ++i)
        if (flag[i]) (*diag)[std::string(prefix) + std::to_string(updates[i].client_id)] = 1.0;
}

class KrumDefense final : public DefenseHandle {
public:
    explicit KrumDefense(int f) : f_(f) {}
    std::string name() const override { return "krum"; }
    ParamVector aggregate(std::span<const ClientUpdate> updates, const ParamVector& global, std::uint64_t,
                          Diagnostics& diag) const override {
        require_common_dim(updates, global, "krum");
        const auto idx = krum_index(updates, f_);
        diag["selected_client"] = updates[idx].client_id;
        diag["selected_malicious"] = updates[idx].role == Role::malicious ? 1.0 : 0.0;
        std::vector<bool> excluded(updates.size(), true);
        excluded[idx] = false;
        mark_clients(&diag, "excluded:", updates, excluded);
        return updates[idx].params;
    }

private:
    int f_;
};

class RlrDefense final : public DefenseHandle {
public:
    RlrDefense(int threshold, double lr) : threshold_(threshold), lr_(lr) {}
    std::string name() const override { return "rlr"; }
    ParamVector aggregate(std::span<const ClientUpdate> updates, const ParamVector& global, std::uint64_t,
                          Diagnostics& diag) const override {
        return rlr_aggregate(updates, global, threshold_, lr_, &diag);
    }

private:
    int threshold_;
    double lr_;
};

class FlameDefense final : public DefenseHandle {
public:
    explicit FlameDefense(double noise) : noise_(noise) {}
    std::string name() const override { return "flame"; }
    ParamVector aggregate(std::span<const ClientUpdate> updates, const ParamVector& global, std::uint64_t seed,
                          Diagnostics& diag) const override {
        return flame_aggregate(updates, global, noise_, seed, &diag);
    }

private:
    double noise_;
};

}  // namespace

std::string to_string(DefenseKind kind) {
    switch (kind) {
        case DefenseKind::none: return "none";
        case DefenseKind::krum: return "krum";
        case DefenseKind::rlr: return "rlr";
        case DefenseKind::flame: return "flame";
    }
    return "unknown";
}

DefenseKind parse_defense_kind(const std::string& name) {
    if (name == "none") return DefenseKind::none;
    if (name == "krum") return DefenseKind::krum;
    if (name == "rlr") return DefenseKind::rlr;
    if (name == "flame") return DefenseKind::flame;
    throw InvalidConfig("defense.kind: unknown defense '" + name + "'");
}

DefenseSpec DefenseSpec::resolved(const FederationConfig& federation) const {
    DefenseSpec out = *this;
    const int m = federation.clients_per_round;
    if (out.krum_f < 0) out.krum_f = static_cast<int>(std::lround(federation.pmr * m));
    if (out.rlr_threshold <= 0) out.rlr_threshold = (m + 1) / 2 + 1;
    return out;
}

void DefenseSpec::validate() const {
    if (kind == DefenseKind::krum && krum_f < 0) throw InvalidConfig("defense.krum_f: must be non-negative");
    if (kind == DefenseKind::rlr) {
        if (rlr_threshold < 1) throw InvalidConfig("defense.rlr_threshold: must be >= 1");
        if (!(rlr_lr > 0.0)) throw InvalidConfig("defense.rlr_lr: must be positive");
    }
    if (kind == DefenseKind::flame && !(flame_noise >= 0.0))
        throw InvalidConfig("defense.flame_noise: must be non-negative");
}

std::size_t krum_index(std::span<const ClientUpdate> updates, int f) {
    const int n = static_cast<int>(updates.size());
    if (f < 0 || n < f + 3)
        throw InvalidConfig("krum: need n >= f + 3 (n=" + std::to_string(n) + ", f=" + std::to_string(f) + ")");
    const int neighbours = n - f - 2;
    std::vector<double> dist(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) dist[i * n + j] = dist[j * n + i] = squared_distance(updates[i].params, updates[j].params);

    std::size_t best = 0;
    double best_score = 0.0;
    std::vector<double> row;
    for (int i = 0; i < n; ++i) {
        row.clear();
        for (int j = 0; j < n; ++j)
            if (j != i) row.push_back(dist[i * n + j]);
        std::partial_sort(row.begin(), row.begin() + neighbours, row.end());
        const double score = std::accumulate(row.begin(), row.begin() + neighbours, 0.0);
        if (i == 0 || score < best_score ||
            (score == best_score && updates[i].client_id < updates[best].client_id)) {
            best = static_cast<std::size_t>(i);
            best_score = score;
        }
    }
    return best;
}

ClientUpdate krum_select(std::span<const ClientUpdate> updates, int f) { return updates[krum_index(updates, f)]; }

ParamVector rlr_aggregate(std::span<const ClientUpdate> updates, const ParamVector& global, int threshold, double lr,
                          Diagnostics* diagnostics) {
    if (updates.empty()) throw EmptyAggregation("rlr_aggregate: no updates");
    if (threshold < 1) throw InvalidConfig("rlr_aggregate: threshold must be >= 1");
    require_common_dim(updates, global, "rlr_aggregate");
    const std::size_t d = global.dim();
    const double n = static_cast<double>(updates.size());
    ParamVector out = global;
    std::size_t flipped = 0;
    for (std::size_t j = 0; j < d; ++j) {
        int votes = 0;
        double sum = 0.0;
        for (const auto& u : updates) {
            const double delta = u.params[j] - global[j];
            votes += (delta > 0.0) - (delta < 0.0);
            sum += delta;
        }
        const bool agree = std::abs(votes) >= threshold;
        if (!agree) ++flipped;
        out[j] = global[j] + (agree ? lr : -lr) * (sum / n);
    }
    if (diagnostics) (*diagnostics)["flipped_fraction"] = d ? static_cast<double>(flipped) / d : 0.0;
    return out;
}

std::vector<std::size_t> flame_admission(std::span<const std::vector<double>> deltas) {
    const std::size_t n = deltas.size();
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) norms[i] = l2_norm(deltas[i]);

    std::vector<double> dist(n * n, 0.0), pairs;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double d;
            if (norms[i] == 0.0 || norms[j] == 0.0) {
                d = (norms[i] == 0.0 && norms[j] == 0.0) ? 0.0 : 1.0;
            } else {
                double dot = 0.0;
                for (std::size_t k = 0; k < deltas[i].size(); ++k) dot += deltas[i][k] * deltas[j][k];
                d = 1.0 - dot / (norms[i] * norms[j]);
            }
            dist[i * n + j] = dist[j * n + i] = d;
            pairs.push_back(d);
        }
    const double threshold = median(pairs);

    // Union-find over the "close enough" graph.
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (dist[i * n + j] <= threshold) parent[std::max(find(i), find(j))] = std::min(find(i), find(j));

    std::vector<std::size_t> size(n, 0);
    for (std::size_t i = 0; i < n; ++i) ++size[find(i)];
    std::size_t best_root = find(0);
    for (std::size_t r = 0; r < n; ++r)
        if (size[r] > size[best_root]) best_root = r;
    std::vector<std::size_t> admitted;
    for (std::size_t i = 0; i < n; ++i)
        if (find(i) == best_root) admitted.push_back(i);
    return admitted;
}

std::vector<double> clip_to_norm(std::span<const double> delta, double bound) {
    std::vector<double> out(delta.begin(), delta.end());
    const double norm = l2_norm(delta);
    if (norm > bound && norm > 0.0) {
        const double s = bound / norm;
        for (auto& v : out) v *= s;
    }
    return out;
}

ParamVector flame_aggregate(std::span<const ClientUpdate> updates, const ParamVector& global, double noise,
                            std::uint64_t seed, Diagnostics* diagnostics) {
    if (updates.size() < 2) throw InvalidInput("flame_aggregate: need at least 2 updates");
    if (!(noise >= 0.0)) throw InvalidConfig("flame_aggregate: noise must be non-negative");
    require_common_dim(updates, global, "flame_aggregate");
    const auto deltas = deltas_of(updates, global);
    const auto admitted = flame_admission(deltas);

    std::vector<double> admitted_norms;
    for (auto i : admitted) admitted_norms.push_back(l2_norm(deltas[i]));
    const double bound = median(admitted_norms);

    std::vector<bool> excluded(updates.size(), true), clipped(updates.size(), false);
    ParamVector out = global;
    if (bound > 0.0) {
        std::vector<double> sum(global.dim(), 0.0);
        for (std::size_t a = 0; a < admitted.size(); ++a) {
            const auto i = admitted[a];
            excluded[i] = false;
            clipped[i] = admitted_norms[a] > bound;
            const auto c = clip_to_norm(deltas[i], bound);
            for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += c[j];
        }
        for (std::size_t j = 0; j < sum.size(); ++j) out[j] += sum[j] / static_cast<double>(admitted.size());
        if (noise > 0.0) {
            Rng rng(seed);
            std::normal_distribution<double> gauss(0.0, noise * bound);
            for (std::size_t j = 0; j < out.dim(); ++j) out[j] += gauss(rng);
        }
    } else {
        for (auto i : admitted) excluded[i] = false;
    }

    if (diagnostics) {
        auto& d = *diagnostics;
        d["admitted"] = static_cast<double>(admitted.size());
        d["excluded"] = static_cast<double>(updates.size() - admitted.size());
        d["clipped"] = static_cast<double>(std::count(clipped.begin(), clipped.end(), true));
        d["median_norm"] = bound;
        double excluded_malicious = 0.0;
        for (std::size_t i = 0; i < updates.size(); ++i)
            if (excluded[i] && updates[i].role == Role::malicious) excluded_malicious += 1.0;
        d["excluded_malicious"] = excluded_malicious;
        mark_clients(diagnostics, "excluded:", updates, excluded);
        mark_clients(diagnostics, "clipped:", updates, clipped);
    }
    return out;
}

std::unique_ptr<DefenseHandle> make_defense(const DefenseSpec& spec) {
    spec.validate();
    switch (spec.kind) {
        case DefenseKind::none: return nullptr;
        case DefenseKind::krum: return std::make_unique<KrumDefense>(spec.krum_f);
        case DefenseKind::rlr: return std::make_unique<RlrDefense>(spec.rlr_threshold, spec.rlr_lr);
        case DefenseKind::flame: return std::make_unique<FlameDefense>(spec.flame_noise);
    }
    return nullptr;
}

}  // namespace fplab::defenses
