#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fplab/fl_core.hpp"

namespace fplab::defenses {

enum class DefenseKind { none, krum, rlr, flame };

std::string to_string(DefenseKind kind);
DefenseKind parse_defense_kind(const std::string& name);

struct DefenseSpec {
    DefenseKind kind = DefenseKind::none;
    /// Assumed malicious updates per round; negative means round(pmr * clients_per_round).
    int krum_f = -1;
    /// Sign-agreement threshold; non-positive means ceil(m / 2) + 1.
    int rlr_threshold = -1;
    double rlr_lr = 1.0;
    /// Noise multiplier on the median admitted update norm.
    double flame_noise = 0.001;

    /// Fills in the automatic defaults from the federation settings.
    DefenseSpec resolved(const FederationConfig& federation) const;
    void validate() const;
};

/// Index of the update with the smallest sum of squared distances to its n - f - 2 nearest peers.
/// Ties go to the lowest client_id.
std::size_t krum_index(std::span<const ClientUpdate> updates, int f);
ClientUpdate krum_select(std::span<const ClientUpdate> updates, int f);

/// Per-coordinate sign vote over deltas: the server step keeps +lr where |sum of signs| >= threshold
/// and flips to -lr elsewhere.
ParamVector rlr_aggregate(std::span<const ClientUpdate> updates, const ParamVector& global_params, int threshold,
                          double lr, Diagnostics* diagnostics = nullptr);

/// Largest connected group of deltas under the median pairwise cosine distance.
std::vector<std::size_t> flame_admission(std::span<const std::vector<double>> deltas);

/// Scales `delta` down to `bound` when its norm exceeds it.
std::vector<double> clip_to_norm(std::span<const double> delta, double bound);

/// Cosine-cluster admission, median-norm clipping and Gaussian noise (std = noise * median norm).
ParamVector flame_aggregate(std::span<const ClientUpdate> updates, const ParamVector& global_params, double noise,
                            std::uint64_t seed, Diagnostics* diagnostics = nullptr);

/// Server-side aggregation strategy for run_federation; null for plain FedAvg.
std::unique_ptr<DefenseHandle> make_defense(const DefenseSpec& resolved_spec);

}  // namespace fplab::defenses
