#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "fplab/data.hpp"
#include "fplab/fl_core.hpp"
#include "fplab/psg.hpp"

namespace fplab::attacks {

/// `ada` is reserved and rejected at validation time.
enum class AttackKind { none, poicgan, tdp_label_flip, tmp_boost, ada };

std::string to_string(AttackKind kind);
AttackKind parse_attack_kind(const std::string& name);

struct AttackSpec {
    AttackKind kind = AttackKind::none;
    int source = 0;
    int target = 1;
    /// Update boost factor (tmp_boost only).
    double boost = 1.0;
    /// Generator settings (poicgan only).
    std::optional<psg::PsgConfig> psg;
    /// Share of local data replaced by poison (poicgan only).
    double poison_ratio = 1.0;

    void validate() const;
};

/// Relabels every source-class sample as the target; pixels are untouched.
data::Shard tdp_label_flip(const data::Shard& shard, int source, int target);

/// global + boost * (local - global).
ParamVector tmp_boost(const ParamVector& global_params, const ParamVector& local_params, double boost);

/// Behaviour of one compromised client. `generator` is required for poicgan.
std::shared_ptr<const ClientBehavior> build_malicious_client(const AttackSpec& spec, const data::Shard& shard,
                                                             const psg::PoisonGenerator* generator = nullptr,
                                                             std::uint64_t seed = 0);

/// Attack handle for run_federation. For poicgan, one generator is trained on the pooled
/// data of all compromised clients; each client then draws its own poison set from it.
class Attack final : public AttackHandle {
public:
    explicit Attack(AttackSpec spec);

    std::string name() const override { return to_string(spec_.kind); }
    bool active() const override { return spec_.kind != AttackKind::none; }
    std::vector<std::shared_ptr<const ClientBehavior>> compromise(std::span<const int> client_ids,
                                                                  std::span<const data::Shard> shards,
                                                                  std::uint64_t seed) override;

    const AttackSpec& spec() const noexcept { return spec_; }
    /// Generator trained during compromise(); empty for other kinds or before the first attacked round.
    const std::optional<psg::PoisonGenerator>& generator() const noexcept { return generator_; }

private:
    AttackSpec spec_;
    std::optional<psg::PoisonGenerator> generator_;
};

}  // namespace fplab::attacks
