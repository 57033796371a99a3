#include "fplab/attacks.hpp"

#include "fplab/errors.hpp"
#include "fplab/rng.hpp"

namespace fplab::attacks {

namespace {

class HonestBehavior final : public ClientBehavior {
public:
    data::Shard training_set(const data::Shard& own, int) const override { return own; }
    ParamVector finalize(const ParamVector&, const ParamVector& trained) const override { return trained; }
};

class LabelFlipBehavior final : public ClientBehavior {
public:
    LabelFlipBehavior(int source, int target) : source_(source), target_(target) {}
    data::Shard training_set(const data::Shard& own, int) const override {
        return tdp_label_flip(own, source_, target_);
    }
    ParamVector finalize(const ParamVector&, const ParamVector& trained) const override { return trained; }

private:
    int source_, target_;
};

class BoostBehavior final : public ClientBehavior {
public:
    explicit BoostBehavior(double boost) : boost_(boost) {}
    data::Shard training_set(const data::Shard& own, int) const override { return own; }
    ParamVector finalize(const ParamVector& global, const ParamVector& trained) const override {
        return tmp_boost(global, trained, boost_);
    }

private:
    double boost_;
};

class PoisonBehavior final : public ClientBehavior {
public:
    PoisonBehavior(data::PoisonedDataset poison, double ratio, std::uint64_t seed)
        : poison_(std::move(poison)), ratio_(ratio), seed_(seed) {}
    data::Shard training_set(const data::Shard& own, int) const override {
        return data::mix_poison(own, poison_, ratio_, seed_);
    }
    ParamVector finalize(const ParamVector&, const ParamVector& trained) const override { return trained; }

private:
    data::PoisonedDataset poison_;
    double ratio_;
    std::uint64_t seed_;
};

}  // namespace

std::string to_string(AttackKind kind) {
    switch (kind) {
        case AttackKind::none: return "none";
        case AttackKind::poicgan: return "poicgan";
        case AttackKind::tdp_label_flip: return "tdp_label_flip";
        case AttackKind::tmp_boost: return "tmp_boost";
        case AttackKind::ada: return "ada";
    }
    return "unknown";
}

AttackKind parse_attack_kind(const std::string& name) {
    if (name == "none") return AttackKind::none;
    if (name == "poicgan") return AttackKind::poicgan;
    if (name == "tdp_label_flip" || name == "tdp") return AttackKind::tdp_label_flip;
    if (name == "tmp_boost" || name == "tmp") return AttackKind::tmp_boost;
    if (name == "ada") return AttackKind::ada;
    throw InvalidConfig("attack.kind: unknown attack '" + name + "'");
}

void AttackSpec::validate() const {
    if (kind == AttackKind::ada) throw InvalidConfig("attack.kind: ada is reserved and not implemented");
    if (kind == AttackKind::none) return;
    if (source == target) throw InvalidConfig("attack.target: must differ from attack.source");
    if (source < 0 || target < 0) throw InvalidConfig("attack: labels must be non-negative");
    if (kind == AttackKind::tmp_boost && !(boost > 0.0)) throw InvalidConfig("attack.boost: must be positive");
    if (kind == AttackKind::poicgan) {
        if (!psg) throw InvalidConfig("attack.psg: poicgan requires generator settings");
        psg->validate();
        if (psg->source != source || psg->target != target)
            throw InvalidConfig("attack.psg: generator source/target must match the attack's");
        if (!(poison_ratio >= 0.0 && poison_ratio <= 1.0))
            throw InvalidConfig("attack.poison_ratio: must lie in [0, 1]");
    }
}

data::Shard tdp_label_flip(const data::Shard& shard, int source, int target) {
    if (source == target) throw InvalidConfig("tdp_label_flip: source equals target");
    data::Shard out = shard;
    for (auto& s : out.samples)
        if (s.label == source) s.label = target;
    return out;
}

ParamVector tmp_boost(const ParamVector& global_params, const ParamVector& local_params, double boost) {
    if (global_params.dim() != local_params.dim()) throw ShapeError("tmp_boost: dimension mismatch");
    if (!(boost > 0.0)) throw InvalidConfig("tmp_boost: boost must be positive");
    if (boost == 1.0) return local_params;
    ParamVector out = global_params;
    for (std::size_t j = 0; j < out.dim(); ++j) out[j] = global_params[j] + boost * (local_params[j] - global_params[j]);
    return out;
}

std::shared_ptr<const ClientBehavior> build_malicious_client(const AttackSpec& spec, const data::Shard& shard,
                                                             const psg::PoisonGenerator* generator,
                                                             std::uint64_t seed) {
    spec.validate();
    if (spec.kind != AttackKind::none &&
        (spec.source >= shard.num_classes || spec.target >= shard.num_classes))
        throw InvalidConfig("attack: source/target outside the shard's label space");
    switch (spec.kind) {
        case AttackKind::none: return std::make_shared<HonestBehavior>();
        case AttackKind::tdp_label_flip: return std::make_shared<LabelFlipBehavior>(spec.source, spec.target);
        case AttackKind::tmp_boost: return std::make_shared<BoostBehavior>(spec.boost);
        case AttackKind::poicgan: {
            if (!generator) throw InvalidConfig("attack: poicgan client needs a trained generator");
            if (generator->target_label != spec.target)
                throw InvalidConfig("attack: generator target label differs from the attack target");
            auto poison = psg::generate_poison_set(*generator, static_cast<int>(shard.size()),
                                                   derive_seed(seed, {stream::poison}));
            return std::make_shared<PoisonBehavior>(std::move(poison), spec.poison_ratio,
                                                    derive_seed(seed, {stream::mix}));
        }
        case AttackKind::ada: break;
    }
    throw InvalidConfig("attack: unsupported kind");
}

Attack::Attack(AttackSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

std::vector<std::shared_ptr<const ClientBehavior>> Attack::compromise(std::span<const int> client_ids,
                                                                      std::span<const data::Shard> shards,
                                                                      std::uint64_t seed) {
    if (client_ids.size() != shards.size()) throw InvalidInput("compromise: id/shard count mismatch");
    std::vector<std::shared_ptr<const ClientBehavior>> out;
    if (shards.empty()) return out;

    if (spec_.kind == AttackKind::poicgan) {
        data::Dataset pooled = shards.front();
        pooled.samples.clear();
        for (const auto& s : shards) pooled.samples.insert(pooled.samples.end(), s.samples.begin(), s.samples.end());
        psg::PsgConfig cfg = *spec_.psg;
        cfg.seed = derive_seed(cfg.seed, {seed});
        generator_ = psg::train_psg(pooled, cfg);
    }
    for (std::size_t i = 0; i < shards.size(); ++i) {
        const auto client_seed = derive_seed(seed, {static_cast<std::uint64_t>(client_ids[i])});
        out.push_back(build_malicious_client(spec_, shards[i], generator_ ? &*generator_ : nullptr, client_seed));
    }
    return out;
}

}  // namespace fplab::attacks
