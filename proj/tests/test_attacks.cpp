#include <doctest.h>

#include "fplab/attacks.hpp"
#include "fplab/data.hpp"
#include "fplab/errors.hpp"
#include "fplab/fl_core.hpp"
#include "fplab/model.hpp"
#include "support.hpp"

using namespace fplab;
using namespace fplab::attacks;

namespace {

struct Fixture {
    data::Dataset train, test;
    Classifier model{ClassifierSpec{ClassifierKind::linear, {1, 8, 8}, 3}};
    FederationConfig cfg;

    Fixture() {
        const auto all = data::synth_texture_dataset(3, 40, 8, 4);
        std::tie(train, test) = data::stratified_split(all, 10, 4);
        cfg.n_clients = 6;
        cfg.clients_per_round = 4;
        cfg.rounds = 4;
        cfg.local_epochs = 1;
        cfg.pmr = 0.34;
        cfg.poison_start_round = 1;
    }
};

}  // namespace

TEST_CASE("tdp_label_flip") {
    const auto shard = testing::labelled({0, 1, 0, 2}, 3);
    const auto flipped = tdp_label_flip(shard, 0, 2);
    CHECK(flipped.samples[0].label == 2);
    CHECK(flipped.samples[1].label == 1);
    CHECK(flipped.samples[2].label == 2);
    CHECK(flipped.samples[3].label == 2);
    for (std::size_t i = 0; i < shard.size(); ++i) CHECK(flipped.samples[i].pixels == shard.samples[i].pixels);

    const auto twice = tdp_label_flip(flipped, 0, 2);
    for (std::size_t i = 0; i < shard.size(); ++i) CHECK(twice.samples[i].label == flipped.samples[i].label);

    const auto no_source = testing::labelled({1, 2, 1}, 3);
    const auto same = tdp_label_flip(no_source, 0, 2);
    for (std::size_t i = 0; i < same.size(); ++i) CHECK(same.samples[i].label == no_source.samples[i].label);
    CHECK_THROWS_AS(tdp_label_flip(shard, 1, 1), InvalidConfig);
}

TEST_CASE("tmp_boost") {
    const ParamVector g{1.0, 2.0}, l{2.0, 0.0};
    CHECK(tmp_boost(g, l, 1.0) == l);
    CHECK(tmp_boost(g, l, 3.0) == ParamVector{4.0, -4.0});
    CHECK(tmp_boost(g, l, 0.5) == ParamVector{1.5, 1.0});
    CHECK(tmp_boost(g, g, 7.0) == g);
    CHECK_THROWS_AS(tmp_boost(g, l, 0.0), InvalidConfig);
    CHECK_THROWS_AS(tmp_boost(g, ParamVector{1.0}, 2.0), ShapeError);

    // Deviation from the global model scales linearly with the boost.
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const ParamVector a(testing::random_vector(rng, 9)), b(testing::random_vector(rng, 9));
        const double k = 0.1 + trial * 0.3;
        const auto out = tmp_boost(a, b, k);
        for (std::size_t j = 0; j < 9; ++j) CHECK(out[j] - a[j] == doctest::Approx(k * (b[j] - a[j])).epsilon(1e-12));
    }
}

TEST_CASE("attack spec validation") {
    AttackSpec s;
    s.kind = AttackKind::ada;
    CHECK_THROWS_AS(s.validate(), InvalidConfig);
    CHECK_THROWS_AS(Attack{s}, InvalidConfig);
    s.kind = AttackKind::tdp_label_flip;
    s.target = 0;
    CHECK_THROWS_AS(s.validate(), InvalidConfig);
    s.kind = AttackKind::poicgan;
    s.target = 1;
    CHECK_THROWS_AS(s.validate(), InvalidConfig);
    CHECK(parse_attack_kind("tdp") == AttackKind::tdp_label_flip);
    CHECK_THROWS_AS(parse_attack_kind("backdoor"), InvalidConfig);
    for (auto k : {AttackKind::none, AttackKind::poicgan, AttackKind::tdp_label_flip, AttackKind::tmp_boost})
        CHECK(parse_attack_kind(to_string(k)) == k);
}

TEST_CASE("a none attack reproduces the benign run bit for bit") {
    Fixture f;
    const auto benign = run_federation(f.cfg, f.model, f.train, f.test, nullptr, nullptr);
    Attack none(AttackSpec{});
    const auto with_none = run_federation(f.cfg, f.model, f.train, f.test, &none, nullptr);
    CHECK(benign.final_params == with_none.final_params);
}

TEST_CASE("label flipping without source samples equals the benign run") {
    Fixture f;
    // Drop class 0 from training so no client holds source samples.
    auto train = data::filter_by_label(f.train, 0, true);
    const auto benign = run_federation(f.cfg, f.model, train, f.test, nullptr, nullptr);
    AttackSpec s;
    s.kind = AttackKind::tdp_label_flip;
    s.source = 0;
    s.target = 1;
    Attack tdp(s);
    const auto flipped = run_federation(f.cfg, f.model, train, f.test, &tdp, nullptr);
    CHECK(benign.final_params == flipped.final_params);
}

TEST_CASE("malicious behaviours change the submitted update") {
    Fixture f;
    const auto shard = data::partition_dataset(f.train, 4, data::PartitionScheme::iid, 1)[0];
    const auto global = f.model.initial_params(1);
    LocalTrainOptions o;
    o.epochs = 1;
    auto submitted = [&](const ClientBehavior& b) {
        return b.finalize(global, local_train(f.model, global, b.training_set(shard, 1), o, 9));
    };
    const auto honest = submitted(*build_malicious_client(AttackSpec{}, shard));

    AttackSpec boost;
    boost.kind = AttackKind::tmp_boost;
    boost.boost = 4.0;
    const auto boosted = submitted(*build_malicious_client(boost, shard));
    CHECK(boosted == tmp_boost(global, honest, 4.0));

    AttackSpec pc;
    pc.kind = AttackKind::poicgan;
    pc.psg = psg::PsgConfig{};
    pc.psg->iterations = 2;
    pc.psg->batch_size = 4;
    const auto gen = psg::train_psg(f.train, *pc.psg);
    const auto poisoned = submitted(*build_malicious_client(pc, shard, &gen, 3));
    CHECK(poisoned != honest);
    CHECK_THROWS_AS(build_malicious_client(pc, shard, nullptr, 3), InvalidConfig);
}

TEST_CASE("poicgan attack trains one generator when compromising") {
    Fixture f;
    AttackSpec s;
    s.kind = AttackKind::poicgan;
    s.psg = psg::PsgConfig{};
    s.psg->iterations = 2;
    s.psg->batch_size = 4;
    Attack a(s);
    CHECK(!a.generator());
    const auto r = run_federation(f.cfg, f.model, f.train, f.test, &a, nullptr);
    REQUIRE(a.generator());
    CHECK(a.generator()->training_iterations == 2);
    CHECK(r.malicious_ids.size() == 2);
}
