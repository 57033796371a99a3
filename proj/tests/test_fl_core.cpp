#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "fplab/attacks.hpp"
#include "fplab/data.hpp"
#include "fplab/errors.hpp"
#include "fplab/fl_core.hpp"
#include "support.hpp"

using namespace fplab;

TEST_CASE("sample_clients") {
    SUBCASE("m equal to pool returns everyone") {
        const auto ids = sample_clients(20, 20, 123, 4);
        std::vector<int> all(20);
        std::iota(all.begin(), all.end(), 0);
        CHECK(ids == all);
    }
    SUBCASE("deterministic by seed and round") {
        CHECK(sample_clients(20, 10, 7, 3) == sample_clients(20, 10, 7, 3));
        CHECK(sample_clients(20, 10, 7, 3) != sample_clients(20, 10, 7, 4));
    }
    SUBCASE("m distinct ids in range") {
        for (int round = 0; round < 50; ++round) {
            const auto ids = sample_clients(20, 10, 99, round);
            REQUIRE(ids.size() == 10);
            CHECK(std::set<int>(ids.begin(), ids.end()).size() == 10);
            CHECK(*std::min_element(ids.begin(), ids.end()) >= 0);
            CHECK(*std::max_element(ids.begin(), ids.end()) < 20);
        }
    }
    SUBCASE("each client is chosen about half the time over 1000 rounds") {
        std::vector<int> hits(20, 0);
        for (int round = 0; round < 1000; ++round)
            for (int id : sample_clients(20, 10, 2024, round)) ++hits[id];
        for (int h : hits) CHECK(std::abs(h / 1000.0 - 0.5) <= 0.05);
    }
    SUBCASE("m larger than pool is rejected") { CHECK_THROWS_AS(sample_clients(5, 6, 1, 0), InvalidConfig); }
}

TEST_CASE("aggregate_fedavg examples") {
    using testing::update;
    const std::vector<ClientUpdate> one{update(0, {1.5, -2.0}, 7)};
    CHECK(aggregate_fedavg(one) == one[0].params);

    const std::vector<ClientUpdate> sym{update(0, {1, 3}), update(1, {3, 5})};
    CHECK(aggregate_fedavg(sym) == ParamVector{2, 4});

    const std::vector<ClientUpdate> weighted{update(0, {0, 0}, 1), update(1, {4, 4}, 3)};
    CHECK(aggregate_fedavg(weighted) == ParamVector{3, 3});

    CHECK_THROWS_AS(aggregate_fedavg({}), EmptyAggregation);
    const std::vector<ClientUpdate> mismatch{update(0, {1, 2}), update(1, {1})};
    CHECK_THROWS_AS(aggregate_fedavg(mismatch), ShapeError);
}

TEST_CASE("aggregate_fedavg properties on random instances") {
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<int> n_dist(1, 6), d_dist(1, 30), c_dist(1, 50);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = n_dist(rng), d = d_dist(rng);
        std::vector<ClientUpdate> ups;
        for (int i = 0; i < n; ++i) ups.push_back(testing::update(i, testing::random_vector(rng, d, -5, 5), c_dist(rng)));
        const auto out = aggregate_fedavg(ups);

        // Output stays inside the coordinate-wise hull of the inputs.
        for (int j = 0; j < d; ++j) {
            double lo = 1e300, hi = -1e300;
            for (const auto& u : ups) lo = std::min(lo, u.params[j]), hi = std::max(hi, u.params[j]);
            CHECK(out[j] >= lo - 1e-12);
            CHECK(out[j] <= hi + 1e-12);
        }
        // Permutation invariance.
        auto shuffled = ups;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        const auto out2 = aggregate_fedavg(shuffled);
        for (int j = 0; j < d; ++j) CHECK(out2[j] == doctest::Approx(out[j]).epsilon(1e-12));
        // Identical inputs give that input back.
        std::vector<ClientUpdate> same(n, ups[0]);
        const auto back = aggregate_fedavg(same);
        for (int j = 0; j < d; ++j) CHECK(std::abs(back[j] - ups[0].params[j]) <= 1e-12 * std::max(1.0, std::abs(back[j])));
    }
}

TEST_CASE("scale_update") {
    const ParamVector g{1.0, -2.0}, l{2.0, 5.0};
    CHECK(scale_update(g, l, 1.0) == l);
    CHECK(scale_update(ParamVector{1.0}, ParamVector{2.0}, 3.0) == ParamVector{4.0});
    for (double gamma : {0.5, 2.0, 7.0}) CHECK(scale_update(g, g, gamma) == g);
    CHECK_THROWS_AS(scale_update(g, ParamVector{1.0}, 2.0), ShapeError);
    CHECK_THROWS_AS(scale_update(g, l, 0.0), InvalidConfig);

    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const ParamVector a(testing::random_vector(rng, 9)), b(testing::random_vector(rng, 9));
        const double gamma = std::uniform_real_distribution<double>(0.1, 6.0)(rng);
        CHECK(scale_update(a, b, gamma) == attacks::tmp_boost(a, b, gamma));
    }
}

TEST_CASE("local_train") {
    ClassifierSpec spec;
    spec.kind = ClassifierKind::linear;
    spec.input = {1, 2, 2};
    spec.num_classes = 3;
    Classifier model(spec);
    const ParamVector p0 = model.initial_params(3);

    SUBCASE("zero epochs returns params unchanged") {
        const auto shard = testing::labelled({0, 1, 2}, 3, 2);
        LocalTrainOptions o;
        o.epochs = 0;
        CHECK(local_train(model, p0, shard, o, 1) == p0);
    }

    SUBCASE("one sample, one step equals params minus lr times the closed-form gradient") {
        data::Dataset shard;
        shard.num_classes = 3;
        shard.image_shape = {1, 2, 2};
        shard.samples.push_back({0, 2, {0.5, -0.25, 1.0, 0.0}});
        LocalTrainOptions o;
        o.epochs = 1;
        o.batch_size = 1;
        o.lr = 0.1;
        o.optimizer = LocalOptimizer::sgd;
        const auto p1 = local_train(model, p0, shard, o, 9);

        // logits = W x + b, dL/dW = (softmax - onehot) x^T, dL/db = softmax - onehot.
        const auto& x = shard.samples[0].pixels;
        std::vector<double> z(3);
        for (int k = 0; k < 3; ++k) {
            z[k] = p0[12 + k];
            for (int i = 0; i < 4; ++i) z[k] += p0[k * 4 + i] * x[i];
        }
        const double mx = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (auto& v : z) sum += (v = std::exp(v - mx));
        std::vector<double> expect = p0.values();
        for (int k = 0; k < 3; ++k) {
            const double delta = z[k] / sum - (k == 2 ? 1.0 : 0.0);
            for (int i = 0; i < 4; ++i) expect[k * 4 + i] -= 0.1 * delta * x[i];
            expect[12 + k] -= 0.1 * delta;
        }
        for (std::size_t i = 0; i < expect.size(); ++i) CHECK(p1[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    }

    SUBCASE("training lowers the loss on a separable shard") {
        ClassifierSpec cnn;
        Classifier net(cnn);
        const auto all = data::synth_texture_dataset(4, 10, 16, 21);
        const ParamVector init = net.initial_params(2);
        LocalTrainOptions o;
        o.epochs = 5;
        const auto trained = local_train(net, init, all, o, 4);
        CHECK(all.size() == 40);
        CHECK(net.loss(trained, all) < net.loss(init, all));
    }

    SUBCASE("deterministic given the seed") {
        const auto shard = data::synth_texture_dataset(3, 4, 16, 2);
        Classifier net(ClassifierSpec{ClassifierKind::cnn, {1, 16, 16}, 3});
        const auto init = net.initial_params(1);
        LocalTrainOptions o;
        CHECK(local_train(net, init, shard, o, 5) == local_train(net, init, shard, o, 5));
    }

    SUBCASE("empty shard") {
        data::Dataset empty;
        empty.num_classes = 3;
        CHECK_THROWS_AS(local_train(model, p0, empty, {}, 1), EmptyShard);
    }

    SUBCASE("divergence is reported") {
        auto shard = testing::labelled({0, 1}, 3, 2);
        ParamVector bad = p0;
        bad[0] = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(local_train(model, bad, shard, {}, 1), NumericDivergence);
    }
}

TEST_CASE("federation config validation names the field") {
    FederationConfig c;
    c.clients_per_round = 30;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("clients_per_round"), InvalidConfig);
    c = {};
    c.source_class = c.target_class = 2;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("target_class"), InvalidConfig);
    c = {};
    c.pmr = 1.5;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("pmr"), InvalidConfig);
    c = {};
    c.rounds = 300;
    CHECK(c.effective_poison_start() == 50);
    c.rounds = 100;
    CHECK(c.effective_poison_start() == 25);
    c.pmr = 0.4;
    CHECK(c.malicious_count() == 8);
}

TEST_CASE("choose_malicious is a fixed sorted subset") {
    const auto a = choose_malicious(20, 8, 3);
    CHECK(a == choose_malicious(20, 8, 3));
    CHECK(a.size() == 8);
    CHECK(std::is_sorted(a.begin(), a.end()));
    CHECK(std::set<int>(a.begin(), a.end()).size() == 8);
}

namespace {

struct SmallWorld {
    data::Dataset train, test;
    Classifier model{ClassifierSpec{}};
    FederationConfig config;

    SmallWorld() {
        auto all = data::synth_texture_dataset(4, 30, 16, 8);
        std::tie(train, test) = data::stratified_split(all, 10, 8);
        config.n_clients = 8;
        config.clients_per_round = 4;
        config.rounds = 6;
        config.seed = 12;
    }
};

}  // namespace

TEST_CASE("run_federation") {
    SmallWorld w;

    SUBCASE("zero rounds returns the initial model and no records") {
        w.config.rounds = 0;
        const auto r = run_federation(w.config, w.model, w.train, w.test, nullptr, nullptr);
        CHECK(r.records.empty());
        CHECK(r.final_params == w.model.initial_params(w.config.seed));
    }

    SUBCASE("records one entry per round with m distinct clients") {
        const auto r = run_federation(w.config, w.model, w.train, w.test, nullptr, nullptr);
        REQUIRE(r.records.size() == 6);
        for (const auto& rec : r.records) {
            CHECK(std::set<int>(rec.selected_ids.begin(), rec.selected_ids.end()).size() == 4);
            CHECK(rec.acc >= 0.0);
            CHECK(rec.acc <= 1.0);
        }
    }

    SUBCASE("bit-reproducible for a fixed seed") {
        attacks::AttackSpec spec;
        spec.kind = attacks::AttackKind::tdp_label_flip;
        w.config.pmr = 0.5;
        attacks::Attack a1(spec), a2(spec);
        const auto r1 = run_federation(w.config, w.model, w.train, w.test, &a1, nullptr);
        const auto r2 = run_federation(w.config, w.model, w.train, w.test, &a2, nullptr);
        CHECK(r1.final_params == r2.final_params);
        for (std::size_t i = 0; i < r1.records.size(); ++i) {
            CHECK(r1.records[i].acc == r2.records[i].acc);
            CHECK(r1.records[i].asr == r2.records[i].asr);
            CHECK(r1.records[i].selected_ids == r2.records[i].selected_ids);
        }
    }

    SUBCASE("malicious roles appear only from the poison start round") {
        attacks::AttackSpec spec;
        spec.kind = attacks::AttackKind::tdp_label_flip;
        attacks::Attack attack(spec);
        w.config.pmr = 0.5;
        w.config.poison_start_round = 3;
        w.config.rounds = 6;
        int first_malicious = -1;
        const auto r = run_federation(w.config, w.model, w.train, w.test, &attack, nullptr,
                                      [&](const RoundRecord& rec, const ParamVector&, std::span<const ClientUpdate> ups)
                                          -> std::optional<std::string> {
                                          for (const auto& u : ups)
                                              if (u.role == Role::malicious && first_malicious < 0)
                                                  first_malicious = rec.round;
                                          return std::nullopt;
                                      });
        CHECK(r.malicious_ids.size() == 4);
        CHECK(first_malicious >= 3);
    }

    SUBCASE("thread count does not change results") {
        setenv("FPLAB_THREADS", "1", 1);
        const auto serial = run_federation(w.config, w.model, w.train, w.test, nullptr, nullptr);
        setenv("FPLAB_THREADS", "4", 1);
        const auto threaded = run_federation(w.config, w.model, w.train, w.test, nullptr, nullptr);
        unsetenv("FPLAB_THREADS");
        CHECK(serial.final_params == threaded.final_params);
    }

    SUBCASE("dataset must cover source and target") {
        w.config.target_class = 5;
        CHECK_THROWS_AS(run_federation(w.config, w.model, w.train, w.test, nullptr, nullptr), InvalidConfig);
    }
}

TEST_CASE("all-benign federation learns the synthetic task") {
    auto all = data::synth_texture_dataset(4, 150, 16, 1);
    auto [train, test] = data::stratified_split(all, 50, 1);
    FederationConfig c;
    c.pmr = 0.0;
    c.rounds = 60;
    Classifier model{ClassifierSpec{}};
    const auto r = run_federation(c, model, train, test, nullptr, nullptr);
    CHECK(r.records.back().acc > 0.8);
}
