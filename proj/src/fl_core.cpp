#include "fplab/fl_core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "fplab/errors.hpp"
#include "fplab/metrics.hpp"
#include "fplab/rng.hpp"

namespace fplab {

void FederationConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw InvalidConfig("federation." + field + ": " + why);
    };
    if (n_clients < 1) fail("n_clients", "must be positive");
    if (clients_per_round < 1) fail("clients_per_round", "must be positive");
    if (clients_per_round > n_clients) fail("clients_per_round", "must not exceed n_clients");
    if (rounds < 0) fail("rounds", "must be non-negative");
    if (local_epochs < 0) fail("local_epochs", "must be non-negative");
    if (!(learning_rate > 0.0)) fail("learning_rate", "must be positive");
    if (batch_size < 1) fail("batch_size", "must be positive");
    if (!(pmr >= 0.0 && pmr <= 1.0)) fail("pmr", "must lie in [0, 1]");
    if (!(scaling_factor > 0.0)) fail("scaling_factor", "must be positive");
    if (source_class == target_class) fail("target_class", "must differ from source_class");
    if (source_class < 0) fail("source_class", "must be a valid label");
    if (target_class < 0) fail("target_class", "must be a valid label");
    if (!(poison_ratio >= 0.0 && poison_ratio <= 1.0)) fail("poison_ratio", "must lie in [0, 1]");
}

int FederationConfig::malicious_count() const {
    return static_cast<int>(std::lround(pmr * static_cast<double>(n_clients)));
}

int FederationConfig::effective_poison_start() const {
    if (poison_start_round >= 0) return poison_start_round;
    return rounds >= 200 ? 50 : rounds / 4;
}

std::vector<int> sample_clients(int pool_size, int m, std::uint64_t seed, int round) {
    if (m < 1 || m > pool_size)
        throw InvalidConfig("sample_clients: need 1 <= m <= pool_size (m=" + std::to_string(m) +
                            ", pool=" + std::to_string(pool_size) + ")");
    std::vector<int> ids(pool_size);
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(derive_seed(seed, {stream::sampling, static_cast<std::uint64_t>(round)}));
    // Partial Fisher-Yates: the first m slots become a uniform m-subset.
    for (int i = 0; i < m; ++i) {
        std::uniform_int_distribution<int> pick(i, pool_size - 1);
        std::swap(ids[i], ids[pick(rng)]);
    }
    ids.resize(m);
    std::sort(ids.begin(), ids.end());
    return ids;
}

ParamVector local_train(const Classifier& model, const ParamVector& params, const data::Shard& shard,
                        const LocalTrainOptions& options, std::uint64_t seed) {
    if (shard.empty()) throw EmptyShard("local_train: empty shard");
    if (options.batch_size < 1) throw InvalidConfig("local_train: batch_size must be positive");
    nn::Network net = model.network(params);
    if (options.epochs == 0) return params;

    nn::Adam adam;
    adam.lr = options.lr;
    Rng rng(seed);
    std::vector<std::size_t> order(shard.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::size_t> batch;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
            batch.assign(order.begin() + start, order.begin() + end);
            const auto labels = data::labels_of(shard, batch);
            net.zero_grad();
            auto out = nn::softmax_cross_entropy(net.forward(data::to_tensor(shard, batch), true), labels);
            if (!std::isfinite(out.loss))
                throw NumericDivergence("local_train: non-finite loss in epoch " + std::to_string(epoch));
            net.backward(out.grad);
            if (options.optimizer == LocalOptimizer::adam) {
                adam.step(net.params(), net.grads());
            } else {
                auto& p = net.params();
                const auto& g = net.grads();
                for (std::size_t i = 0; i < p.size(); ++i) p[i] -= options.lr * g[i];
            }
        }
    }
    return ParamVector(net.params());
}

ParamVector aggregate_fedavg(std::span<const ClientUpdate> updates) {
    if (updates.empty()) throw EmptyAggregation("aggregate_fedavg: no updates");
    const std::size_t d = updates[0].params.dim();
    double total = 0.0;
    for (const auto& u : updates) {
        require_same_dim(updates[0].params, u.params, "aggregate_fedavg");
        if (u.sample_count < 1) throw InvalidInput("aggregate_fedavg: sample_count must be >= 1");
        total += u.sample_count;
    }
    std::vector<double> out(d, 0.0);
    for (const auto& u : updates) {
        const double p = u.sample_count / total;
        for (std::size_t j = 0; j < d; ++j) out[j] += p * u.params[j];
    }
    return ParamVector(std::move(out));
}

ParamVector scale_update(const ParamVector& global_params, const ParamVector& local_params, double gamma) {
    require_same_dim(global_params, local_params, "scale_update");
    if (!(gamma > 0.0)) throw InvalidConfig("scale_update: gamma must be positive");
    if (gamma == 1.0) return local_params;
    std::vector<double> out(global_params.dim());
    for (std::size_t j = 0; j < out.size(); ++j)
        out[j] = global_params[j] + gamma * (local_params[j] - global_params[j]);
    return ParamVector(std::move(out));
}

std::vector<int> choose_malicious(int n_clients, int k, std::uint64_t seed) {
    if (k < 0 || k > n_clients) throw InvalidConfig("choose_malicious: k out of range");
    std::vector<int> ids(n_clients);
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(derive_seed(seed, {stream::malicious}));
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(k);
    std::sort(ids.begin(), ids.end());
    return ids;
}

int worker_threads() {
    if (const char* env = std::getenv("FPLAB_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

namespace {
thread_local bool inside_worker = false;
}

void parallel_for(int n, const std::function<void(int)>& fn) {
    // Nested calls (e.g. client training inside a parallel sweep) stay on the calling thread.
    const int workers = inside_worker ? 1 : std::min(n, worker_threads());
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::exception_ptr first_error;
    std::mutex mu;
    int next = 0;
    auto worker = [&] {
        inside_worker = true;
        for (;;) {
            int i;
            {
                std::lock_guard lock(mu);
                if (next >= n || first_error) return;
                i = next++;
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

FederationResult run_federation(const FederationConfig& config, const Classifier& model,
                                const data::Dataset& train, const data::Dataset& test, AttackHandle* attack,
                                const DefenseHandle* defense, const RoundObserver& observer) {
    config.validate();
    if (train.num_classes <= std::max(config.source_class, config.target_class))
        throw InvalidConfig("run_federation: dataset has no class " +
                            std::to_string(std::max(config.source_class, config.target_class)));
    if (model.spec().num_classes != train.num_classes)
        throw InvalidConfig("run_federation: classifier and dataset class counts differ");

    FederationResult result;
    result.initial_params = model.initial_params(config.seed);
    ParamVector global = result.initial_params;
    if (config.rounds == 0) {
        result.final_params = global;
        return result;
    }

    const auto shards = data::partition_dataset(train, config.n_clients, data::PartitionScheme::iid, config.seed);
    const bool attacking = attack != nullptr && attack->active() && config.malicious_count() > 0;
    if (attacking) result.malicious_ids = choose_malicious(config.n_clients, config.malicious_count(), config.seed);
    std::vector<int> behavior_slot(config.n_clients, -1);
    for (std::size_t i = 0; i < result.malicious_ids.size(); ++i)
        behavior_slot[result.malicious_ids[i]] = static_cast<int>(i);
    std::vector<std::shared_ptr<const ClientBehavior>> behaviors;

    const LocalTrainOptions train_opts{config.local_epochs, config.learning_rate, config.batch_size, config.optimizer};
    const int poison_start = config.effective_poison_start();

    for (int round = 0; round < config.rounds; ++round) {
        try {
            RoundRecord record;
            record.round = round;
            record.selected_ids = sample_clients(config.n_clients, config.clients_per_round, config.seed, round);
            const bool poisoned_round = attacking && round >= poison_start;
            if (poisoned_round && behaviors.empty()) {
                std::vector<data::Shard> owned;
                for (int id : result.malicious_ids) owned.push_back(shards[id]);
                behaviors = attack->compromise(result.malicious_ids, owned, derive_seed(config.seed, {stream::psg}));
                if (behaviors.size() != result.malicious_ids.size())
                    throw InvalidConfig("attack returned the wrong number of client behaviours");
            }

            std::vector<ClientUpdate> updates(record.selected_ids.size());
            parallel_for(static_cast<int>(updates.size()), [&](int slot) {
                const int id = record.selected_ids[slot];
                const auto seed = derive_seed(config.seed, {stream::local_train, static_cast<std::uint64_t>(round),
                                                            static_cast<std::uint64_t>(id)});
                ClientUpdate u;
                u.client_id = id;
                u.round = round;
                u.sample_count = static_cast<int>(shards[id].size());
                if (poisoned_round && behavior_slot[id] >= 0) {
                    const auto& behavior = *behaviors[behavior_slot[id]];
                    const auto local_data = behavior.training_set(shards[id], round);
                    const auto trained = local_train(model, global, local_data, train_opts, seed);
                    u.params = scale_update(global, behavior.finalize(global, trained), config.scaling_factor);
                    u.role = Role::malicious;
                } else {
                    u.params = local_train(model, global, shards[id], train_opts, seed);
                }
                updates[slot] = std::move(u);
            });

            const auto round_seed = derive_seed(config.seed, {stream::defense, static_cast<std::uint64_t>(round)});
            ParamVector next = defense ? defense->aggregate(updates, global, round_seed, record.defense_diagnostics)
                                       : aggregate_fedavg(updates);
            if (!next.all_finite()) throw NumericDivergence("aggregated model has non-finite parameters");
            global = std::move(next);

            const auto cm = metrics::confusion_matrix(model, global, test);
            record.acc = metrics::accuracy(cm);
            record.asr = metrics::attack_success_rate(cm, config.source_class, config.target_class);
            record.class_acc = metrics::per_class_accuracy(cm);
            if (observer) record.update_snapshot_ref = observer(record, global, updates);
            result.records.push_back(std::move(record));
            result.last_updates = std::move(updates);
        } catch (const RoundError&) {
            throw;
        } catch (const std::exception& e) {
            throw RoundError(round, e.what());
        }
    }
    result.final_params = global;
    return result;
}

}  // namespace fplab
