#pragma once

// Federated protocol simulation: client sampling, local training, FedAvg,
// malicious update scaling and the round loop.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fplab/data.hpp"
#include "fplab/model.hpp"
#include "fplab/param_vector.hpp"

namespace fplab {

enum class Role { benign, malicious };

struct ClientUpdate {
    int client_id = 0;
    ParamVector params;
    int sample_count = 1;
    int round = 0;
    Role role = Role::benign;
};

enum class LocalOptimizer { adam, sgd };

struct FederationConfig {
    int n_clients = 20;
    int clients_per_round = 10;
    int rounds = 100;
    int local_epochs = 2;
    double learning_rate = 0.01;
    int batch_size = 8;
    LocalOptimizer optimizer = LocalOptimizer::sgd;
    /// Fraction of the client pool that is compromised; k = round(pmr * n_clients).
    double pmr = 0.4;
    /// Negative selects the default: 50 for runs of 200+ rounds, rounds/4 otherwise.
    int poison_start_round = -1;
    double scaling_factor = 1.0;
    int source_class = 0;
    int target_class = 1;
    /// Share of a malicious client's local data replaced by poison in attacked rounds.
    double poison_ratio = 1.0;
    std::uint64_t seed = 1;

    /// Throws InvalidConfig naming the offending field.
    void validate() const;
    int malicious_count() const;
    int effective_poison_start() const;
};

struct RoundRecord {
    int round = 0;
    std::vector<int> selected_ids;
    double acc = 0.0;
    double asr = 0.0;
    std::vector<double> class_acc;
    std::map<std::string, double> defense_diagnostics;
    std::optional<std::string> update_snapshot_ref;
    /// Model indistinguishability of this round's submitted models, when it was evaluated.
    std::optional<double> mis;
};

struct LocalTrainOptions {
    int epochs = 2;
    double lr = 0.01;
    int batch_size = 8;
    LocalOptimizer optimizer = LocalOptimizer::sgd;
};

/// m distinct ids from [0, pool_size), a pure function of (seed, round); returned sorted.
std::vector<int> sample_clients(int pool_size, int m, std::uint64_t seed, int round);

/// Mini-batch training on softmax cross-entropy with a fresh optimiser.
ParamVector local_train(const Classifier& model, const ParamVector& params, const data::Shard& shard,
                        const LocalTrainOptions& options, std::uint64_t seed);

/// Sample-count weighted mean of the submitted parameters.
ParamVector aggregate_fedavg(std::span<const ClientUpdate> updates);

/// global + gamma * (local - global).
ParamVector scale_update(const ParamVector& global_params, const ParamVector& local_params, double gamma);

/// What a compromised client does in an attacked round.
class ClientBehavior {
public:
    virtual ~ClientBehavior() = default;
    virtual data::Shard training_set(const data::Shard& own, int round) const = 0;
    virtual ParamVector finalize(const ParamVector& global_params, const ParamVector& trained) const = 0;
};

class AttackHandle {
public:
    virtual ~AttackHandle() = default;
    virtual std::string name() const = 0;
    virtual bool active() const = 0;
    /// Called once, before the first attacked round, with the compromised clients' shards
    /// (in the order of `client_ids`). Returns one behaviour per compromised client.
    virtual std::vector<std::shared_ptr<const ClientBehavior>> compromise(std::span<const int> client_ids,
                                                                          std::span<const data::Shard> shards,
                                                                          std::uint64_t seed) = 0;
};

using Diagnostics = std::map<std::string, double>;

class DefenseHandle {
public:
    virtual ~DefenseHandle() = default;
    virtual std::string name() const = 0;
    virtual ParamVector aggregate(std::span<const ClientUpdate> updates, const ParamVector& global_params,
                                  std::uint64_t round_seed, Diagnostics& diagnostics) const = 0;
};

struct FederationResult {
    std::vector<RoundRecord> records;
    ParamVector initial_params;
    ParamVector final_params;
    /// Submitted updates of the last executed round.
    std::vector<ClientUpdate> last_updates;
    std::vector<int> malicious_ids;
};

/// Invoked after each round; may return a reference to a persisted snapshot.
using RoundObserver =
    std::function<std::optional<std::string>(const RoundRecord&, const ParamVector& global_params,
                                             std::span<const ClientUpdate> updates)>;

/// Runs the whole simulation. `attack` and `defense` may be null (benign run, plain FedAvg).
FederationResult run_federation(const FederationConfig& config, const Classifier& model,
                                const data::Dataset& train, const data::Dataset& test, AttackHandle* attack,
                                const DefenseHandle* defense, const RoundObserver& observer = {});

/// Fixed compromised identities for a run: k ids drawn from the pool, sorted.
std::vector<int> choose_malicious(int n_clients, int k, std::uint64_t seed);

/// Worker count from FPLAB_THREADS (default: hardware concurrency, at least 1).
int worker_threads();

/// Runs fn(0..n-1) on up to worker_threads() threads. Exceptions propagate (first one wins).
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace fplab
