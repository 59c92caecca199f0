#pragma once
// Evaluation protocol, snapshot selection, transferability, NAS, robustness pipeline and orchestration.
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "graphslim/condense.hpp"
#include "graphslim/coreset.hpp"
#include "graphslim/robustness.hpp"
#include "json.hpp"

namespace graphslim {

// ---- worker pool -------------------------------------------------------------

/// GRAPHSLIM_WORKERS when set and positive, otherwise the hardware concurrency.
std::size_t worker_count();
/// Runs job(0..n-1) on a bounded pool; nested calls run inline. Rethrows the lowest-index failure.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& job);

// ---- protocol -----------------------------------------------------------------

struct ProtocolConfig {
    ModelSpec model{.hidden = 256, .dropout = 0.5};
    TrainConfig train{};
    std::size_t runs = 10;
    std::uint64_t seed = 0;
};

/// Training substrate for a reduced graph. Structure-free graphs train on the identity; learned
/// adjacencies are thresholded at their delta. Validation runs on the original graph.
TrainData reduced_train_data(const CondensedGraph& cg, const Graph& original);
/// A reduced graph with real structure (or the original training graph itself); rows are its train mask.
TrainData reduced_train_data(const Graph& reduced, const Graph& original);

struct RunRecord {
    std::uint64_t seed = 0;
    double val_acc = 0.0;
    double test_acc = 0.0;
    bool failed = false;
    std::string error;
};

struct Timing {
    double preprocess_s = 0.0;
    double per_epoch_s = 0.0;
    double total_s = 0.0;
    std::size_t peak_memory_bytes = 0;
};

struct EvalReport {
    std::string method;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<RunRecord> runs;
    /// Over successful runs: test accuracy mean and sample standard deviation.
    double mean = 0.0;
    double stddev = 0.0;
    double val_mean = 0.0;
    Timing timing;

    nlohmann::json to_json() const;
};

/// Mean and sample standard deviation.
std::pair<double, double> mean_stddev(std::span<const double> xs);

EvalReport evaluate_protocol(const CondensedGraph& cg, const Graph& original, const ProtocolConfig& config = {});
EvalReport evaluate_protocol(const Graph& reduced, const Graph& original, const ProtocolConfig& config = {});
/// Shared driver over an explicit substrate.
EvalReport evaluate_protocol(const std::function<TrainData()>& substrate, const Graph& original,
                             const ProtocolConfig& config);

/// Validation and test accuracy on the original graph.
std::pair<double, double> score_on(const Graph& original, const ModelSpec& spec, const Params& params);

/// Validation accuracy of one protocol run per snapshot; the argmax (ties to the later snapshot).
struct SnapshotChoice {
    std::size_t index = 0;
    CondensedGraph graph;
    std::vector<double> val_acc;
};

SnapshotChoice select_snapshot(std::span<const CondenseCheckpoint> snapshots, const Graph& original,
                               const ProtocolConfig& config = {});

// ---- transferability -------------------------------------------------------------

struct HyperGrid {
    std::vector<std::size_t> hidden = {64, 256};
    std::vector<double> lr = {0.01, 0.001};
    std::vector<double> weight_decay = {0.0, 5e-4};
    std::vector<double> dropout = {0.0, 0.5};
    /// SGC and APPNP only.
    std::vector<std::size_t> linear_layers = {1, 2};
    /// APPNP only.
    std::vector<double> alpha = {0.1, 0.2};
    std::size_t epochs = 300;

    struct Cell {
        ModelSpec spec;
        TrainConfig train;
    };
    std::vector<Cell> cells(Arch arch) const;
};

struct TransferCell {
    Arch arch = Arch::GCN;
    ModelSpec best_spec;
    TrainConfig best_train;
    double val_acc = 0.0;
    double test_acc = 0.0;
    double whole_test_acc = 0.0;
    double relative = 0.0;
    std::vector<std::string> failures;
};

struct TransferReport {
    std::vector<TransferCell> cells;
    nlohmann::json to_json() const;
    std::string to_csv() const;
};

using Substrate = std::function<TrainData()>;

/// Grid search per architecture on the reduced and the whole training graph, selected by validation.
/// Every cell trains once with seed mix_seed(seed, 0).
TransferReport transferability_matrix(const Substrate& reduced, const Substrate& whole, const Graph& original,
                                      std::span<const Arch> archs, const HyperGrid& grid, std::uint64_t seed);
TransferReport transferability_matrix(const CondensedGraph& cg, const Graph& original, std::span<const Arch> archs,
                                      const HyperGrid& grid, std::uint64_t seed,
                                      Setting setting = Setting::Transductive);

// ---- NAS -----------------------------------------------------------------------------

struct NasSpace {
    std::vector<std::size_t> k = {2, 4, 6, 8, 10};
    std::vector<double> alpha = {0.1, 0.2};
    std::vector<std::size_t> hidden = {16, 32, 64, 128, 256, 512};
    std::vector<Activation> activations = {Activation::Sigmoid, Activation::Tanh,     Activation::Relu,
                                           Activation::Linear,  Activation::Softplus, Activation::LeakyRelu,
                                           Activation::Relu6,   Activation::Elu};

    static NasSpace full() { return {}; }
    /// 2 x 2 x 3 x 2 = 24 architectures.
    static NasSpace reduced();
    std::size_t size() const { return k.size() * alpha.size() * hidden.size() * activations.size(); }
    std::vector<ModelSpec> architectures() const;
};

struct NasEntry {
    ModelSpec spec;
    double cond_val = 0.0;
    double cond_test = 0.0;
    double whole_val = 0.0;
    double whole_test = 0.0;
};

struct NasResult {
    std::vector<NasEntry> entries;
    std::size_t top1_index = 0;
    /// Whole-graph test accuracy of the architecture with the best condensed-graph validation accuracy.
    double top1_test = 0.0;
    double acc_corr = 0.0;
    double rank_corr = 0.0;
    nlohmann::json to_json() const;
};

/// Top-1 and correlations from filled entries.
NasResult nas_summary(std::vector<NasEntry> entries);
NasResult nas_search(const Substrate& reduced, const Substrate& whole, const Graph& original, const NasSpace& space,
                     const TrainConfig& train, std::uint64_t seed);
NasResult nas_search(const CondensedGraph& cg, const Graph& original, const NasSpace& space,
                     const TrainConfig& train = {}, std::uint64_t seed = 0, Setting setting = Setting::Transductive);

// ---- reduction orchestration ------------------------------------------------------------

/// whole, random, kcenter, herding, cent-d, cent-p, averaging, vng, or a condensation method.
struct ReduceConfig {
    std::string method = "random";
    ReductionConfig budget{.rate = 0.5, .ipc = std::nullopt};
    CondenseConfig condense;
    std::size_t experts = 5;
    std::size_t expert_epochs = 100;
    std::size_t snapshot_every = 1;
    ModelSpec expert_spec{.hidden = 256, .dropout = 0.5};
    /// Condensation methods checkpoint ten times and keep the best by validation.
    bool select_snapshot = true;
    ProtocolConfig protocol;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    std::string hash() const;
};

ReduceConfig reduce_config_from_json(const nlohmann::json& j);
const std::vector<std::string>& reduce_methods();
bool is_condensation_method(const std::string& method);

struct ReduceResult {
    /// Absent for "whole".
    std::optional<CondensedGraph> graph;
    std::vector<std::size_t> budget;
    std::optional<Selection> selection;
    std::vector<double> losses;
    std::vector<double> snapshot_val;
    std::size_t selected_snapshot = 0;
    double seconds = 0.0;
};

ReduceResult reduce(const Graph& g, const ReduceConfig& config, const ExpertBuffer* buffer = nullptr);

/// Protocol evaluation of a reduction result ("whole" trains on the training graph).
EvalReport evaluate_reduction(const ReduceResult& r, const Graph& g, const ReduceConfig& config,
                              const Graph* inference = nullptr);

// ---- robustness -------------------------------------------------------------------------------

struct RobustnessCell {
    std::string method;
    CorruptionSpec corruption;
    double clean_acc = 0.0;
    std::vector<double> accs;
    double mean_acc = 0.0;
    double perf_drop = 0.0;
};

struct RobustnessReport {
    std::vector<RobustnessCell> cells;
    nlohmann::json to_json() const;
    std::string to_csv() const;
};

RobustnessReport robustness_pipeline(const Graph& g, std::span<const ReduceConfig> methods,
                                     std::span<const CorruptionSpec> corruptions, const ModelSpec& surrogate = {},
                                     const AttackConfig& attack = {});

/// Removes every "timing" object, recursively.
nlohmann::json strip_timing(nlohmann::json j);

}  // namespace graphslim
