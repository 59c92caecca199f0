#pragma once
// Condensation by gradient matching, trajectory matching and kernel ridge regression.
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "graphslim/condensed.hpp"
#include "graphslim/gnn.hpp"
#include "json.hpp"

namespace graphslim {

enum class CondenseMethod { GCond, GCondX, DosCond, SFGC, GEOM, GCSNTK };
enum class InitStrategy { RandomSample, KCenter, Herding, Averaging };
enum class WindowPolicy { Fixed, Expanding };

CondenseMethod parse_condense_method(const std::string& s);
std::string to_string(CondenseMethod m);
InitStrategy parse_init_strategy(const std::string& s);
std::string to_string(InitStrategy s);
WindowPolicy parse_window_policy(const std::string& s);
std::string to_string(WindowPolicy w);

bool is_structure_method(CondenseMethod m);

/// 64-bit FNV-1a as 16 hex digits.
std::string fnv_hex(const std::string& text);
nlohmann::json model_spec_json(const ModelSpec& s);
/// Throws std::invalid_argument on unknown keys.
ModelSpec model_spec_from_json(const nlohmann::json& j);

struct CondenseConfig {
    CondenseMethod method = CondenseMethod::GCond;
    std::size_t outer_iterations = 200;
    /// Matching steps per sampled initialization (forced to 1 for doscond).
    std::size_t match_steps = 10;
    /// Training steps on the condensed graph between matchings (gcond only).
    std::size_t inner_steps = 10;
    ModelSpec backbone{.dropout = 0.0};
    double lr_features = 0.01;
    double lr_structure = 0.001;
    double lr_labels = 0.01;
    double lr_model = 0.01;
    std::size_t structure_hidden = 128;
    /// Evaluation threshold recorded on the output graph.
    double delta = 0.5;
    /// Trajectory matching: student steps N, expert span M (in snapshots), start bound T_max.
    std::size_t student_steps = 20;
    std::size_t expert_span = 2;
    std::size_t max_start = 10;
    double student_lr = 0.5;
    WindowPolicy window = WindowPolicy::Fixed;
    bool soft_labels = false;
    /// Kernel ridge regression.
    double epsilon = 1e-3;
    std::size_t kernel_depth = 2;
    InitStrategy init = InitStrategy::RandomSample;
    /// Per-class subsample of the original training signal.
    std::size_t class_sample_cap = 256;
    std::size_t hops = 2;
    /// Record the condensed graph every this many outer iterations (0 disables).
    std::size_t checkpoint_every = 0;
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument on contradictions.
    void validate() const;
    /// The config with method-implied settings applied (gcondx and doscond have no inner loop,
    /// doscond matches once per initialization).
    CondenseConfig normalized() const;
    /// Canonical JSON text.
    std::string describe() const;
    std::string hash() const;
};

CondenseConfig condense_config_from_json(const std::string& text);

struct CondenseCheckpoint {
    std::size_t iteration = 0;
    CondensedGraph graph;
};

struct CondenseResult {
    CondensedGraph graph;
    /// Objective per outer iteration (before that iteration's update).
    std::vector<double> losses;
    std::vector<CondenseCheckpoint> checkpoints;
};

/// X' rows copied from selected training nodes (or group means for averaging); no adjacency.
CondensedGraph init_synthetic(const Graph& g, std::span<const std::size_t> budget, InitStrategy strategy,
                              std::uint64_t seed);

/// Per layer, the sum over columns of 1 - cos between matching gradient columns. A column with one zero
/// side contributes 1, two zero sides contribute 0.
Var gm_distance(std::span<const Var> a, std::span<const Var> b);
double gm_distance(std::span<const Tensor> a, std::span<const Tensor> b);

/// MLP on concatenated feature pairs: [x_i; x_j] -> relu(. W1 + b1) W2 + b2.
struct StructureGenerator {
    Params params;
};

StructureGenerator init_structure_generator(std::size_t feature_dim, std::size_t hidden, std::uint64_t seed);
/// a_ij = sigmoid((g([x_i;x_j]) + g([x_j;x_i])) / 2), zero diagonal. `phi` binds the generator's params.
Var gen_structure(std::span<const Var> phi, Var features);
Tensor gen_structure(const StructureGenerator& phi, const Tensor& features);

CondenseResult condense_gm(const Graph& g, std::span<const std::size_t> budget, const CondenseConfig& config);

/// Matching objective at step 0 for a given condensed graph and backbone initialization seed.
double gm_objective(const Graph& g, const CondensedGraph& s, const CondenseConfig& config, std::uint64_t init_seed);

struct ExpertBuffer {
    ModelSpec spec;
    std::size_t snapshot_every = 1;
    std::size_t epochs = 0;
    std::string source_hash;
    std::vector<std::uint64_t> seeds;
    std::vector<Trajectory> trajectories;

    void validate() const;
    friend bool operator==(const ExpertBuffer& a, const ExpertBuffer& b);
};

ExpertBuffer build_expert_buffer(const Graph& g, const ModelSpec& spec, std::size_t n_experts, std::size_t epochs,
                                 std::size_t snapshot_every, std::uint64_t seed, const TrainConfig& base = {});
/// manifest.json plus one expert_<i>.txt per trajectory.
void save_expert_buffer(const ExpertBuffer& buffer, const std::filesystem::path& dir);
ExpertBuffer load_expert_buffer(const std::filesystem::path& dir);

/// ||theta_{t+N} - theta*_{t+M}||^2 / (||theta*_t - theta*_{t+M}||^2 + 1e-12) for one start point.
double tm_objective(const CondensedGraph& s, const ExpertBuffer& buffer, const CondenseConfig& config,
                    std::size_t expert, std::size_t start);

CondenseResult condense_tm(const Graph& g, std::span<const std::size_t> budget, const ExpertBuffer& buffer,
                           const CondenseConfig& config);

/// One side of a kernel evaluation: features, a normalized adjacency (null for identity) and
/// optionally the precomputed self-covariance diagonals (depth + 1 columns of n x 1).
struct GntkSide {
    Var features;
    SparseOperatorPtr adjacency;
    std::vector<Var> diagonals;
};

/// Node-level NTK of a depth-layer ReLU GCN between two sides.
Var gntk(const GntkSide& a, const GntkSide& b, std::size_t depth);
Tensor gntk(const Tensor& xa, const SparseOperatorPtr& adj_a, const Tensor& xb, const SparseOperatorPtr& adj_b,
            std::size_t depth);
/// Self-covariance diagonals per layer for a constant side.
std::vector<Tensor> gntk_diagonals(const Tensor& x, const SparseOperatorPtr& adjacency, std::size_t depth);

/// 0.5 ||y_T - K_TS (K_SS + eps I)^{-1} y_S||^2, with T and S given as rows of their sides.
Var krr_loss(const GntkSide& t, std::span<const std::size_t> t_rows, const Tensor& y_t, const GntkSide& s,
             std::span<const std::size_t> s_rows, const Tensor& y_s, double epsilon, std::size_t depth);

/// Balanced one-hot targets following `labels`.
Tensor one_hot(std::span<const int> labels, std::size_t num_classes);

CondenseResult condense_krr(const Graph& g, std::span<const std::size_t> budget, const CondenseConfig& config);

/// Dispatch on config.method. Trajectory methods need `buffer`.
CondenseResult condense(const Graph& g, std::span<const std::size_t> budget, const CondenseConfig& config,
                        const ExpertBuffer* buffer = nullptr);

}  // namespace graphslim
