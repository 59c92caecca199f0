#pragma once
// Feature masking, random structural noise, PR-BCD structural attack and corruption scenarios.
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "graphslim/gnn.hpp"

namespace graphslim {

enum class CorruptionKind { Feature, Structure, Attack };
enum class Scenario { Poisoning, PoisoningEvasion };

CorruptionKind parse_corruption_kind(const std::string& s);
std::string to_string(CorruptionKind k);
Scenario parse_scenario(const std::string& s);
std::string to_string(Scenario s);
/// Transductive graphs are corrupted for training and inference, inductive ones for training only.
Scenario default_scenario(Setting setting);

struct CorruptionSpec {
    CorruptionKind kind = CorruptionKind::Structure;
    double rate = 0.5;
    Scenario scenario = Scenario::PoisoningEvasion;
    std::size_t repeats = 3;
    std::uint64_t seed = 0;

    void validate() const;
    std::string describe() const;
};

/// Each entry zeroed independently with probability `rate`.
Graph corrupt_features(const Graph& g, double rate, std::uint64_t seed);
/// Adds round(rate * |E|) uniformly drawn absent pairs with weight 1.
Graph corrupt_structure(const Graph& g, double rate, std::uint64_t seed);

struct AttackConfig {
    std::size_t steps = 100;
    std::size_t block_size = 10000;
    std::size_t final_samples = 20;
    /// Step length as a fraction of the budget, decayed by 1/sqrt(step + 1).
    double step_scale = 1.0;
    /// Coordinates below this mass are resampled after each step.
    double resample_below = 1e-3;
    TrainConfig surrogate_training{.epochs = 200};
};

struct AttackTrace {
    std::size_t budget = 0;
    /// Perturbation mass after each projection.
    std::vector<double> mass;
    std::size_t flips = 0;
    double clean_loss = 0.0;
    double attacked_loss = 0.0;
};

/// Projected gradient attack over random blocks of edge flips against a surrogate trained on `g`.
Graph attack_prbcd(const Graph& g, const ModelSpec& surrogate, double budget_rate, std::uint64_t seed,
                   const AttackConfig& config = {}, AttackTrace* trace = nullptr);

/// Euclidean projection onto {0 <= p <= 1, sum p <= budget}.
void project_budget(std::span<double> p, double budget);

/// One corrupted copy for repeat `repeat` (seed mixed with the repeat index).
Graph corrupt(const Graph& g, const CorruptionSpec& spec, std::size_t repeat, const ModelSpec& surrogate = {},
              const AttackConfig& attack = {});

struct ScenarioInputs {
    Graph training;
    Graph inference;
};

ScenarioInputs apply_scenario(const Graph& clean, const Graph& corrupted, Scenario scenario);

/// (clean - corrupted) / clean.
double perf_drop(double clean_accuracy, double corrupted_accuracy);

/// Bundle plus meta.json carrying the corruption spec and repeat index.
void save_corrupted(const Graph& g, const CorruptionSpec& spec, std::size_t repeat, const std::filesystem::path& dir);

}  // namespace graphslim
