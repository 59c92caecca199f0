#include "graphslim/robustness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "json.hpp"

namespace graphslim {

using nlohmann::json;

namespace {

std::uint64_t pair_key(std::size_t u, std::size_t v, std::size_t n) {
    return static_cast<std::uint64_t>(std::min(u, v)) * n + std::max(u, v);
}

void check_rate(double rate) {
    if (!(rate >= 0.0 && rate <= 1.0)) {
        throw std::invalid_argument("corruption rate must lie in [0, 1]");
    }
}

}  // namespace

CorruptionKind parse_corruption_kind(const std::string& s) {
    if (s == "feature") return CorruptionKind::Feature;
    if (s == "structure") return CorruptionKind::Structure;
    if (s == "attack") return CorruptionKind::Attack;
    throw std::invalid_argument("unknown corruption kind: " + s);
}

std::string to_string(CorruptionKind k) {
    switch (k) {
        case CorruptionKind::Feature: return "feature";
        case CorruptionKind::Structure: return "structure";
        case CorruptionKind::Attack: return "attack";
    }
    return "?";
}

Scenario parse_scenario(const std::string& s) {
    if (s == "poisoning") return Scenario::Poisoning;
    if (s == "poisoning+evasion") return Scenario::PoisoningEvasion;
    throw std::invalid_argument("unknown scenario: " + s);
}

std::string to_string(Scenario s) { return s == Scenario::Poisoning ? "poisoning" : "poisoning+evasion"; }

Scenario default_scenario(Setting setting) {
    return setting == Setting::Transductive ? Scenario::PoisoningEvasion : Scenario::Poisoning;
}

void CorruptionSpec::validate() const {
    check_rate(rate);
    if (repeats == 0) {
        throw std::invalid_argument("repeats must be positive");
    }
    if (kind == CorruptionKind::Attack && rate >= 1.0) {
        throw std::invalid_argument("attack budget rate must be below 1");
    }
}

std::string CorruptionSpec::describe() const {
    return json{{"kind", to_string(kind)},
                {"rate", rate},
                {"scenario", to_string(scenario)},
                {"repeats", repeats},
                {"seed", seed}}
        .dump();
}

Graph corrupt_features(const Graph& g, double rate, std::uint64_t seed) {
    check_rate(rate);
    Graph out = g;
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution mask(rate);
    for (double& v : out.features.values()) {
        if (mask(rng)) {
            v = 0.0;
        }
    }
    return out;
}

Graph corrupt_structure(const Graph& g, double rate, std::uint64_t seed) {
    check_rate(rate);
    const auto add = static_cast<std::size_t>(std::llround(rate * static_cast<double>(g.edges.size())));
    const std::size_t n = g.num_nodes;
    const std::size_t pairs = n < 2 ? 0 : n * (n - 1) / 2;
    if (add > pairs - g.edges.size()) {
        throw std::invalid_argument("corrupt_structure: " + std::to_string(add) + " additions requested but only " +
                                    std::to_string(pairs - g.edges.size()) + " absent pairs");
    }
    std::set<std::uint64_t> taken;
    for (const Edge& e : g.edges) {
        taken.insert(pair_key(e.u, e.v, n));
    }
    Graph out = g;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> node(0, n == 0 ? 0 : n - 1);
    std::size_t added = 0;
    while (added < add) {
        const std::size_t u = node(rng);
        const std::size_t v = node(rng);
        if (u == v || !taken.insert(pair_key(u, v, n)).second) {
            continue;
        }
        out.edges.push_back({std::min(u, v), std::max(u, v), 1.0});
        ++added;
    }
    out.edges = canonical_edges(std::move(out.edges));
    return out;
}

void project_budget(std::span<double> p, double budget) {
    auto clipped_sum = [&](double mu) {
        double s = 0.0;
        for (double v : p) {
            s += std::clamp(v - mu, 0.0, 1.0);
        }
        return s;
    };
    double mu = 0.0;
    if (clipped_sum(0.0) > budget) {
        double lo = 0.0;
        double hi = *std::max_element(p.begin(), p.end());
        for (int it = 0; it < 100; ++it) {
            const double mid = 0.5 * (lo + hi);
            (clipped_sum(mid) > budget ? lo : hi) = mid;
        }
        mu = hi;
    }
    for (double& v : p) {
        v = std::clamp(v - mu, 0.0, 1.0);
    }
}

namespace {

// Candidate flips over the union of existing edges and sampled absent pairs.
struct FlipBlock {
    std::vector<std::uint64_t> keys;
    std::vector<double> mass;
};

class AttackModel {
  public:
    AttackModel(const Graph& g, const ModelSpec& spec, const Params& params, std::vector<int> targets)
        : g_(g), spec_(spec), params_(params), targets_(std::move(targets)), input_(NodeInput::constant(g.features)) {
        rows_.resize(g.num_nodes);
        std::iota(rows_.begin(), rows_.end(), 0);
        for (std::size_t e = 0; e < g.edges.size(); ++e) {
            index_[pair_key(g.edges[e].u, g.edges[e].v, g.num_nodes)] = e;
        }
    }

    // Loss and its gradient with respect to each block coordinate.
    double loss(const FlipBlock& block, std::vector<double>* grad) const {
        const std::size_t n = g_.num_nodes;
        auto edges = std::make_shared<EdgeList>();
        edges->num_nodes = n;
        Tensor base(g_.edges.size(), 1);
        for (std::size_t e = 0; e < g_.edges.size(); ++e) {
            edges->src.push_back(g_.edges[e].u);
            edges->dst.push_back(g_.edges[e].v);
            base[e] = g_.edges[e].weight;
        }
        auto slot = std::make_shared<std::vector<std::size_t>>();
        std::vector<double> sign;
        for (std::uint64_t key : block.keys) {
            auto it = index_.find(key);
            if (it != index_.end()) {
                slot->push_back(it->second);
                sign.push_back(-g_.edges[it->second].weight);
            } else {
                slot->push_back(edges->src.size());
                edges->src.push_back(static_cast<std::size_t>(key / n));
                edges->dst.push_back(static_cast<std::size_t>(key % n));
                sign.push_back(1.0);
            }
        }
        const std::size_t total = edges->src.size();
        Tensor base_full(total, 1);
        std::copy(base.values().begin(), base.values().end(), base_full.values().begin());
        Tape tape;
        Var p = tape.leaf(Tensor(block.mass.size(), 1, block.mass), grad != nullptr);
        Var weights = add(tape.constant(std::move(base_full)),
                          scatter_rows(mul_const(p, Tensor(sign.size(), 1, sign)), slot, total));
        auto vars = bind_params(tape, params_, false);
        Var logits = forward(spec_, vars, GraphOperator::weighted_edges(weights, edges), input_);
        Var l = cross_entropy(logits, rows_, targets_);
        if (grad != nullptr) {
            auto gmap = backward(tape, l);
            const Tensor& gp = gmap.at(p.id());
            grad->assign(gp.values().begin(), gp.values().end());
        }
        return l.value().item();
    }

  private:
    const Graph& g_;
    ModelSpec spec_;
    const Params& params_;
    std::vector<int> targets_;
    std::vector<std::size_t> rows_;
    NodeInput input_;
    std::map<std::uint64_t, std::size_t> index_;
};

Graph apply_flips(const Graph& g, const std::vector<std::uint64_t>& flips) {
    const std::size_t n = g.num_nodes;
    std::set<std::uint64_t> flip(flips.begin(), flips.end());
    Graph out = g;
    out.edges.clear();
    for (const Edge& e : g.edges) {
        if (flip.erase(pair_key(e.u, e.v, n)) == 0) {
            out.edges.push_back(e);
        }
    }
    for (std::uint64_t key : flip) {
        out.edges.push_back({static_cast<std::size_t>(key / n), static_cast<std::size_t>(key % n), 1.0});
    }
    out.edges = canonical_edges(std::move(out.edges));
    return out;
}

}  // namespace

Graph attack_prbcd(const Graph& g, const ModelSpec& surrogate, double budget_rate, std::uint64_t seed,
                   const AttackConfig& config, AttackTrace* trace) {
    if (!(budget_rate >= 0.0 && budget_rate < 1.0)) {
        throw std::invalid_argument("attack budget rate must lie in [0, 1)");
    }
    const std::size_t n = g.num_nodes;
    const auto budget = static_cast<std::size_t>(std::llround(budget_rate * static_cast<double>(g.edges.size())));
    AttackTrace local;
    AttackTrace& tr = trace != nullptr ? *trace : local;
    tr = AttackTrace{};
    tr.budget = budget;
    if (budget == 0) {
        return g;
    }
    const std::size_t pairs = n * (n - 1) / 2;
    const std::size_t block_size = std::min(config.block_size, pairs);
    if (block_size < budget) {
        throw std::invalid_argument("attack block size " + std::to_string(block_size) + " is below the budget " +
                                    std::to_string(budget));
    }

    TrainResult sur;
    try {
        sur = train(surrogate, train_data(g), config.surrogate_training, mix_seed(seed, 1));
    } catch (const NumericalError& e) {
        throw NumericalError(std::string("surrogate training failed: ") + e.what());
    }
    // Labels on the training nodes, surrogate predictions elsewhere.
    const Tensor clean_logits = predict(surrogate, sur.params, GraphOperator::from_graph(g), NodeInput::constant(g.features));
    std::vector<int> targets(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto r = clean_logits.row(i);
        targets[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
    }
    for (std::size_t i : g.train) {
        targets[i] = g.labels[i];
    }
    AttackModel model(g, surrogate, sur.params, targets);

    std::mt19937_64 rng(mix_seed(seed, 2));
    std::uniform_int_distribution<std::size_t> node(0, n - 1);
    FlipBlock block;
    std::set<std::uint64_t> in_block;
    auto fill = [&]() {
        if (block_size == pairs && block.keys.empty()) {
            for (std::size_t u = 0; u < n; ++u) {
                for (std::size_t v = u + 1; v < n; ++v) {
                    block.keys.push_back(pair_key(u, v, n));
                    block.mass.push_back(0.0);
                }
            }
            in_block.insert(block.keys.begin(), block.keys.end());
            return;
        }
        while (block.keys.size() < block_size) {
            const std::size_t u = node(rng);
            const std::size_t v = node(rng);
            if (u != v && in_block.insert(pair_key(u, v, n)).second) {
                block.keys.push_back(pair_key(u, v, n));
                block.mass.push_back(0.0);
            }
        }
    };
    fill();
    tr.clean_loss = model.loss(block, nullptr);

    const double b = static_cast<double>(budget);
    std::vector<double> grad;
    for (std::size_t step = 0; step < config.steps; ++step) {
        model.loss(block, &grad);
        double norm = 0.0;
        for (double v : grad) {
            norm += std::abs(v);
        }
        if (norm > 0.0) {
            const double lr = config.step_scale * b / std::sqrt(static_cast<double>(step) + 1.0) / norm;
            for (std::size_t i = 0; i < grad.size(); ++i) {
                block.mass[i] += lr * grad[i];
            }
        }
        project_budget(block.mass, b);
        tr.mass.push_back(std::accumulate(block.mass.begin(), block.mass.end(), 0.0));
        if (step + 1 < config.steps && block_size < pairs) {
            FlipBlock kept;
            for (std::size_t i = 0; i < block.keys.size(); ++i) {
                if (block.mass[i] >= config.resample_below) {
                    kept.keys.push_back(block.keys[i]);
                    kept.mass.push_back(block.mass[i]);
                } else {
                    in_block.erase(block.keys[i]);
                }
            }
            block = std::move(kept);
            fill();
        }
    }

    // Bernoulli draws adjusted to exactly `budget` flips; keep the most damaging.
    std::vector<std::size_t> order(block.keys.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) { return block.mass[a] > block.mass[c]; });
    std::vector<std::uint64_t> best;
    double best_loss = -INFINITY;
    for (std::size_t s = 0; s < std::max<std::size_t>(config.final_samples, 1); ++s) {
        std::vector<char> pick(block.keys.size(), 0);
        std::size_t count = 0;
        for (std::size_t i = 0; i < block.keys.size(); ++i) {
            if (std::bernoulli_distribution(std::clamp(block.mass[i], 0.0, 1.0))(rng)) {
                pick[i] = 1;
                ++count;
            }
        }
        for (auto it = order.rbegin(); count > budget && it != order.rend(); ++it) {
            if (pick[*it]) {
                pick[*it] = 0;
                --count;
            }
        }
        for (auto it = order.begin(); count < budget && it != order.end(); ++it) {
            if (!pick[*it]) {
                pick[*it] = 1;
                ++count;
            }
        }
        FlipBlock discrete;
        for (std::size_t i = 0; i < block.keys.size(); ++i) {
            if (pick[i]) {
                discrete.keys.push_back(block.keys[i]);
                discrete.mass.push_back(1.0);
            }
        }
        const double l = model.loss(discrete, nullptr);
        if (l > best_loss) {
            best_loss = l;
            best = discrete.keys;
        }
    }
    tr.flips = best.size();
    tr.attacked_loss = best_loss;
    return apply_flips(g, best);
}

Graph corrupt(const Graph& g, const CorruptionSpec& spec, std::size_t repeat, const ModelSpec& surrogate,
              const AttackConfig& attack) {
    spec.validate();
    const std::uint64_t seed = mix_seed(spec.seed, repeat);
    switch (spec.kind) {
        case CorruptionKind::Feature: return corrupt_features(g, spec.rate, seed);
        case CorruptionKind::Structure: return corrupt_structure(g, spec.rate, seed);
        case CorruptionKind::Attack: return attack_prbcd(g, surrogate, spec.rate, seed, attack);
    }
    throw std::invalid_argument("unknown corruption kind");
}

ScenarioInputs apply_scenario(const Graph& clean, const Graph& corrupted, Scenario scenario) {
    if (clean.num_nodes != corrupted.num_nodes || clean.labels != corrupted.labels || clean.train != corrupted.train ||
        clean.val != corrupted.val || clean.test != corrupted.test) {
        throw std::invalid_argument("apply_scenario: clean and corrupted graphs do not share node ids");
    }
    if (scenario == Scenario::PoisoningEvasion) {
        return {corrupted, corrupted};
    }
    return {corrupted, clean};
}

double perf_drop(double clean_accuracy, double corrupted_accuracy) {
    if (!(clean_accuracy > 0.0)) {
        throw std::invalid_argument("perf_drop: clean accuracy must be positive");
    }
    return (clean_accuracy - corrupted_accuracy) / clean_accuracy;
}

void save_corrupted(const Graph& g, const CorruptionSpec& spec, std::size_t repeat, const std::filesystem::path& dir) {
    save_bundle(g, dir);
    json meta = json::parse(spec.describe());
    meta["repeat"] = repeat;
    std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';
}

}  // namespace graphslim
