#include "graphslim/coreset.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace graphslim {

namespace {

// Training nodes of each class, ascending.
std::vector<std::vector<std::size_t>> train_by_class(const Graph& g) {
    std::vector<std::vector<std::size_t>> out(g.num_classes);
    for (std::size_t i : g.train) {
        out[static_cast<std::size_t>(g.labels[i])].push_back(i);
    }
    return out;
}

void check_budget(const std::vector<std::vector<std::size_t>>& pools, std::span<const std::size_t> budget) {
    if (budget.size() != pools.size()) {
        throw std::invalid_argument("budget has " + std::to_string(budget.size()) + " classes, graph has " +
                                    std::to_string(pools.size()));
    }
    for (std::size_t k = 0; k < pools.size(); ++k) {
        if (budget[k] > pools[k].size()) {
            throw std::invalid_argument("budget for class " + std::to_string(k) + " (" + std::to_string(budget[k]) +
                                        ") exceeds its " + std::to_string(pools[k].size()) + " training nodes");
        }
    }
}

void check_embedding(const Graph& g, const Tensor& embedding) {
    if (embedding.rows() != g.num_nodes) {
        throw std::invalid_argument("embedding rows must match graph nodes");
    }
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double d = a[j] - b[j];
        s += d * d;
    }
    return s;
}

std::vector<double> mean_of(const Tensor& e, const std::vector<std::size_t>& ids) {
    std::vector<double> mu(e.cols(), 0.0);
    for (std::size_t i : ids) {
        auto r = e.row(i);
        for (std::size_t j = 0; j < mu.size(); ++j) {
            mu[j] += r[j];
        }
    }
    for (double& v : mu) {
        v /= static_cast<double>(ids.size());
    }
    return mu;
}

template <class PerClass>
Selection run_per_class(const Graph& g, std::span<const std::size_t> budget, std::string strategy,
                        std::uint64_t seed, PerClass pick) {
    auto pools = train_by_class(g);
    check_budget(pools, budget);
    Selection s;
    s.strategy = std::move(strategy);
    s.seed = seed;
    for (std::size_t k = 0; k < pools.size(); ++k) {
        auto chosen = budget[k] == 0 ? std::vector<std::size_t>{} : pick(k, pools[k], budget[k]);
        s.ids.insert(s.ids.end(), chosen.begin(), chosen.end());
        s.per_class.push_back(chosen.size());
    }
    return s;
}

}  // namespace

Selection select_random(const Graph& g, std::span<const std::size_t> budget, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return run_per_class(g, budget, "random", seed, [&](std::size_t, std::vector<std::size_t> pool, std::size_t b) {
        // Partial Fisher-Yates.
        for (std::size_t i = 0; i < b; ++i) {
            std::uniform_int_distribution<std::size_t> u(i, pool.size() - 1);
            std::swap(pool[i], pool[u(rng)]);
        }
        pool.resize(b);
        return pool;
    });
}

Selection select_kcenter(const Graph& g, std::span<const std::size_t> budget, const Tensor& embedding,
                         std::uint64_t seed) {
    check_embedding(g, embedding);
    return run_per_class(g, budget, "kcenter", seed, [&](std::size_t, const std::vector<std::size_t>& pool, std::size_t b) {
        const auto mu = mean_of(embedding, pool);
        std::size_t first = 0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t p = 0; p < pool.size(); ++p) {
            const double d = sq_dist(embedding.row(pool[p]), mu);
            if (d < best) {
                best = d;
                first = p;
            }
        }
        std::vector<std::size_t> chosen{pool[first]};
        std::vector<bool> used(pool.size(), false);
        used[first] = true;
        std::vector<double> nearest(pool.size());
        for (std::size_t p = 0; p < pool.size(); ++p) {
            nearest[p] = sq_dist(embedding.row(pool[p]), embedding.row(pool[first]));
        }
        while (chosen.size() < b) {
            std::size_t far = pool.size();
            for (std::size_t p = 0; p < pool.size(); ++p) {
                if (!used[p] && (far == pool.size() || nearest[p] > nearest[far])) {
                    far = p;
                }
            }
            used[far] = true;
            chosen.push_back(pool[far]);
            for (std::size_t p = 0; p < pool.size(); ++p) {
                nearest[p] = std::min(nearest[p], sq_dist(embedding.row(pool[p]), embedding.row(pool[far])));
            }
        }
        return chosen;
    });
}

Selection select_herding(const Graph& g, std::span<const std::size_t> budget, const Tensor& embedding,
                         std::uint64_t seed) {
    check_embedding(g, embedding);
    return run_per_class(g, budget, "herding", seed, [&](std::size_t, const std::vector<std::size_t>& pool, std::size_t b) {
        const auto mu = mean_of(embedding, pool);
        std::vector<double> running(mu.size(), 0.0);
        std::vector<bool> used(pool.size(), false);
        std::vector<std::size_t> chosen;
        std::vector<double> target(mu.size());
        for (std::size_t t = 0; t < b; ++t) {
            for (std::size_t j = 0; j < mu.size(); ++j) {
                target[j] = mu[j] * static_cast<double>(t + 1) - running[j];
            }
            std::size_t best = pool.size();
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t p = 0; p < pool.size(); ++p) {
                if (used[p]) {
                    continue;
                }
                const double d = sq_dist(embedding.row(pool[p]), target);
                if (d < best_d) {
                    best_d = d;
                    best = p;
                }
            }
            used[best] = true;
            chosen.push_back(pool[best]);
            auto r = embedding.row(pool[best]);
            for (std::size_t j = 0; j < mu.size(); ++j) {
                running[j] += r[j];
            }
        }
        return chosen;
    });
}

std::vector<double> pagerank(const Graph& g, double damping, std::size_t iterations) {
    const std::size_t n = g.num_nodes;
    if (n == 0) {
        return {};
    }
    const std::vector<double> deg = weighted_degrees(g);
    const SparseMatrix a = adjacency_matrix(g);
    Eigen::VectorXd inv_deg(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        inv_deg(static_cast<Eigen::Index>(i)) = deg[i] > 0.0 ? 1.0 / deg[i] : 0.0;
    }
    const double base = 1.0 / static_cast<double>(n);
    Eigen::VectorXd r = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), base);
    for (std::size_t it = 0; it < iterations; ++it) {
        double dangling = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (deg[i] <= 0.0) {
                dangling += r(static_cast<Eigen::Index>(i));
            }
        }
        // A is symmetric, so A^T (D^{-1} r) == A (D^{-1} r).
        Eigen::VectorXd spread = a * r.cwiseProduct(inv_deg);
        r = (damping * (spread.array() + dangling * base) + (1.0 - damping) * base).matrix();
    }
    return {r.data(), r.data() + r.size()};
}

Selection select_centrality(const Graph& g, std::span<const std::size_t> budget, Centrality kind) {
    const std::vector<double> score = kind == Centrality::Degree ? weighted_degrees(g) : pagerank(g);
    return run_per_class(g, budget, kind == Centrality::Degree ? "degree" : "pagerank", 0,
                         [&](std::size_t, std::vector<std::size_t> pool, std::size_t b) {
                             std::stable_sort(pool.begin(), pool.end(),
                                              [&](std::size_t x, std::size_t y) { return score[x] > score[y]; });
                             pool.resize(b);
                             return pool;
                         });
}

Tensor propagated_features(const Graph& g, std::size_t hops) {
    auto op = normalize_adjacency(g);
    Tensor h = g.features;
    for (std::size_t k = 0; k < hops; ++k) {
        h = op->apply(h);
    }
    return h;
}

Graph induce_subgraph(const Graph& g, const Selection& s) {
    Graph sub = induced_subgraph(g, s.ids);
    sub.train.resize(sub.num_nodes);
    std::iota(sub.train.begin(), sub.train.end(), 0);
    sub.val.clear();
    sub.test.clear();
    return sub;
}

std::string selection_to_json(const Selection& s) {
    nlohmann::json j;
    j["strategy"] = s.strategy;
    j["seed"] = s.seed;
    j["ids"] = s.ids;
    j["per_class"] = s.per_class;
    return j.dump();
}

Selection selection_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    Selection s;
    s.strategy = j.at("strategy").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.ids = j.at("ids").get<std::vector<std::size_t>>();
    s.per_class = j.at("per_class").get<std::vector<std::size_t>>();
    return s;
}

}  // namespace graphslim
