#include "graphslim/coarsen.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

namespace graphslim {

namespace {

double sq_dist_rows(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
    double s = 0.0;
    for (std::size_t c = 0; c < a.cols(); ++c) {
        const double d = a(i, c) - b(j, c);
        s += d * d;
    }
    return s;
}

std::vector<std::size_t> renumber(const std::vector<std::size_t>& labels, std::size_t k) {
    std::vector<std::size_t> first(k, std::numeric_limits<std::size_t>::max());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        first[labels[i]] = std::min(first[labels[i]], i);
    }
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return first[a] < first[b]; });
    std::vector<std::size_t> rank(k);
    for (std::size_t r = 0; r < k; ++r) {
        rank[order[r]] = r;
    }
    std::vector<std::size_t> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        out[i] = rank[labels[i]];
    }
    return out;
}

Tensor group_means(const Tensor& x, const Assignment& a, std::span<const double> weights) {
    Tensor out(a.num_groups, x.cols());
    std::vector<double> mass(a.num_groups, 0.0);
    for (std::size_t r = 0; r < a.nodes.size(); ++r) {
        const double w = weights.empty() ? 1.0 : weights[r];
        auto src = x.row(a.nodes[r]);
        auto dst = out.row(a.group[r]);
        for (std::size_t c = 0; c < src.size(); ++c) {
            dst[c] += w * src[c];
        }
        mass[a.group[r]] += w;
    }
    for (std::size_t s = 0; s < a.num_groups; ++s) {
        for (double& v : out.row(s)) {
            v /= mass[s];
        }
    }
    return out;
}

CondensedGraph shell(const Graph& g, const Assignment& a, Tensor features, const char* method, std::uint64_t seed) {
    CondensedGraph cg;
    cg.features = std::move(features);
    cg.labels = a.group_label;
    cg.num_classes = g.num_classes;
    cg.meta.method = method;
    cg.meta.seed = seed;
    return cg;
}

}  // namespace

std::vector<std::size_t> kmeans(const Tensor& points, std::span<const double> weights, std::size_t k,
                                std::uint64_t seed, std::size_t iterations) {
    const std::size_t n = points.rows();
    if (k == 0 || k > n) {
        throw std::invalid_argument("kmeans: need 1 <= k <= number of points");
    }
    if (!weights.empty() && weights.size() != n) {
        throw std::invalid_argument("kmeans: weights must align with points");
    }
    auto w = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };
    std::vector<std::size_t> label(n, 0);
    if (k == n) {
        std::iota(label.begin(), label.end(), 0);
        return label;
    }

    std::mt19937_64 rng(seed);
    Tensor centers(k, points.cols());
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    std::size_t c0 = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    for (std::size_t c = 0;; ++c) {
        std::copy(points.row(c0).begin(), points.row(c0).end(), centers.row(c).begin());
        if (c + 1 == k) {
            break;
        }
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], sq_dist_rows(points, i, centers, c));
            total += w(i) * nearest[i];
        }
        if (total <= 0.0) {
            // Fewer distinct points than clusters; empty clusters are repaired below.
            c0 = (c0 + 1) % n;
            continue;
        }
        double u = std::uniform_real_distribution<double>(0.0, total)(rng);
        c0 = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
            u -= w(i) * nearest[i];
            if (u < 0.0) {
                c0 = i;
                break;
            }
        }
    }

    for (std::size_t it = 0; it <= iterations; ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                const double d = sq_dist_rows(points, i, centers, c);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            changed |= it == 0 || label[i] != best;
            label[i] = best;
        }
        // Repair empty clusters with the point farthest from its center among clusters of size > 1.
        std::vector<std::size_t> size(k, 0);
        for (std::size_t l : label) {
            ++size[l];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (size[c] > 0) {
                continue;
            }
            std::size_t far = n;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (size[label[i]] > 1) {
                    const double d = sq_dist_rows(points, i, centers, label[i]);
                    if (d > far_d) {
                        far_d = d;
                        far = i;
                    }
                }
            }
            --size[label[far]];
            label[far] = c;
            size[c] = 1;
            changed = true;
        }
        if (!changed || it == iterations) {
            break;
        }
        centers = Tensor(k, points.cols());
        std::vector<double> mass(k, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            auto dst = centers.row(label[i]);
            auto src = points.row(i);
            for (std::size_t j = 0; j < src.size(); ++j) {
                dst[j] += w(i) * src[j];
            }
            mass[label[i]] += w(i);
        }
        for (std::size_t c = 0; c < k; ++c) {
            for (double& v : centers.row(c)) {
                v /= mass[c];
            }
        }
    }
    return renumber(label, k);
}

Assignment assign_per_class(const Graph& g, std::span<const std::size_t> budget, const Tensor& points,
                            std::span<const double> weights, std::uint64_t seed) {
    if (budget.size() != g.num_classes) {
        throw std::invalid_argument("budget must have one entry per class");
    }
    std::vector<std::vector<std::size_t>> pools(g.num_classes);
    for (std::size_t i : g.train) {
        pools[static_cast<std::size_t>(g.labels[i])].push_back(i);
    }
    Assignment a;
    for (std::size_t k = 0; k < g.num_classes; ++k) {
        if (budget[k] == 0) {
            continue;
        }
        if (pools[k].empty()) {
            throw DataError("class " + std::to_string(k) + " has no training nodes to coarsen");
        }
        if (budget[k] > pools[k].size()) {
            throw std::invalid_argument("budget for class " + std::to_string(k) + " exceeds its training nodes");
        }
        Tensor pts(pools[k].size(), points.cols());
        std::vector<double> wts;
        for (std::size_t r = 0; r < pools[k].size(); ++r) {
            std::copy(points.row(pools[k][r]).begin(), points.row(pools[k][r]).end(), pts.row(r).begin());
            if (!weights.empty()) {
                wts.push_back(weights[pools[k][r]]);
            }
        }
        const auto labels = kmeans(pts, wts, budget[k], mix_seed(seed, k));
        for (std::size_t r = 0; r < pools[k].size(); ++r) {
            a.nodes.push_back(pools[k][r]);
            a.group.push_back(a.num_groups + labels[r]);
        }
        a.num_groups += budget[k];
        a.group_label.insert(a.group_label.end(), budget[k], static_cast<int>(k));
    }
    return a;
}

CondensedGraph coarsen_averaging(const Graph& g, std::span<const std::size_t> budget, std::uint64_t seed) {
    const Assignment a = assign_per_class(g, budget, g.features, {}, seed);
    CondensedGraph cg = shell(g, a, group_means(g.features, a, {}), "averaging", seed);

    std::vector<std::size_t> group_of(g.num_nodes, a.num_groups);
    std::vector<double> size(a.num_groups, 0.0);
    for (std::size_t r = 0; r < a.nodes.size(); ++r) {
        group_of[a.nodes[r]] = a.group[r];
        size[a.group[r]] += 1.0;
    }
    Tensor adj(a.num_groups, a.num_groups);
    for (const Edge& e : g.edges) {
        const std::size_t s = group_of[e.u];
        const std::size_t t = group_of[e.v];
        if (s == a.num_groups || t == a.num_groups || s == t) {
            continue;
        }
        adj(s, t) += e.weight;
        adj(t, s) += e.weight;
    }
    for (std::size_t s = 0; s < a.num_groups; ++s) {
        for (std::size_t t = 0; t < a.num_groups; ++t) {
            adj(s, t) /= size[s] * size[t];
        }
    }
    cg.adjacency = std::move(adj);
    return cg;
}

VngFit vng_fit(const Graph& g, const Assignment& a) {
    const std::vector<double> deg = weighted_degrees(g);
    std::vector<double> w;
    for (std::size_t i : a.nodes) {
        w.push_back(deg[i] + 1.0);
    }
    VngFit fit;
    fit.features = group_means(g.features, a, w);

    const Tensor prop = normalize_adjacency(g)->apply(g.features);
    const auto rows = static_cast<Eigen::Index>(a.nodes.size());
    const auto m = static_cast<Eigen::Index>(a.num_groups);
    RowMatrix y(rows, prop.cols());
    for (Eigen::Index r = 0; r < rows; ++r) {
        y.row(r) = prop.mat().row(static_cast<Eigen::Index>(a.nodes[static_cast<std::size_t>(r)]));
    }
    // (P^T P)^{-1} P^T Y: hard assignment makes this the per-group mean of Y.
    RowMatrix pty = RowMatrix::Zero(m, y.cols());
    Eigen::VectorXd count = Eigen::VectorXd::Zero(m);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto s = static_cast<Eigen::Index>(a.group[static_cast<std::size_t>(r)]);
        pty.row(s) += y.row(r);
        count(s) += 1.0;
    }
    pty = count.cwiseInverse().asDiagonal() * pty;

    const auto xs = fit.features.mat();
    RowMatrix gram = xs * xs.transpose();
    Eigen::SelfAdjointEigenSolver<RowMatrix> es(gram, Eigen::EigenvaluesOnly);
    const double top = std::max(es.eigenvalues().maxCoeff(), 0.0);
    if (m > 0 && !(es.eigenvalues().minCoeff() > 1e-10 * std::max(top, 1e-300))) {
        gram += 1e-6 * RowMatrix::Identity(m, m);
        fit.ridge_used = true;
    }
    // A' = pty X'^T gram^{-1}; gram is symmetric so solve gram A'^T = X' pty^T.
    RowMatrix at = gram.ldlt().solve(xs * pty.transpose());
    RowMatrix raw = at.transpose();
    fit.raw_adjacency = Tensor::from_matrix(raw);

    double res = 0.0;
    const RowMatrix pred = raw * xs;
    for (Eigen::Index r = 0; r < rows; ++r) {
        res += (pred.row(static_cast<Eigen::Index>(a.group[static_cast<std::size_t>(r)])) - y.row(r)).squaredNorm();
    }
    fit.residual = std::sqrt(res);
    return fit;
}

CondensedGraph coarsen_vng(const Graph& g, std::span<const std::size_t> budget, std::uint64_t seed) {
    const std::vector<double> deg = weighted_degrees(g);
    std::vector<double> w(deg.size());
    std::transform(deg.begin(), deg.end(), w.begin(), [](double d) { return d + 1.0; });
    const Tensor prop = normalize_adjacency(g)->apply(g.features);
    const Assignment a = assign_per_class(g, budget, prop, w, seed);
    VngFit fit = vng_fit(g, a);
    CondensedGraph cg = shell(g, a, fit.features, "vng", seed);
    const std::size_t m = a.num_groups;
    Tensor adj(m, m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i + 1; j < m; ++j) {
            const double v = std::clamp(0.5 * (fit.raw_adjacency(i, j) + fit.raw_adjacency(j, i)), 0.0, 1.0);
            adj(i, j) = adj(j, i) = v;
        }
    }
    cg.adjacency = std::move(adj);
    return cg;
}

}  // namespace graphslim
