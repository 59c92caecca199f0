#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "graphslim/coarsen.hpp"

using namespace graphslim;

namespace {

Graph sbm(std::vector<std::size_t> blocks, std::uint64_t seed, std::size_t dim = 4, double train = 0.6) {
    SbmParams p;
    p.block_sizes = std::move(blocks);
    p.p_intra = 0.3;
    p.p_inter = 0.05;
    p.feature_dim = dim;
    p.train_fraction = train;
    p.val_fraction = (1.0 - train) / 2.0;
    p.seed = seed;
    return sbm_generate(p);
}

Graph all_train(Graph g) {
    g.train.resize(g.num_nodes);
    std::iota(g.train.begin(), g.train.end(), 0);
    g.val.clear();
    g.test.clear();
    return g;
}

std::vector<std::vector<double>> sorted_rows(const Tensor& t) {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < t.rows(); ++i) {
        rows.emplace_back(t.row(i).begin(), t.row(i).end());
    }
    std::sort(rows.begin(), rows.end());
    return rows;
}

void check_condensed_invariants(const CondensedGraph& cg) {
    CHECK_NOTHROW(cg.validate());
    REQUIRE(cg.adjacency);
    for (double v : cg.adjacency->values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

}  // namespace

TEST_CASE("kmeans") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd(0.0, 0.1);
    SUBCASE("recovers well separated clusters") {
        Tensor pts(30, 2);
        for (std::size_t i = 0; i < 30; ++i) {
            pts(i, 0) = static_cast<double>(i % 3) * 10.0 + nd(rng);
            pts(i, 1) = nd(rng);
        }
        auto labels = kmeans(pts, {}, 3, 1);
        for (std::size_t i = 3; i < 30; ++i) {
            CHECK(labels[i] == labels[i % 3]);
        }
        CHECK(labels[0] == 0);
        CHECK(labels == kmeans(pts, {}, 3, 1));
    }
    SUBCASE("k equals n gives singletons") {
        Tensor pts(4, 1, 1.0);
        CHECK(kmeans(pts, {}, 4, 1) == std::vector<std::size_t>{0, 1, 2, 3});
    }
    SUBCASE("identical points still fill every cluster") {
        Tensor pts(6, 2, 5.0);
        auto labels = kmeans(pts, {}, 3, 9);
        CHECK(std::set<std::size_t>(labels.begin(), labels.end()).size() == 3);
    }
    SUBCASE("invalid k") {
        Tensor pts(3, 1);
        CHECK_THROWS(kmeans(pts, {}, 0, 1));
        CHECK_THROWS(kmeans(pts, {}, 4, 1));
    }
}

TEST_CASE("coarsen_averaging") {
    SUBCASE("one supernode per class is the class mean") {
        Graph g = sbm({12, 9}, 2);
        CondensedGraph cg = coarsen_averaging(g, std::vector<std::size_t>{1, 1}, 0);
        for (int k = 0; k < 2; ++k) {
            std::vector<double> mu(g.num_features(), 0.0);
            double count = 0.0;
            for (std::size_t i : g.train) {
                if (g.labels[i] == k) {
                    for (std::size_t j = 0; j < mu.size(); ++j) {
                        mu[j] += g.features(i, j);
                    }
                    count += 1.0;
                }
            }
            for (std::size_t j = 0; j < mu.size(); ++j) {
                CHECK(cg.features(static_cast<std::size_t>(k), j) == doctest::Approx(mu[j] / count).epsilon(1e-14));
            }
            CHECK(cg.labels[static_cast<std::size_t>(k)] == k);
        }
        check_condensed_invariants(cg);
    }
    SUBCASE("budget equal to the training size reproduces training features") {
        Graph g = sbm({10, 8, 6}, 4);
        const auto hist = g.class_counts(g.train);
        CondensedGraph cg = coarsen_averaging(g, hist, 1);
        Tensor train_x(g.train.size(), g.num_features());
        for (std::size_t r = 0; r < g.train.size(); ++r) {
            std::copy(g.features.row(g.train[r]).begin(), g.features.row(g.train[r]).end(), train_x.row(r).begin());
        }
        CHECK(sorted_rows(cg.features) == sorted_rows(train_x));
        check_condensed_invariants(cg);
    }
    SUBCASE("two-block SBM: inter-supernode weight is the inter-block edge density") {
        Graph g = all_train(sbm({15, 10}, 6));
        CondensedGraph cg = coarsen_averaging(g, std::vector<std::size_t>{1, 1}, 0);
        double inter = 0.0;
        for (const Edge& e : g.edges) {
            inter += g.labels[e.u] != g.labels[e.v] ? e.weight : 0.0;
        }
        CHECK(inter > 0.0);
        CHECK((*cg.adjacency)(0, 1) == doctest::Approx(inter / (15.0 * 10.0)));
        CHECK((*cg.adjacency)(0, 0) == 0.0);
    }
    SUBCASE("supernode features are means of their groups") {
        Graph g = sbm({20, 20}, 8);
        const std::vector<std::size_t> b = {3, 4};
        CondensedGraph cg = coarsen_averaging(g, b, 5);
        Assignment a = assign_per_class(g, b, g.features, {}, 5);
        REQUIRE(a.num_groups == 7);
        for (std::size_t s = 0; s < a.num_groups; ++s) {
            for (std::size_t j = 0; j < g.num_features(); ++j) {
                double lo = INFINITY;
                double hi = -INFINITY;
                double sum = 0.0;
                double cnt = 0.0;
                for (std::size_t r = 0; r < a.nodes.size(); ++r) {
                    if (a.group[r] == s) {
                        lo = std::min(lo, g.features(a.nodes[r], j));
                        hi = std::max(hi, g.features(a.nodes[r], j));
                        sum += g.features(a.nodes[r], j);
                        cnt += 1.0;
                    }
                }
                CHECK(cg.features(s, j) >= lo - 1e-12);
                CHECK(cg.features(s, j) <= hi + 1e-12);
                CHECK(cg.features(s, j) == doctest::Approx(sum / cnt));
            }
        }
        CHECK(cg.class_counts() == b);
    }
}

TEST_CASE("coarsen_vng") {
    SUBCASE("identity mapping reproduces the propagation") {
        // 6 nodes, 8 features: X X^T is invertible, so A' = A_hat exactly.
        Graph g = all_train(sbm({3, 3}, 1, 8));
        const auto hist = g.class_counts(g.train);
        Assignment a = assign_per_class(g, hist, g.features, {}, 0);
        VngFit fit = vng_fit(g, a);
        CHECK(!fit.ridge_used);
        CHECK(fit.residual < 1e-10);
        RowMatrix ahat = normalize_adjacency(g)->matrix;
        for (std::size_t s = 0; s < a.num_groups; ++s) {
            for (std::size_t t = 0; t < a.num_groups; ++t) {
                // Supernode s holds node a.nodes[r] with group s.
                std::size_t u = 0;
                std::size_t v = 0;
                for (std::size_t r = 0; r < a.nodes.size(); ++r) {
                    u = a.group[r] == s ? a.nodes[r] : u;
                    v = a.group[r] == t ? a.nodes[r] : v;
                }
                CHECK(fit.raw_adjacency(s, t) ==
                      doctest::Approx(ahat(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v))).epsilon(1e-8));
            }
        }
    }
    SUBCASE("duplicate nodes merge into their shared feature") {
        Graph g = all_train(sbm({4}, 2, 3));
        for (std::size_t j = 0; j < 3; ++j) {
            g.features(1, j) = g.features(0, j);
        }
        Assignment a;
        a.nodes = {0, 1, 2, 3};
        a.group = {0, 0, 1, 2};
        a.num_groups = 3;
        a.group_label = {0, 0, 0};
        VngFit fit = vng_fit(g, a);
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(fit.features(0, j) == doctest::Approx(g.features(0, j)).epsilon(1e-14));
        }
    }
    SUBCASE("three supernodes match a pseudo-inverse oracle") {
        Graph g = all_train(sbm({4, 4}, 3, 5));
        Assignment a;
        a.nodes = {0, 1, 2, 3, 4, 5, 6, 7};
        a.group = {0, 0, 1, 1, 1, 2, 2, 2};
        a.num_groups = 3;
        a.group_label = {0, 0, 1};
        VngFit fit = vng_fit(g, a);
        CHECK(!fit.ridge_used);
        RowMatrix p = RowMatrix::Zero(8, 3);
        for (std::size_t r = 0; r < 8; ++r) {
            p(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(a.group[r])) = 1.0;
        }
        RowMatrix y = RowMatrix(normalize_adjacency(g)->matrix) * g.features.mat();
        Eigen::MatrixXd pinv_p = Eigen::MatrixXd(p).completeOrthogonalDecomposition().pseudoInverse();
        Eigen::MatrixXd pinv_x = Eigen::MatrixXd(fit.features.mat()).completeOrthogonalDecomposition().pseudoInverse();
        Eigen::MatrixXd oracle = pinv_p * y * pinv_x;
        CHECK((fit.raw_adjacency.mat() - oracle).cwiseAbs().maxCoeff() < 1e-8);
        CHECK(fit.residual == doctest::Approx((p * oracle * fit.features.mat() - y).norm()).epsilon(1e-8));
    }
    SUBCASE("residual does not increase on nested refinements") {
        Graph g = all_train(sbm({6, 6}, 5, 12));
        std::vector<std::size_t> by_class[2];
        for (std::size_t i = 0; i < 12; ++i) {
            by_class[g.labels[i]].push_back(i);
        }
        // Levels: 1 group per class, then 2, 3 and 6 (each refines the previous).
        double prev = INFINITY;
        for (std::size_t per : {1, 2, 3, 6}) {
            Assignment a;
            for (std::size_t k = 0; k < 2; ++k) {
                for (std::size_t r = 0; r < 6; ++r) {
                    a.nodes.push_back(by_class[k][r]);
                    a.group.push_back(k * per + r * per / 6);
                }
                a.group_label.insert(a.group_label.end(), per, static_cast<int>(k));
            }
            a.num_groups = 2 * per;
            const double res = vng_fit(g, a).residual;
            CHECK(res <= prev + 1e-9);
            prev = res;
        }
        CHECK(prev < 1e-8);
    }
    SUBCASE("output is a valid condensed graph with labels per budget") {
        Graph g = sbm({25, 20, 15}, 7, 6);
        const std::vector<std::size_t> b = {3, 2, 2};
        CondensedGraph cg = coarsen_vng(g, b, 1);
        check_condensed_invariants(cg);
        CHECK(cg.class_counts() == b);
        CHECK(cg == coarsen_vng(g, b, 1));
    }
}
