#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <random>

#include "doctest.h"
#include "graphslim/coarsen.hpp"
#include "graphslim/condense.hpp"
#include "graphslim/coreset.hpp"

using namespace graphslim;

namespace {

Graph sbm(std::vector<std::size_t> blocks, std::uint64_t seed, std::size_t dim = 6, double train = 0.6,
          double separation = 1.0) {
    SbmParams p;
    p.block_sizes = std::move(blocks);
    p.p_intra = 0.3;
    p.p_inter = 0.03;
    p.feature_dim = dim;
    p.mean_separation = separation;
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

Tensor random_tensor(std::size_t r, std::size_t c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    Tensor t(r, c);
    for (double& v : t.values()) {
        v = nd(rng);
    }
    return t;
}

CondenseConfig small_config(CondenseMethod m) {
    CondenseConfig c;
    c.method = m;
    c.backbone.hidden = 16;
    c.outer_iterations = 6;
    c.match_steps = 3;
    c.inner_steps = 3;
    c.structure_hidden = 8;
    return c;
}

// Test accuracy on `g` of a GCN trained on the condensed graph.
double downstream_accuracy(const CondensedGraph& cg, const Graph& g, std::uint64_t seed) {
    ModelSpec spec;
    spec.hidden = 32;
    TrainData data;
    data.graph = cg.adjacency ? GraphOperator::dense_constant(*cg.adjacency) : GraphOperator::identity(cg.num_nodes());
    data.features = NodeInput::constant(cg.features);
    data.rows.resize(cg.num_nodes());
    std::iota(data.rows.begin(), data.rows.end(), 0);
    data.labels = cg.labels;
    data.num_classes = cg.num_classes;
    TrainConfig tc;
    tc.epochs = 100;
    TrainResult r = train(spec, data, tc, seed);
    return evaluate(spec, r.params, g, g.test);
}

// Dense GNTK recursion with explicit loops over one node set.
RowMatrix gntk_oracle(const RowMatrix& x, const RowMatrix& adj, std::size_t depth) {
    RowMatrix s = x * x.transpose();
    RowMatrix theta = s;
    const Eigen::Index n = x.rows();
    for (std::size_t l = 0; l < depth; ++l) {
        s = adj * s * adj.transpose();
        theta = adj * theta * adj.transpose();
        RowMatrix next_s(n, n);
        RowMatrix next_t(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < n; ++j) {
                const double scale = std::sqrt(s(i, i) * s(j, j));
                const double rho = std::clamp(s(i, j) / scale, -1.0, 1.0);
                const double k0 = (std::numbers::pi - std::acos(rho)) / std::numbers::pi;
                const double k1 = (std::sqrt(1.0 - rho * rho) + (std::numbers::pi - std::acos(rho)) * rho) / std::numbers::pi;
                next_s(i, j) = scale * k1;
                next_t(i, j) = theta(i, j) * k0 + scale * k1;
            }
        }
        s = next_s;
        theta = next_t;
    }
    return theta;
}

RowMatrix dense(const SparseOperatorPtr& op) { return RowMatrix(op->matrix); }

}  // namespace

TEST_CASE("init_synthetic") {
    Graph g = sbm({20, 16, 12}, 1);
    const std::vector<std::size_t> budget = {3, 2, 2};
    SUBCASE("random-sample copies the selected training rows") {
        CondensedGraph cg = init_synthetic(g, budget, InitStrategy::RandomSample, 5);
        Selection s = select_random(g, budget, 5);
        REQUIRE(cg.num_nodes() == 7);
        for (std::size_t r = 0; r < 7; ++r) {
            CHECK(std::find(g.train.begin(), g.train.end(), s.ids[r]) != g.train.end());
            CHECK(std::equal(cg.features.row(r).begin(), cg.features.row(r).end(), g.features.row(s.ids[r]).begin()));
            CHECK(cg.labels[r] == g.labels[s.ids[r]]);
        }
        CHECK(cg.class_counts() == budget);
        CHECK(!cg.has_structure());
    }
    SUBCASE("kcenter matches the coreset selector") {
        CondensedGraph cg = init_synthetic(g, budget, InitStrategy::KCenter, 0);
        Selection s = select_kcenter(g, budget, propagated_features(g), 0);
        for (std::size_t r = 0; r < s.ids.size(); ++r) {
            CHECK(std::equal(cg.features.row(r).begin(), cg.features.row(r).end(), g.features.row(s.ids[r]).begin()));
        }
    }
    SUBCASE("herding has the budgeted labels") {
        CHECK(init_synthetic(g, budget, InitStrategy::Herding, 0).class_counts() == budget);
    }
    SUBCASE("averaging with one node per class gives class means") {
        CondensedGraph cg = init_synthetic(g, std::vector<std::size_t>{1, 1, 1}, InitStrategy::Averaging, 2);
        CHECK(!cg.has_structure());
        for (int c = 0; c < 3; ++c) {
            std::vector<double> mu(g.num_features(), 0.0);
            double n = 0;
            for (std::size_t i : g.train) {
                if (g.labels[i] == c) {
                    for (std::size_t j = 0; j < mu.size(); ++j) mu[j] += g.features(i, j);
                    n += 1;
                }
            }
            const auto r = static_cast<std::size_t>(std::find(cg.labels.begin(), cg.labels.end(), c) - cg.labels.begin());
            for (std::size_t j = 0; j < mu.size(); ++j) {
                CHECK(cg.features(r, j) == doctest::Approx(mu[j] / n).epsilon(1e-13));
            }
        }
    }
    SUBCASE("infeasible budget") {
        CHECK_THROWS(init_synthetic(g, std::vector<std::size_t>{100, 1, 1}, InitStrategy::RandomSample, 0));
    }
}

TEST_CASE("gm_distance") {
    const Tensor a = random_tensor(5, 4, 1);
    const Tensor b = random_tensor(5, 4, 2);
    const Tensor a2 = random_tensor(3, 2, 3);
    const Tensor b2 = random_tensor(3, 2, 4);
    SUBCASE("identical gradients") {
        std::vector<Tensor> g = {a, a2};
        CHECK(std::abs(gm_distance(g, g)) < 1e-12);
    }
    SUBCASE("orthogonal column pairs") {
        Tensor x = Tensor::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0, 0, 0}});
        Tensor y = Tensor::from_rows({{0, 0, 0}, {1, 0, 0}, {0, 2, 0}, {0, 0, 3}});
        CHECK(gm_distance(std::vector<Tensor>{x}, std::vector<Tensor>{y}) == doctest::Approx(3.0));
    }
    SUBCASE("naive column loop") {
        double oracle = 0.0;
        for (auto [p, q] : {std::pair{&a, &b}, std::pair{&a2, &b2}}) {
            for (std::size_t c = 0; c < p->cols(); ++c) {
                double dot = 0, np = 0, nq = 0;
                for (std::size_t r = 0; r < p->rows(); ++r) {
                    dot += (*p)(r, c) * (*q)(r, c);
                    np += (*p)(r, c) * (*p)(r, c);
                    nq += (*q)(r, c) * (*q)(r, c);
                }
                oracle += 1.0 - dot / std::sqrt(np * nq);
            }
        }
        CHECK(gm_distance(std::vector<Tensor>{a, a2}, std::vector<Tensor>{b, b2}) == doctest::Approx(oracle).epsilon(1e-12));
    }
    SUBCASE("zero columns") {
        Tensor x = Tensor::from_rows({{0, 1, 0}, {0, 2, 0}});
        Tensor y = Tensor::from_rows({{0, 0, 1}, {0, 0, 1}});
        // Column 0 both zero, column 1 and 2 one side zero.
        CHECK(gm_distance(std::vector<Tensor>{x}, std::vector<Tensor>{y}) == 2.0);
    }
    SUBCASE("joint positive column rescaling") {
        Tensor sa = a;
        Tensor sb = b;
        const double scale[] = {0.5, 3.0, 7.0, 1e-3};
        for (std::size_t r = 0; r < a.rows(); ++r) {
            for (std::size_t c = 0; c < a.cols(); ++c) {
                sa(r, c) *= scale[c];
                sb(r, c) *= scale[(c + 1) % 4];
            }
        }
        CHECK(gm_distance(std::vector<Tensor>{sa}, std::vector<Tensor>{sb}) ==
              doctest::Approx(gm_distance(std::vector<Tensor>{a}, std::vector<Tensor>{b})).epsilon(1e-12));
    }
    SUBCASE("shape mismatch") {
        CHECK_THROWS_AS(gm_distance(std::vector<Tensor>{a}, std::vector<Tensor>{a2}), std::invalid_argument);
        CHECK_THROWS_AS(gm_distance(std::vector<Tensor>{a}, std::vector<Tensor>{a, a}), std::invalid_argument);
    }
    SUBCASE("differentiable") {
        auto fn = [&](Tape& tape, Var v) {
            std::vector<Var> target = {tape.constant(a)};
            std::vector<Var> x = {v};
            return gm_distance(target, x);
        };
        CHECK(fd_check(fn, b) < 1e-6);
    }
}

TEST_CASE("gen_structure") {
    const Tensor x = random_tensor(6, 3, 7);
    StructureGenerator phi = init_structure_generator(3, 8, 1);
    SUBCASE("symmetric, zero diagonal, open unit interval") {
        for (std::uint64_t s = 0; s < 5; ++s) {
            StructureGenerator p = init_structure_generator(3, 8, s);
            Tensor a = gen_structure(p, random_tensor(6, 3, 100 + s));
            for (std::size_t i = 0; i < 6; ++i) {
                CHECK(a(i, i) == 0.0);
                for (std::size_t j = 0; j < 6; ++j) {
                    CHECK(a(i, j) == a(j, i));
                    if (i != j) {
                        CHECK(a(i, j) > 0.0);
                        CHECK(a(i, j) < 1.0);
                    }
                }
            }
        }
    }
    SUBCASE("identical rows get identical weights") {
        Tensor y = x;
        for (std::size_t r : {2, 4}) {
            std::copy(y.row(0).begin(), y.row(0).end(), y.row(r).begin());
        }
        Tensor a = gen_structure(phi, y);
        CHECK(a(0, 2) == doctest::Approx(a(0, 4)).epsilon(1e-14));
        CHECK(a(0, 2) == doctest::Approx(a(2, 4)).epsilon(1e-14));
        CHECK(a(1, 0) == doctest::Approx(a(1, 2)).epsilon(1e-14));
    }
    SUBCASE("zero generator gives one half") {
        StructureGenerator zero = phi;
        for (Tensor& t : zero.params.values) {
            std::fill(t.values().begin(), t.values().end(), 0.0);
        }
        Tensor a = gen_structure(zero, x);
        for (std::size_t i = 0; i < 6; ++i) {
            for (std::size_t j = 0; j < 6; ++j) {
                CHECK(a(i, j) == (i == j ? 0.0 : 0.5));
            }
        }
    }
    SUBCASE("pair order inside the generator does not matter after symmetrization") {
        // Swapping the two halves of W1 swaps [x_i; x_j] and [x_j; x_i].
        StructureGenerator swapped = phi;
        Tensor& w = swapped.params.values[0];
        for (std::size_t r = 0; r < 3; ++r) {
            for (std::size_t c = 0; c < w.cols(); ++c) {
                std::swap(w(r, c), w(r + 3, c));
            }
        }
        CHECK(max_abs_diff(gen_structure(swapped, x), gen_structure(phi, x)) < 1e-14);
    }
    SUBCASE("gradients wrt features and generator pass fd_check") {
        auto wrt_x = [&](Tape& tape, Var v) {
            auto p = bind_params(tape, phi.params, false);
            return sum(mul(gen_structure(p, v), tape.constant(random_tensor(6, 6, 9))));
        };
        CHECK(fd_check(wrt_x, x) < 1e-6);
        auto wrt_w1 = [&](Tape& tape, Var v) {
            auto p = bind_params(tape, phi.params, false);
            p[0] = v;
            return sum(mul(gen_structure(p, tape.constant(x)), tape.constant(random_tensor(6, 6, 9))));
        };
        CHECK(fd_check(wrt_w1, phi.params.values[0]) < 1e-6);
    }
    SUBCASE("feature dimension mismatch") {
        CHECK_THROWS(gen_structure(phi, random_tensor(4, 5, 1)));
    }
}

TEST_CASE("condense config") {
    CondenseConfig c = small_config(CondenseMethod::DosCond);
    c.seed = 11;
    CondenseConfig back = condense_config_from_json(c.describe());
    CHECK(back.describe() == c.describe());
    CHECK(back.hash() == c.hash());
    CondenseConfig other = c;
    other.seed = 12;
    CHECK(other.hash() != c.hash());
    CHECK(c.normalized().match_steps == 1);
    CHECK(c.normalized().inner_steps == 0);
    CHECK(small_config(CondenseMethod::GCondX).normalized().inner_steps == 0);
    CHECK(small_config(CondenseMethod::GCond).normalized().inner_steps == 3);
    CHECK_THROWS_AS(condense_config_from_json(R"({"method":"gcond","bogus":1})"), std::invalid_argument);
    CHECK_THROWS_AS(condense_config_from_json(R"({"method":"msgc"})"), std::invalid_argument);
    CHECK_THROWS_AS(condense_config_from_json(R"({"method":"gcond","soft_labels":true})"), std::invalid_argument);
    CHECK_THROWS_AS(condense_config_from_json(R"({"method":"gcsntk","epsilon":0})"), std::invalid_argument);
    CHECK_THROWS_AS(condense_config_from_json("[1,2]"), std::invalid_argument);
    CHECK(condense_config_from_json(R"({"method":"geom","window":"expanding","soft_labels":true})").window ==
          WindowPolicy::Expanding);
}

TEST_CASE("gradient matching") {
    SUBCASE("the training signal matched against itself has zero loss") {
        Graph g = all_train(sbm({12, 10, 8}, 3));
        CondenseConfig c = small_config(CondenseMethod::GCond);
        for (std::uint64_t s = 0; s < 3; ++s) {
            CHECK(gm_objective(g, condensed_from_graph(g), c, s) < 1e-6);
        }
        // A different structure breaks the match.
        CHECK(gm_objective(g, condensed_from_graph(g, false), c, 0) > 1e-3);
    }
    SUBCASE("subsampled classes stay exact for the sampled nodes") {
        Graph g = all_train(sbm({12, 10}, 4));
        CondenseConfig c = small_config(CondenseMethod::GCond);
        c.class_sample_cap = 4;
        // Matching against the full class is no longer exact, but the objective stays finite and small.
        const double v = gm_objective(g, condensed_from_graph(g), c, 0);
        CHECK(std::isfinite(v));
    }
    SUBCASE("outputs per method") {
        Graph g = sbm({15, 12}, 5);
        const std::vector<std::size_t> budget = {2, 2};
        for (CondenseMethod m : {CondenseMethod::GCond, CondenseMethod::GCondX, CondenseMethod::DosCond}) {
            CAPTURE(to_string(m));
            CondenseConfig c = small_config(m);
            c.checkpoint_every = 2;
            CondenseResult r = condense_gm(g, budget, c);
            CHECK(r.graph.has_structure() == (m != CondenseMethod::GCondX));
            CHECK_NOTHROW(r.graph.validate());
            CHECK(r.graph.class_counts() == budget);
            CHECK(r.graph.meta.method == to_string(m));
            CHECK(r.graph.meta.config_hash == c.hash());
            CHECK(r.losses.size() == 6);
            REQUIRE(r.checkpoints.size() == 3);
            CHECK(r.checkpoints.back().graph == r.graph);
            CHECK(r.graph == condense_gm(g, budget, c).graph);
        }
        CHECK_THROWS(condense_gm(g, budget, small_config(CondenseMethod::SFGC)));
    }
    SUBCASE("gcondx beats a random coreset on a two-block SBM at one node per class") {
        double cond = 0.0;
        double rand = 0.0;
        for (std::uint64_t s = 0; s < 4; ++s) {
            Graph g = sbm({60, 60}, 20 + s, 10, 0.3, 0.6);
            const std::vector<std::size_t> budget = {1, 1};
            CondenseConfig c = small_config(CondenseMethod::GCondX);
            c.outer_iterations = 40;
            c.match_steps = 5;
            c.lr_features = 0.05;
            c.seed = s;
            cond += downstream_accuracy(condense_gm(g, budget, c).graph, g, s);
            rand += downstream_accuracy(init_synthetic(g, budget, InitStrategy::RandomSample, mix_seed(s, 1)), g, s);
        }
        MESSAGE("gcondx " << cond / 4 << " random " << rand / 4);
        CHECK(cond >= rand);
    }
}

TEST_CASE("expert buffer") {
    Graph g = sbm({15, 15}, 6);
    ModelSpec spec;
    spec.hidden = 8;
    SUBCASE("start and end snapshots only") {
        ExpertBuffer b = build_expert_buffer(g, spec, 1, 20, 20, 3);
        REQUIRE(b.trajectories.size() == 1);
        REQUIRE(b.trajectories[0].snapshots.size() == 2);
        CHECK(b.trajectories[0].snapshots[0].epoch == 0);
        CHECK(b.trajectories[0].snapshots[1].epoch == 20);
    }
    SUBCASE("deterministic, persistent and trained") {
        ExpertBuffer b = build_expert_buffer(g, spec, 2, 30, 5, 9);
        CHECK(b == build_expert_buffer(g, spec, 2, 30, 5, 9));
        CHECK(!(b == build_expert_buffer(g, spec, 2, 30, 5, 10)));
        CHECK(b.trajectories[0].snapshots.size() == 7);
        CHECK(b.seeds[0] != b.seeds[1]);
        for (const Trajectory& t : b.trajectories) {
            CHECK(t.snapshots.back().val_acc >= t.snapshots.front().val_acc);
        }
        const auto dir = std::filesystem::temp_directory_path() / "graphslim_expert_test";
        std::filesystem::remove_all(dir);
        save_expert_buffer(b, dir);
        CHECK(load_expert_buffer(dir) == b);
        std::filesystem::remove(dir / "expert_1.txt");
        CHECK_THROWS_AS(load_expert_buffer(dir), DataError);
        std::filesystem::remove_all(dir);
    }
    SUBCASE("invalid") {
        CHECK_THROWS(build_expert_buffer(g, spec, 0, 10, 1, 0));
        CHECK_THROWS_AS(load_expert_buffer("/nonexistent/buffer"), DataError);
    }
}

TEST_CASE("trajectory matching") {
    Graph g = sbm({20, 20}, 8);
    ModelSpec spec;
    spec.hidden = 16;
    ExpertBuffer b = build_expert_buffer(g, spec, 2, 30, 1, 4);
    const std::vector<std::size_t> budget = {2, 2};
    CondenseConfig c = small_config(CondenseMethod::SFGC);
    c.student_steps = 5;
    c.expert_span = 2;
    SUBCASE("zero steps against the start point") {
        CondenseConfig z = c;
        z.student_steps = 0;
        z.expert_span = 0;
        CondensedGraph s = init_synthetic(g, budget, InitStrategy::RandomSample, 0);
        s.num_classes = 2;
        for (std::size_t t : {0, 5, 30}) {
            CHECK(tm_objective(s, b, z, 0, t) == 0.0);
        }
    }
    SUBCASE("window beyond the trajectory") {
        CondenseConfig w = c;
        w.expert_span = 31;
        CHECK_THROWS_AS(condense_tm(g, budget, b, w), std::invalid_argument);
        CondensedGraph s = init_synthetic(g, budget, InitStrategy::RandomSample, 0);
        CHECK_THROWS_AS(tm_objective(s, b, c, 0, 29), std::invalid_argument);
    }
    SUBCASE("structure-free output, soft labels on request") {
        for (WindowPolicy w : {WindowPolicy::Fixed, WindowPolicy::Expanding}) {
            CondenseConfig cc = c;
            cc.method = CondenseMethod::GEOM;
            cc.window = w;
            cc.soft_labels = true;
            CondenseResult r = condense_tm(g, budget, b, cc);
            CHECK(!r.graph.has_structure());
            REQUIRE(r.graph.soft_labels);
            CHECK(r.graph.soft_labels->rows() == 4);
            CHECK_NOTHROW(r.graph.validate());
            CHECK(r.graph == condense_tm(g, budget, b, cc).graph);
        }
        CondenseResult plain = condense_tm(g, budget, b, c);
        CHECK(!plain.graph.soft_labels);
    }
    SUBCASE("matching loss falls over 300 iterations") {
        std::vector<double> first;
        std::vector<double> last;
        for (std::uint64_t s = 0; s < 3; ++s) {
            CondenseConfig cc = c;
            cc.outer_iterations = 300;
            cc.max_start = 20;
            cc.seed = s;
            CondenseResult r = condense_tm(g, budget, b, cc);
            auto mean = [](auto from, auto to) { return std::accumulate(from, to, 0.0) / static_cast<double>(to - from); };
            first.push_back(mean(r.losses.begin(), r.losses.begin() + 20));
            last.push_back(mean(r.losses.end() - 20, r.losses.end()));
        }
        std::sort(first.begin(), first.end());
        std::sort(last.begin(), last.end());
        MESSAGE("median start " << first[1] << " end " << last[1]);
        CHECK(last[1] < first[1]);
    }
}

TEST_CASE("gntk") {
    SUBCASE("depth 0 is the linear kernel") {
        Tensor xa = random_tensor(4, 3, 1);
        Tensor xb = random_tensor(5, 3, 2);
        Graph g = sbm({2, 2}, 1, 3);
        Tensor k = gntk(xa, normalize_adjacency(g), xb, nullptr, 0);
        CHECK(max_abs_diff(k, Tensor::from_matrix(xa.mat() * xb.mat().transpose())) < 1e-14);
    }
    SUBCASE("scalar recursion by hand") {
        Tensor one = Tensor::from_rows({{1.0}});
        Tensor minus = Tensor::from_rows({{-1.0}});
        CHECK(gntk(one, nullptr, one, nullptr, 1)(0, 0) == doctest::Approx(2.0));
        CHECK(gntk(one, nullptr, minus, nullptr, 1)(0, 0) == doctest::Approx(0.0));
        // Two 2-d vectors at 60 degrees: rho = 1/2.
        Tensor a = Tensor::from_rows({{1.0, 0.0}});
        Tensor b = Tensor::from_rows({{0.5, std::sqrt(3.0) / 2.0}});
        const double k0 = (std::numbers::pi - std::numbers::pi / 3.0) / std::numbers::pi;
        const double k1 = (std::sqrt(0.75) + (std::numbers::pi - std::numbers::pi / 3.0) * 0.5) / std::numbers::pi;
        CHECK(gntk(a, nullptr, b, nullptr, 1)(0, 0) == doctest::Approx(0.5 * k0 + k1).epsilon(1e-14));
    }
    SUBCASE("matches a dense oracle, including across two graphs") {
        Graph ga = sbm({5, 5}, 3, 4);
        Graph gb = sbm({3, 4}, 4, 4);
        auto adj_a = normalize_adjacency(ga);
        auto adj_b = normalize_adjacency(gb);
        for (std::size_t depth : {1, 2, 3}) {
            CAPTURE(depth);
            Tensor k = gntk(ga.features, adj_a, ga.features, adj_a, depth);
            CHECK((k.mat() - gntk_oracle(ga.features.mat(), dense(adj_a), depth)).cwiseAbs().maxCoeff() < 1e-10);
            // The cross kernel is the off-diagonal block of the kernel on the disjoint union.
            RowMatrix x(17, 4);
            x << ga.features.mat(), gb.features.mat();
            RowMatrix joint = RowMatrix::Zero(17, 17);
            joint.topLeftCorner(10, 10) = dense(adj_a);
            joint.bottomRightCorner(7, 7) = dense(adj_b);
            RowMatrix oracle = gntk_oracle(x, joint, depth);
            Tensor cross = gntk(ga.features, adj_a, gb.features, adj_b, depth);
            CHECK((cross.mat() - oracle.topRightCorner(10, 7)).cwiseAbs().maxCoeff() < 1e-10);
            Tensor free = gntk(ga.features, adj_a, gb.features, nullptr, depth);
            joint.bottomRightCorner(7, 7) = RowMatrix::Identity(7, 7);
            CHECK((free.mat() - gntk_oracle(x, joint, depth).topRightCorner(10, 7)).cwiseAbs().maxCoeff() < 1e-10);
        }
    }
    SUBCASE("PSD on 20-node instances") {
        for (std::uint64_t s = 0; s < 4; ++s) {
            Graph g = sbm({10, 10}, 30 + s, 5);
            for (SparseOperatorPtr adj : {normalize_adjacency(g), SparseOperatorPtr{}}) {
                for (std::size_t depth : {1, 2, 3}) {
                    Tensor k = gntk(g.features, adj, g.features, adj, depth);
                    CHECK((k.mat() - k.mat().transpose()).cwiseAbs().maxCoeff() < 1e-12);
                    Eigen::SelfAdjointEigenSolver<RowMatrix> es(RowMatrix(k.mat()));
                    CHECK(es.eigenvalues().minCoeff() >= -1e-8);
                }
            }
        }
    }
    SUBCASE("feature dimensions must agree") {
        CHECK_THROWS_AS(gntk(random_tensor(2, 3, 1), nullptr, random_tensor(2, 4, 1), nullptr, 1), std::invalid_argument);
    }
}

TEST_CASE("kernel ridge regression") {
    Graph g = sbm({20, 20, 20}, 12, 8);
    auto adj = normalize_adjacency(g);
    const Tensor y_t = one_hot(g.labels_of(g.train), 3);
    SUBCASE("the full training set interpolates") {
        Tape tape;
        GntkSide side{tape.constant(g.features), adj, {}};
        Var loss = krr_loss(side, g.train, y_t, side, g.train, y_t, 1e-8, 2);
        CHECK(loss.value().item() < 1e-4);
    }
    SUBCASE("huge ridge predicts zero") {
        Tape tape;
        GntkSide side{tape.constant(g.features), adj, {}};
        GntkSide syn{tape.constant(random_tensor(6, 8, 3)), nullptr, {}};
        std::vector<std::size_t> rows = {0, 1, 2, 3, 4, 5};
        Var loss = krr_loss(side, g.train, y_t, syn, rows, one_hot(std::vector<int>{0, 0, 1, 1, 2, 2}, 3), 1e12, 2);
        CHECK(loss.value().item() == doctest::Approx(0.5 * static_cast<double>(g.train.size())).epsilon(1e-6));
    }
    SUBCASE("precomputed diagonals agree with computed ones") {
        Tape tape;
        GntkSide plain{tape.constant(g.features), adj, {}};
        GntkSide pre = plain;
        for (const Tensor& d : gntk_diagonals(g.features, adj, 2)) {
            pre.diagonals.push_back(tape.constant(d));
        }
        GntkSide syn{tape.constant(random_tensor(4, 8, 5)), nullptr, {}};
        const Tensor computed = gntk(plain, syn, 2).value();
        CHECK(max_abs_diff(computed, gntk(pre, syn, 2).value()) < 1e-12);
    }
    SUBCASE("gradient wrt synthetic features passes fd_check on 6 nodes") {
        Graph small = sbm({3, 3}, 13, 4, 1.0);
        auto sadj = normalize_adjacency(small);
        const Tensor ys = one_hot(std::vector<int>{0, 1}, 2);
        const Tensor yt = one_hot(small.labels_of(small.train), 2);
        for (std::size_t depth : {1, 2}) {
            auto fn = [&](Tape& tape, Var v) {
                GntkSide t{tape.constant(small.features), sadj, {}};
                std::vector<std::size_t> rows = {0, 1};
                return krr_loss(t, small.train, yt, GntkSide{v, nullptr, {}}, rows, ys, 1e-2, depth);
            };
            CHECK(fd_check(fn, random_tensor(2, 4, 17)) < 1e-4);
        }
    }
    SUBCASE("condensed features beat the majority class") {
        CondenseConfig c;
        c.method = CondenseMethod::GCSNTK;
        c.outer_iterations = 30;
        c.lr_features = 0.05;
        const std::vector<std::size_t> budget = {2, 2, 2};
        CondenseResult r = condense_krr(g, budget, c);
        CHECK(!r.graph.has_structure());
        CHECK(r.graph.class_counts() == budget);
        CHECK(r.losses.back() < r.losses.front());
        const auto counts = g.class_counts(g.test);
        const double majority =
            static_cast<double>(*std::max_element(counts.begin(), counts.end())) / static_cast<double>(g.test.size());
        const double acc = downstream_accuracy(r.graph, g, 1);
        MESSAGE("krr accuracy " << acc << " majority " << majority);
        CHECK(acc > majority);
        CHECK(r.graph == condense_krr(g, budget, c).graph);
    }
}

TEST_CASE("dispatch and output structure") {
    Graph g = sbm({10, 10}, 14, 4);
    const std::vector<std::size_t> budget = {2, 2};
    ModelSpec spec;
    spec.hidden = 8;
    ExpertBuffer b = build_expert_buffer(g, spec, 1, 10, 1, 0);
    for (CondenseMethod m : {CondenseMethod::GCond, CondenseMethod::GCondX, CondenseMethod::DosCond, CondenseMethod::SFGC,
                             CondenseMethod::GEOM, CondenseMethod::GCSNTK}) {
        CAPTURE(to_string(m));
        CondenseConfig c = small_config(m);
        c.outer_iterations = 2;
        c.student_steps = 2;
        CondenseResult r = condense(g, budget, c, &b);
        CHECK(r.graph.has_structure() == is_structure_method(m));
        CHECK_NOTHROW(r.graph.validate());
    }
    CHECK_THROWS_AS(condense(g, budget, small_config(CondenseMethod::SFGC)), std::invalid_argument);
}

TEST_CASE("sparsify") {
    CondensedGraph cg;
    cg.features = Tensor(3, 1);
    cg.labels = {0, 1, 1};
    cg.num_classes = 2;
    cg.adjacency = Tensor::from_rows({{0, 0.2, 0.7}, {0.2, 0, 0.5}, {0.7, 0.5, 0}});
    CHECK(*sparsify(cg, 0.0).adjacency == *cg.adjacency);
    CondensedGraph empty = sparsify(cg, std::nextafter(1.0, 2.0));
    for (double v : empty.adjacency->values()) {
        CHECK(v == 0.0);
    }
    CondensedGraph half = sparsify(cg, 0.5);
    for (std::size_t i = 0; i < 9; ++i) {
        const double v = (*cg.adjacency)[i];
        CHECK((*half.adjacency)[i] == (v < 0.5 ? 0.0 : v));
    }
    CHECK_NOTHROW(half.validate());
    CondensedGraph bare = cg;
    bare.adjacency.reset();
    CHECK_THROWS_AS(sparsify(bare, 0.5), std::invalid_argument);
}
