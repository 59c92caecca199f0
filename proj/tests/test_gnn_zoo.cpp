#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "doctest.h"
#include "graphslim/gnn.hpp"

using namespace graphslim;

namespace {

const Arch kArchs[] = {Arch::GCN, Arch::SGC, Arch::APPNP, Arch::Cheby, Arch::SAGE};

Graph small_graph(std::size_t n_per_block, std::uint64_t seed, std::size_t dim = 5) {
    SbmParams p;
    p.block_sizes = {n_per_block, n_per_block};
    p.p_intra = 0.5;
    p.p_inter = 0.1;
    p.feature_dim = dim;
    p.seed = seed;
    return sbm_generate(p);
}

ModelSpec spec_for(Arch a) {
    ModelSpec s;
    s.arch = a;
    s.hidden = 6;
    s.dropout = 0.0;
    s.k = a == Arch::APPNP ? 3 : 2;
    s.alpha = 0.2;
    s.activation = Activation::Tanh;
    return s;
}

RowMatrix dense_adj(const Graph& g) { return RowMatrix(adjacency_matrix(g)); }

// Literal loops for D^{-1/2}(A+I)D^{-1/2}.
RowMatrix naive_gcn_norm(const RowMatrix& a) {
    const auto n = a.rows();
    RowMatrix ah = a + RowMatrix::Identity(n, n);
    std::vector<double> d(static_cast<std::size_t>(n), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            d[static_cast<std::size_t>(i)] += ah(i, j);
        }
    }
    RowMatrix out(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            out(i, j) = ah(i, j) / std::sqrt(d[static_cast<std::size_t>(i)] * d[static_cast<std::size_t>(j)]);
        }
    }
    return out;
}

RowMatrix naive_matmul(const RowMatrix& a, const RowMatrix& b) {
    RowMatrix c = RowMatrix::Zero(a.rows(), b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index k = 0; k < a.cols(); ++k) {
            for (Eigen::Index j = 0; j < b.cols(); ++j) {
                c(i, j) += a(i, k) * b(k, j);
            }
        }
    }
    return c;
}

RowMatrix add_bias(RowMatrix h, const Tensor& b) {
    for (Eigen::Index i = 0; i < h.rows(); ++i) {
        for (Eigen::Index j = 0; j < h.cols(); ++j) {
            h(i, j) += b(0, static_cast<std::size_t>(j));
        }
    }
    return h;
}

Graph permuted(const Graph& g, const std::vector<std::size_t>& perm) {
    // perm[new] = old
    std::vector<std::size_t> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        inv[perm[i]] = i;
    }
    Graph out = g;
    for (std::size_t i = 0; i < perm.size(); ++i) {
        auto src = g.features.row(perm[i]);
        std::copy(src.begin(), src.end(), out.features.row(i).begin());
        out.labels[i] = g.labels[perm[i]];
    }
    std::vector<Edge> edges;
    for (const Edge& e : g.edges) {
        edges.push_back({inv[e.u], inv[e.v], e.weight});
    }
    out.edges = canonical_edges(edges);
    return out;
}

std::shared_ptr<const EdgeList> edge_list(const Graph& g) {
    auto el = std::make_shared<EdgeList>();
    el->num_nodes = g.num_nodes;
    for (const Edge& e : g.edges) {
        el->src.push_back(e.u);
        el->dst.push_back(e.v);
    }
    return el;
}

}  // namespace

TEST_CASE("init_params") {
    ModelSpec s;
    s.hidden = 8;
    Params a = init_params(s, 4, 3, 7);
    CHECK(a == init_params(s, 4, 3, 7));
    CHECK(!(a == init_params(s, 4, 3, 8)));
    REQUIRE(a.size() == 4);
    CHECK(a.values[0].rows() == 4);
    CHECK(a.values[0].cols() == 8);
    CHECK(a.values[2].rows() == 8);
    CHECK(a.values[2].cols() == 3);
    const double bound = std::sqrt(6.0 / 12.0);
    for (double v : a.values[0].values()) {
        CHECK(std::abs(v) <= bound);
    }
    for (double v : a.values[1].values()) {
        CHECK(v == 0.0);
    }
    ModelSpec cheby = s;
    cheby.arch = Arch::Cheby;
    cheby.k = 3;
    CHECK(init_params(cheby, 4, 3, 1).size() == 2 * 5);
    ModelSpec bad = s;
    bad.hidden = 0;
    CHECK_THROWS(init_params(bad, 4, 3, 1));
    CHECK_THROWS(init_params(s, 0, 3, 1));
}

TEST_CASE("spec parsing") {
    CHECK(parse_arch("APPNP") == Arch::APPNP);
    CHECK(parse_activation("leaky-relu") == Activation::LeakyRelu);
    for (Arch a : kArchs) {
        CHECK(parse_arch(to_string(a)) == a);
    }
    CHECK_THROWS(parse_arch("gat"));
    ModelSpec s;
    s.arch = Arch::APPNP;
    s.alpha = 0.0;
    CHECK_THROWS(s.validate());
}

TEST_CASE("sparse GCN normalization matches graph store") {
    Graph g = small_graph(12, 3);
    Tape tape;
    Var eye = tape.constant(Tensor::identity(g.num_nodes));
    Tensor a = GraphOperator::from_graph(g).propagate(eye, Norm::GcnSym).value();
    RowMatrix b = normalize_adjacency(g)->matrix;
    CHECK((a.mat() - b).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("GCN forward equals naive loop oracle") {
    Graph g = small_graph(25, 11, 7);
    ModelSpec s;
    s.hidden = 9;
    Params p = init_params(s, g.num_features(), 2, 3);
    Tensor got = predict(s, p, GraphOperator::from_graph(g), NodeInput::constant(g.features));

    RowMatrix an = naive_gcn_norm(dense_adj(g));
    RowMatrix h = add_bias(naive_matmul(an, naive_matmul(g.features.mat(), p.values[0].mat())), p.values[1]);
    h = h.cwiseMax(0.0);
    RowMatrix out = add_bias(naive_matmul(an, naive_matmul(h, p.values[2].mat())), p.values[3]);
    CHECK((got.mat() - out).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("SAGE and Cheby equal dense reference formulas") {
    Graph g = small_graph(10, 5);
    RowMatrix a = dense_adj(g);
    const auto n = a.rows();
    Eigen::VectorXd deg = a.rowwise().sum();
    RowMatrix x = g.features.mat();

    SUBCASE("SAGE mean aggregation, one layer") {
        ModelSpec s = spec_for(Arch::SAGE);
        s.layers = 1;
        Params p = init_params(s, g.num_features(), 3, 4);
        RowMatrix mean = deg.cwiseInverse().asDiagonal() * a;
        RowMatrix expect = add_bias(x * p.values[0].mat() + mean * x * p.values[1].mat(), p.values[2]);
        Tensor got = predict(s, p, GraphOperator::from_graph(g), NodeInput::constant(g.features));
        CHECK((got.mat() - expect).cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("Cheby order 2, one layer") {
        ModelSpec s = spec_for(Arch::Cheby);
        s.layers = 1;
        s.k = 2;
        Params p = init_params(s, g.num_features(), 3, 4);
        GraphOperator op = GraphOperator::from_graph(g);
        RowMatrix dinv = deg.cwiseSqrt().cwiseInverse().asDiagonal();
        RowMatrix lap = RowMatrix::Identity(n, n) - dinv * a * dinv;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lap);
        const double lmax = es.eigenvalues().maxCoeff();
        CHECK(op.laplacian_lambda_max() == doctest::Approx(lmax).epsilon(1e-8));
        RowMatrix lt = 2.0 / op.laplacian_lambda_max() * lap - RowMatrix::Identity(n, n);
        RowMatrix t2 = 2.0 * lt * lt - RowMatrix::Identity(n, n);
        RowMatrix expect =
            add_bias(x * p.values[0].mat() + lt * x * p.values[1].mat() + t2 * x * p.values[2].mat(), p.values[3]);
        Tensor got = predict(s, p, op, NodeInput::constant(g.features));
        CHECK((got.mat() - expect).cwiseAbs().maxCoeff() < 1e-11);
    }
}

TEST_CASE("APPNP with alpha 1 is the feedforward network and ignores the graph") {
    Graph g = small_graph(10, 2);
    ModelSpec s = spec_for(Arch::APPNP);
    s.alpha = 1.0;
    Params p = init_params(s, g.num_features(), 2, 9);
    NodeInput x = NodeInput::constant(g.features);
    Tensor with_graph = predict(s, p, GraphOperator::from_graph(g), x);
    Tensor with_identity = predict(s, p, GraphOperator::identity(g.num_nodes), x);
    CHECK(with_graph == with_identity);
    RowMatrix h = add_bias(g.features.mat() * p.values[0].mat(), p.values[1]).array().tanh().matrix();
    RowMatrix mlp = add_bias(h * p.values[2].mat(), p.values[3]);
    CHECK((with_graph.mat() - mlp).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("SGC with K=0 is a linear map") {
    Graph g = small_graph(10, 2);
    ModelSpec s = spec_for(Arch::SGC);
    s.k = 0;
    s.layers = 1;
    Params p = init_params(s, g.num_features(), 2, 9);
    Tensor got = predict(s, p, GraphOperator::from_graph(g), NodeInput::constant(g.features));
    RowMatrix expect = add_bias(g.features.mat() * p.values[0].mat(), p.values[1]);
    CHECK((got.mat() - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("forward is permutation equivariant and deterministic in eval mode") {
    Graph g = small_graph(9, 21);
    std::vector<std::size_t> perm(g.num_nodes);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(4);
    std::shuffle(perm.begin(), perm.end(), rng);
    Graph gp = permuted(g, perm);
    for (Arch a : kArchs) {
        CAPTURE(to_string(a));
        ModelSpec s = spec_for(a);
        s.dropout = 0.5;
        Params p = init_params(s, g.num_features(), 2, 1);
        Tensor y = predict(s, p, GraphOperator::from_graph(g), NodeInput::constant(g.features));
        Tensor yp = predict(s, p, GraphOperator::from_graph(gp), NodeInput::constant(gp.features));
        CHECK(y == predict(s, p, GraphOperator::from_graph(g), NodeInput::constant(g.features)));
        double err = 0.0;
        for (std::size_t i = 0; i < perm.size(); ++i) {
            for (std::size_t j = 0; j < y.cols(); ++j) {
                err = std::max(err, std::abs(yp(i, j) - y(perm[i], j)));
            }
        }
        CHECK(err < 1e-12);
    }
}

TEST_CASE("dense, edge-weighted and sparse operators agree") {
    Graph g = small_graph(8, 6);
    for (Arch a : kArchs) {
        CAPTURE(to_string(a));
        ModelSpec s = spec_for(a);
        Params p = init_params(s, g.num_features(), 2, 5);
        NodeInput x = NodeInput::constant(g.features);
        Tensor ref = predict(s, p, GraphOperator::from_graph(g), x);

        Tape tape;
        auto vars = bind_params(tape, p, false);
        Var adj = tape.leaf(Tensor::from_matrix(dense_adj(g)));
        Tensor dense = forward(s, vars, GraphOperator::dense(adj), x).value();
        CHECK(max_abs_diff(dense, ref) < 1e-12);

        auto el = edge_list(g);
        Var w = tape.leaf(Tensor(el->src.size(), 1, 1.0));
        Tensor edges = forward(s, vars, GraphOperator::weighted_edges(w, el), x).value();
        CHECK(max_abs_diff(edges, ref) < 1e-12);

        Tensor dc = predict(s, p, GraphOperator::dense_constant(Tensor::from_matrix(dense_adj(g))), x);
        CHECK(max_abs_diff(dc, ref) < 1e-12);
    }
}

TEST_CASE("training loss gradients pass fd_check on a 10-node graph") {
    Graph g = small_graph(5, 8, 4);
    const std::vector<int> labels = g.labels_of(g.train);
    for (Arch a : kArchs) {
        CAPTURE(to_string(a));
        ModelSpec s = spec_for(a);
        s.hidden = 4;
        const Params p = init_params(s, g.num_features(), 2, 12);
        GraphOperator op = GraphOperator::from_graph(g);
        NodeInput x = NodeInput::constant(g.features);
        for (std::size_t k = 0; k < p.size(); ++k) {
            CAPTURE(p.names[k]);
            auto fn = [&](Tape& tape, Var v) {
                auto vars = bind_params(tape, p, false);
                vars[k] = v;
                return cross_entropy(forward(s, vars, op, x), g.train, labels);
            };
            CHECK(fd_check(fn, p.values[k]) < 1e-5);
        }
        // Gradients with respect to features and a learnable adjacency. Cheby's spectral scale is a
        // constant with respect to the adjacency, so finite differences disagree there by design.
        auto wrt_x = [&](Tape& tape, Var v) {
            auto vars = bind_params(tape, p, false);
            return cross_entropy(forward(s, vars, op, NodeInput::variable(v)), g.train, labels);
        };
        CHECK(fd_check(wrt_x, g.features) < 1e-5);
        if (a == Arch::Cheby) {
            continue;
        }
        auto wrt_adj = [&](Tape& tape, Var v) {
            auto vars = bind_params(tape, p, false);
            return cross_entropy(forward(s, vars, GraphOperator::dense(v), x), g.train, labels);
        };
        CHECK(fd_check(wrt_adj, Tensor::from_matrix(dense_adj(g))) < 1e-5);
        auto el = edge_list(g);
        auto wrt_w = [&](Tape& tape, Var v) {
            auto vars = bind_params(tape, p, false);
            return cross_entropy(forward(s, vars, GraphOperator::weighted_edges(v, el), x), g.train, labels);
        };
        CHECK(fd_check(wrt_w, Tensor(el->src.size(), 1, 0.7)) < 1e-5);
    }
}

TEST_CASE("dropout is seeded and inactive in eval mode") {
    Graph g = small_graph(10, 1);
    ModelSpec s = spec_for(Arch::GCN);
    s.dropout = 0.5;
    Params p = init_params(s, g.num_features(), 2, 1);
    Tape tape;
    auto vars = bind_params(tape, p, false);
    GraphOperator op = GraphOperator::from_graph(g);
    NodeInput x = NodeInput::constant(g.features);
    Tensor a = forward(s, vars, op, x, {.train = true, .dropout_seed = 1}).value();
    Tensor b = forward(s, vars, op, x, {.train = true, .dropout_seed = 1}).value();
    Tensor c = forward(s, vars, op, x, {.train = true, .dropout_seed = 2}).value();
    CHECK(a == b);
    CHECK(!(a == c));
    CHECK(!(a == forward(s, vars, op, x).value()));
}

TEST_CASE("train") {
    SUBCASE("zero epochs returns the initial parameters") {
        Graph g = small_graph(10, 1);
        ModelSpec s = spec_for(Arch::GCN);
        TrainResult r = train(s, g, std::nullopt, {.epochs = 0, .snapshot_every = 5}, 3);
        CHECK(r.params == init_params(s, g.num_features(), g.num_classes, mix_seed(3, 0)));
        REQUIRE(r.trajectory.snapshots.size() == 1);
        CHECK(r.trajectory.snapshots[0].epoch == 0);
    }
    SUBCASE("separable two-block SBM is fit") {
        SbmParams sp;
        sp.block_sizes = {60, 60};
        sp.p_intra = 0.15;
        sp.p_inter = 0.01;
        sp.feature_dim = 8;
        sp.mean_separation = 2.0;
        sp.seed = 5;
        Graph g = sbm_generate(sp);
        ModelSpec s;
        s.hidden = 32;
        TrainResult r = train(s, g, std::nullopt, {.epochs = 200, .snapshot_every = 50}, 1);
        CHECK(evaluate(s, r.params, g, g.train) >= 0.99);
        const auto& snaps = r.trajectory.snapshots;
        REQUIRE(snaps.size() == 5);
        for (std::size_t i = 1; i < snaps.size(); ++i) {
            CHECK(snaps[i].epoch > snaps[i - 1].epoch);
        }
        CHECK(snaps.back().params == r.params);
        CHECK(r.best_val_acc >= snaps.back().val_acc);
    }
    SUBCASE("bit-identical reruns") {
        Graph g = small_graph(15, 2);
        for (Arch a : kArchs) {
            ModelSpec s = spec_for(a);
            s.dropout = 0.3;
            TrainResult r1 = train(s, g, std::nullopt, {.epochs = 15}, 9);
            TrainResult r2 = train(s, g, std::nullopt, {.epochs = 15}, 9);
            CHECK(r1.params == r2.params);
        }
    }
    SUBCASE("identity adjacency override trains an MLP") {
        Graph g = small_graph(15, 2);
        ModelSpec s = spec_for(Arch::GCN);
        TrainResult r = train(s, g, GraphOperator::identity(g.num_nodes), {.epochs = 5}, 1);
        CHECK(r.params.size() == 4);
    }
    SUBCASE("divergence names the epoch") {
        Graph g = small_graph(5, 2);
        ModelSpec s = spec_for(Arch::GCN);
        try {
            train(s, g, std::nullopt, {.lr = 1e305, .epochs = 3}, 1);
            FAIL("expected divergence");
        } catch (const NumericalError& e) {
            CHECK(std::string(e.what()).find("epoch 2") != std::string::npos);
        }
    }
    SUBCASE("one-hot soft labels reproduce hard-label training") {
        Graph g = small_graph(10, 4);
        ModelSpec s = spec_for(Arch::SGC);
        TrainData hard = train_data(g);
        TrainData soft = hard;
        auto y = std::make_shared<Tensor>(hard.rows.size(), g.num_classes);
        for (std::size_t i = 0; i < hard.rows.size(); ++i) {
            (*y)(i, static_cast<std::size_t>(hard.labels[i])) = 1.0;
        }
        soft.soft_labels = y;
        TrainResult a = train(s, hard, {.epochs = 10}, 2);
        TrainResult b = train(s, soft, {.epochs = 10}, 2);
        for (std::size_t k = 0; k < a.params.size(); ++k) {
            CHECK(max_abs_diff(a.params.values[k], b.params.values[k]) < 1e-12);
        }
    }
}

TEST_CASE("accuracy and evaluate") {
    Tensor onehot = Tensor::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
    const std::vector<std::size_t> rows = {0, 1, 2};
    CHECK(accuracy(onehot, rows, std::vector<int>{0, 1, 2}) == 1.0);
    Tensor uniform(3, 3, 0.25);
    CHECK(accuracy(uniform, rows, std::vector<int>{1, 1, 1}) == 0.0);
    CHECK(accuracy(uniform, rows, std::vector<int>{0, 0, 0}) == 1.0);
    CHECK_THROWS(accuracy(uniform, std::vector<std::size_t>{}, std::vector<int>{}));

    std::mt19937_64 rng(17);
    std::normal_distribution<double> nd;
    Tensor random(1000, 7);
    for (std::size_t i = 0; i < random.size(); ++i) {
        random[i] = nd(rng);
    }
    std::vector<std::size_t> all(1000);
    std::iota(all.begin(), all.end(), 0);
    std::vector<int> balanced(1000);
    for (std::size_t i = 0; i < 1000; ++i) {
        balanced[i] = static_cast<int>(i % 7);
    }
    CHECK(std::abs(accuracy(random, all, balanced) - 1.0 / 7.0) < 0.05);

    Graph g = small_graph(5, 1);
    ModelSpec s;
    CHECK_THROWS(evaluate(s, init_params(s, g.num_features(), 2, 1), g, std::vector<std::size_t>{}));
}
