#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <random>
#include <set>

#include "doctest.h"
#include "graphslim/harness.hpp"

using namespace graphslim;

namespace {

Graph sbm(std::vector<std::size_t> blocks, std::uint64_t seed, double sep = 0.6) {
    SbmParams p;
    p.block_sizes = std::move(blocks);
    p.p_intra = 0.15;
    p.p_inter = 0.01;
    p.feature_dim = 8;
    p.mean_separation = sep;
    p.train_fraction = 0.4;
    p.val_fraction = 0.3;
    p.seed = seed;
    return sbm_generate(p);
}

ProtocolConfig quick(std::size_t runs = 3) {
    ProtocolConfig p;
    p.model.hidden = 16;
    p.train.epochs = 60;
    p.runs = runs;
    p.seed = 9;
    return p;
}

struct WorkerEnv {
    explicit WorkerEnv(const char* v) { setenv("GRAPHSLIM_WORKERS", v, 1); }
    ~WorkerEnv() { unsetenv("GRAPHSLIM_WORKERS"); }
};

CondensedGraph random_condensed(const Graph& g, std::size_t m, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    CondensedGraph cg;
    cg.features = Tensor(m, g.num_features());
    std::normal_distribution<double> n(0.0, 1.0);
    for (double& v : cg.features.values()) v = n(rng);
    cg.num_classes = g.num_classes;
    for (std::size_t i = 0; i < m; ++i) cg.labels.push_back(static_cast<int>(i % g.num_classes));
    cg.meta.method = "gcondx";
    return cg;
}

}  // namespace

TEST_CASE("worker pool") {
    for (const char* w : {"1", "4"}) {
        WorkerEnv env(w);
        CHECK(worker_count() == static_cast<std::size_t>(std::atoi(w)));
        std::vector<std::size_t> out(100);
        parallel_for(out.size(), [&](std::size_t i) { out[i] = i * i; });
        for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == i * i);
        std::atomic<int> ran{0};
        try {
            parallel_for(20, [&](std::size_t i) {
                ++ran;
                if (i == 7 || i == 13) throw std::runtime_error("job " + std::to_string(i));
            });
            FAIL("no exception");
        } catch (const std::runtime_error& e) {
            CHECK(std::string(e.what()) == "job 7");
        }
        CHECK(ran == 20);
    }
    WorkerEnv bad("zero");
    CHECK(worker_count() >= 1);
}

TEST_CASE("mean_stddev") {
    std::vector<double> xs = {0.7, 0.8, 0.75, 0.9};
    auto [m, s] = mean_stddev(xs);
    CHECK(m == doctest::Approx(0.7875));
    // Sample variance: sum of squared deviations / (n - 1).
    CHECK(s == doctest::Approx(std::sqrt((0.0875 * 0.0875 + 0.0125 * 0.0125 + 0.0375 * 0.0375 + 0.1125 * 0.1125) / 3)));
    CHECK(mean_stddev(std::vector<double>{0.5}).second == 0.0);
}

TEST_CASE("evaluate_protocol") {
    Graph g = sbm({30, 30}, 1);
    ProtocolConfig pc = quick();

    SUBCASE("whole training graph matches direct training") {
        EvalReport r = evaluate_protocol(g, g, pc);
        REQUIRE(r.runs.size() == 3);
        for (std::size_t i = 0; i < r.runs.size(); ++i) {
            CHECK(r.runs[i].seed == mix_seed(pc.seed, i));
            TrainResult direct = train(pc.model, g, std::nullopt, pc.train, r.runs[i].seed);
            CHECK(r.runs[i].test_acc == evaluate(pc.model, direct.params, g, g.test));
            CHECK(r.runs[i].val_acc == evaluate(pc.model, direct.params, g, g.val));
        }
        std::vector<double> tests;
        for (const auto& run : r.runs) tests.push_back(run.test_acc);
        CHECK(r.mean == mean_stddev(tests).first);
        CHECK(r.stddev == mean_stddev(tests).second);
        CHECK(r.method == "whole");
    }
    SUBCASE("determinism modulo timing, independent of worker count") {
        EvalReport a;
        EvalReport b;
        {
            WorkerEnv env("1");
            a = evaluate_protocol(g, g, pc);
        }
        {
            WorkerEnv env("3");
            b = evaluate_protocol(g, g, pc);
        }
        CHECK(strip_timing(a.to_json()) == strip_timing(b.to_json()));
        CHECK(!strip_timing(a.to_json()).contains("timing"));
        CHECK(a.to_json().at("timing").at("peak_memory_bytes").get<std::size_t>() > 0);
    }
    SUBCASE("structure-free graphs train on the identity") {
        CondensedGraph cg = random_condensed(g, 6, 2);
        EvalReport r = evaluate_protocol(cg, g, pc);
        TrainData d;
        d.graph = GraphOperator::identity(6);
        d.features = NodeInput::constant(cg.features);
        d.rows = {0, 1, 2, 3, 4, 5};
        d.labels = cg.labels;
        d.num_classes = 2;
        TrainResult direct = train(pc.model, d, pc.train, mix_seed(pc.seed, 0));
        CHECK(r.runs[0].test_acc == evaluate(pc.model, direct.params, g, g.test));
    }
    SUBCASE("learned adjacencies are thresholded, others are not") {
        CondensedGraph cg = random_condensed(g, 6, 3);
        Tensor a(6, 6);
        for (std::size_t i = 0; i < 6; ++i)
            for (std::size_t j = 0; j < 6; ++j)
                if (i != j) a(i, j) = (i + j) % 2 ? 0.3 : 0.9;
        cg.adjacency = a;
        cg.meta.method = "gcond";
        CondensedGraph thresholded = sparsify(cg, cg.delta);
        thresholded.meta.method = "averaging";
        CHECK(strip_timing(evaluate_protocol(cg, g, pc).to_json()).at("runs") ==
              strip_timing(evaluate_protocol(thresholded, g, pc).to_json()).at("runs"));
        CondensedGraph coarse = cg;
        coarse.meta.method = "averaging";
        CHECK(strip_timing(evaluate_protocol(coarse, g, pc).to_json()).at("runs") !=
              strip_timing(evaluate_protocol(cg, g, pc).to_json()).at("runs"));
    }
    SUBCASE("failed runs are flagged and excluded") {
        WorkerEnv env("1");
        int calls = 0;
        auto substrate = [&] {
            TrainData d = reduced_train_data(g, g);
            if (calls++ == 1) d.labels.pop_back();
            return d;
        };
        EvalReport r = evaluate_protocol(substrate, g, pc);
        CHECK(!r.runs[0].failed);
        CHECK(r.runs[1].failed);
        CHECK(!r.runs[1].error.empty());
        CHECK(r.mean == doctest::Approx((r.runs[0].test_acc + r.runs[2].test_acc) / 2));
        CHECK(r.to_json().at("failed_runs") == 1);
        auto broken = [&] {
            TrainData d = reduced_train_data(g, g);
            d.rows.clear();
            return d;
        };
        CHECK_THROWS_AS(evaluate_protocol(broken, g, pc), std::runtime_error);
    }
}

TEST_CASE("select_snapshot") {
    Graph g = sbm({30, 30}, 4, 1.5);
    ProtocolConfig pc = quick(1);
    CHECK_THROWS(select_snapshot({}, g, pc));

    ReduceConfig rc;
    rc.method = "random";
    rc.budget.rate = 0.2;
    CondensedGraph good = *reduce(g, rc).graph;
    good.meta.method = "gcondx";
    good.adjacency.reset();

    SUBCASE("single snapshot") {
        std::vector<CondenseCheckpoint> one = {{5, good}};
        SnapshotChoice c = select_snapshot(one, g, pc);
        CHECK(c.index == 0);
        CHECK(c.graph == good);
    }
    SUBCASE("best at interval 3") {
        std::vector<CondenseCheckpoint> snaps;
        for (std::size_t i = 0; i < 6; ++i) {
            CondensedGraph bad = good;
            // Swapped labels teach the opposite decision.
            for (int& y : bad.labels) y = 1 - y;
            snaps.push_back({i, i == 3 ? good : bad});
        }
        SnapshotChoice c = select_snapshot(snaps, g, pc);
        CHECK(c.index == 3);
        CHECK(c.graph == good);
        CHECK(c.val_acc[3] == *std::max_element(c.val_acc.begin(), c.val_acc.end()));
    }
    SUBCASE("ties go to the later snapshot") {
        std::vector<CondenseCheckpoint> same = {{0, good}, {1, good}, {2, good}};
        CHECK(select_snapshot(same, g, pc).index == 2);
    }
}

TEST_CASE("hyper grid") {
    HyperGrid grid;
    CHECK(grid.cells(Arch::GCN).size() == 16);
    CHECK(grid.cells(Arch::Cheby).size() == 16);
    CHECK(grid.cells(Arch::SAGE).size() == 16);
    CHECK(grid.cells(Arch::SGC).size() == 32);
    CHECK(grid.cells(Arch::APPNP).size() == 64);
    std::set<std::string> seen;
    for (const auto& c : grid.cells(Arch::APPNP)) {
        seen.insert(model_spec_json(c.spec).dump() + std::to_string(c.train.lr) + std::to_string(c.train.weight_decay));
    }
    CHECK(seen.size() == 64);
}

TEST_CASE("transferability_matrix") {
    Graph g = sbm({30, 30}, 5);
    HyperGrid one;
    one.hidden = {16};
    one.lr = {0.01};
    one.weight_decay = {5e-4};
    one.dropout = {0.5};
    one.linear_layers = {2};
    one.alpha = {0.1};
    one.epochs = 60;
    const std::vector<Arch> archs = {Arch::GCN, Arch::SGC, Arch::APPNP, Arch::Cheby, Arch::SAGE};

    SUBCASE("grid of size 1 equals a direct evaluate call") {
        CondensedGraph cg = random_condensed(g, 8, 6);
        TransferReport t = transferability_matrix(cg, g, std::vector<Arch>{Arch::GCN}, one, 9);
        ProtocolConfig pc = quick(1);
        EvalReport e = evaluate_protocol(cg, g, pc);
        CHECK(t.cells[0].test_acc == e.runs[0].test_acc);
        CHECK(t.cells[0].val_acc == e.runs[0].val_acc);
    }
    SUBCASE("whole graph as the reduced graph gives relative accuracy 1") {
        auto whole = [&] { return reduced_train_data(g, g); };
        TransferReport t = transferability_matrix(whole, whole, g, archs, one, 1);
        REQUIRE(t.cells.size() == 5);
        for (const TransferCell& c : t.cells) {
            CHECK(c.relative == 1.0);
            CHECK(c.failures.empty());
        }
        CHECK(t.to_csv().rfind("model,val_acc,test_acc,whole_test_acc,relative,failures\ngcn,", 0) == 0);
        CHECK(t.to_json().at("models").size() == 5);
    }
    SUBCASE("empty grid") {
        HyperGrid empty = one;
        empty.hidden.clear();
        CHECK_THROWS_AS(transferability_matrix(random_condensed(g, 4, 1), g, archs, empty, 0), std::invalid_argument);
    }
}

TEST_CASE("nas") {
    CHECK(NasSpace::full().size() == 480);
    CHECK(NasSpace::full().architectures().size() == 480);
    CHECK(NasSpace::reduced().size() == 24);
    auto archs = NasSpace::reduced().architectures();
    std::set<std::string> unique;
    for (const auto& a : archs) {
        CHECK(a.arch == Arch::APPNP);
        unique.insert(a.describe());
    }
    CHECK(unique.size() == 24);

    SUBCASE("anti-correlated fixture") {
        std::vector<NasEntry> e;
        for (int i = 0; i < 5; ++i) {
            e.push_back({ModelSpec{}, 0.5 + 0.1 * i, 0.0, 0.9 - 0.1 * i, 0.6 + 0.01 * i});
        }
        NasResult r = nas_summary(e);
        CHECK(r.acc_corr == doctest::Approx(-1.0));
        CHECK(r.rank_corr == doctest::Approx(-1.0));
        CHECK(r.top1_index == 4);
        CHECK(r.top1_test == doctest::Approx(0.64));
        CHECK_THROWS(nas_summary({}));
    }
    SUBCASE("condensed graph = whole training graph") {
        Graph g = sbm({25, 25}, 7, 0.4);
        NasSpace space = NasSpace::reduced();
        TrainConfig tc;
        tc.epochs = 40;
        auto whole = [&] { return reduced_train_data(g, g); };
        NasResult r = nas_search(whole, whole, g, space, tc, 3);
        CHECK(r.entries.size() == 24);
        for (const NasEntry& e : r.entries) {
            CHECK(e.cond_val == e.whole_val);
            CHECK(e.cond_test == e.whole_test);
        }
        CHECK(r.acc_corr == doctest::Approx(1.0));
        CHECK(r.rank_corr == doctest::Approx(1.0));
        CHECK(r.to_json().at("architectures").size() == 24);
    }
}

TEST_CASE("reduce") {
    Graph g = sbm({30, 30}, 8);
    for (const std::string& m : reduce_methods()) {
        CAPTURE(m);
        ReduceConfig rc;
        rc.method = m;
        rc.budget.rate = 0.1;
        rc.condense.outer_iterations = 10;
        rc.condense.match_steps = 2;
        rc.condense.inner_steps = 2;
        rc.condense.student_steps = 3;
        rc.condense.max_start = 2;
        rc.condense.backbone.hidden = 16;
        rc.experts = 2;
        rc.expert_epochs = 6;
        rc.expert_spec.hidden = 16;
        rc.protocol = quick(1);
        ReduceResult r = reduce(g, rc);
        if (m == "whole") {
            CHECK(!r.graph);
            continue;
        }
        REQUIRE(r.graph);
        CHECK(r.graph->num_nodes() == 6);
        CHECK(r.graph->class_counts() == r.budget);
        CHECK(r.graph->meta.method == m);
        CHECK(r.graph->meta.source == graph_hash(g));
        CHECK(r.graph->meta.rate == doctest::Approx(0.1));
        CHECK(r.graph->meta.config_hash == rc.hash());
        CHECK_NOTHROW(r.graph->validate());
        CHECK(r.selection.has_value() == (m == "random" || m == "kcenter" || m == "herding" || m == "cent-d" ||
                                          m == "cent-p"));
        if (is_condensation_method(m)) {
            CHECK(r.snapshot_val.size() == 10);
            CHECK(r.snapshot_val[r.selected_snapshot] ==
                  *std::max_element(r.snapshot_val.begin(), r.snapshot_val.end()));
        }
        EvalReport e = evaluate_reduction(r, g, rc);
        CHECK(e.method == m);
        CHECK(e.runs.size() == 1);
    }
}

TEST_CASE("reduce config") {
    nlohmann::json j = {{"method", "gcond"},
                        {"rate", 0.026},
                        {"setting", "inductive"},
                        {"condense", {{"outer_iterations", 50}}},
                        {"protocol", {{"runs", 4}, {"epochs", 100}}},
                        {"seed", 3}};
    ReduceConfig c = reduce_config_from_json(j);
    CHECK(c.method == "gcond");
    CHECK(*c.budget.rate == 0.026);
    CHECK(c.budget.setting == Setting::Inductive);
    CHECK(c.condense.outer_iterations == 50);
    CHECK(c.protocol.runs == 4);
    CHECK(c.protocol.train.epochs == 100);
    CHECK(c.seed == 3);
    CHECK(c.hash() == reduce_config_from_json(j).hash());
    ReduceConfig other = c;
    other.seed = 4;
    CHECK(other.hash() != c.hash());
    CHECK(reduce_config_from_json(c.to_json()).hash() == c.hash());
    CHECK_THROWS_AS(reduce_config_from_json({{"method", "gcond"}, {"bogus", 1}}), std::invalid_argument);
    CHECK_THROWS_AS(reduce_config_from_json({{"method", "nope"}}), std::invalid_argument);
    CHECK_THROWS_AS(reduce_config_from_json({{"method", "random"}, {"rate", 2.0}}), std::invalid_argument);
    ReduceConfig ipc = reduce_config_from_json({{"method", "random"}, {"ipc", 5}});
    CHECK(!ipc.budget.rate);
    CHECK(*ipc.budget.ipc == 5);
}

TEST_CASE("robustness pipeline") {
    Graph g = sbm({30, 30}, 10);
    std::vector<ReduceConfig> methods(2);
    methods[0].method = "whole";
    methods[1].method = "random";
    methods[1].budget.rate = 0.2;
    for (auto& m : methods) m.protocol = quick(2);

    SUBCASE("identity corruption gives zero perf drop") {
        std::vector<CorruptionSpec> specs(2);
        specs[0].kind = CorruptionKind::Structure;
        specs[0].rate = 0.0;
        specs[0].repeats = 2;
        specs[1].kind = CorruptionKind::Feature;
        specs[1].rate = 0.0;
        specs[1].repeats = 1;
        RobustnessReport r = robustness_pipeline(g, methods, specs);
        REQUIRE(r.cells.size() == 4);
        for (const RobustnessCell& c : r.cells) {
            CHECK(c.perf_drop == 0.0);
            CHECK(c.mean_acc == c.clean_acc);
        }
        CHECK(r.to_json().at("cells").size() == 4);
        CHECK(r.to_csv().rfind("method,corruption,rate,scenario,clean_acc,mean_acc,perf_drop\n", 0) == 0);
    }
    SUBCASE("noise lowers accuracy and the report is deterministic") {
        std::vector<CorruptionSpec> specs(1);
        specs[0].kind = CorruptionKind::Feature;
        specs[0].rate = 0.9;
        specs[0].repeats = 2;
        RobustnessReport a = robustness_pipeline(g, methods, specs);
        RobustnessReport b = robustness_pipeline(g, methods, specs);
        CHECK(a.to_json() == b.to_json());
        CHECK(a.cells[0].accs.size() == 2);
        CHECK(a.cells[0].perf_drop == doctest::Approx(perf_drop(a.cells[0].clean_acc, a.cells[0].mean_acc)));
        CHECK(a.cells[0].perf_drop > 0.0);
    }
}

TEST_CASE("strip_timing") {
    nlohmann::json j = {{"a", 1}, {"timing", {{"t", 2}}}, {"nested", {{{"timing", 3}, {"b", 4}}}}};
    CHECK(strip_timing(j) == nlohmann::json{{"a", 1}, {"nested", {{{"b", 4}}}}});
}
