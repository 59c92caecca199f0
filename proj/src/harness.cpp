#include "graphslim/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "graphslim/coarsen.hpp"
#include "graphslim/coreset.hpp"
#include "graphslim/metrics.hpp"

namespace graphslim {

using nlohmann::json;

namespace {

thread_local bool t_in_pool = false;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::size_t peak_memory_bytes() {
    std::ifstream in("/proc/self/status");
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("VmHWM:", 0) == 0) {
            std::istringstream fields(line.substr(6));
            std::size_t kb = 0;
            fields >> kb;
            return kb * 1024;
        }
    }
    return 0;
}

json train_json(const TrainConfig& t) {
    return json{{"lr", t.lr}, {"weight_decay", t.weight_decay}, {"epochs", t.epochs}};
}

json protocol_json(const ProtocolConfig& p) {
    return json{{"model", model_spec_json(p.model)}, {"train", train_json(p.train)}, {"runs", p.runs}, {"seed", p.seed}};
}

// Adjacencies learned by a condenser are thresholded before evaluation; coreset and coarsening
// adjacencies are used as stored.
bool learned_structure(const CondensedGraph& cg) {
    try {
        return is_structure_method(parse_condense_method(cg.meta.method));
    } catch (const std::invalid_argument&) {
        return false;
    }
}

void attach_validation(TrainData& d, const Graph& original) {
    d.num_classes = std::max(d.num_classes, original.num_classes);
    d.validation.reset();
    if (!original.val.empty()) {
        d.validation = TrainData::Eval{GraphOperator::from_graph(original), NodeInput::constant(original.features),
                                       original.val, original.labels_of(original.val)};
    }
}

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

double safe_corr(double (*f)(std::span<const double>, std::span<const double>), const std::vector<double>& a,
                 const std::vector<double>& b) {
    try {
        return f(a, b);
    } catch (const std::invalid_argument&) {
        return nan();
    }
}

}  // namespace

// ---- worker pool -------------------------------------------------------------

std::size_t worker_count() {
    if (const char* env = std::getenv("GRAPHSLIM_WORKERS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) {
            return static_cast<std::size_t>(v);
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& job) {
    std::vector<std::exception_ptr> errors(n);
    auto run = [&](std::size_t i) {
        try {
            job(i);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    const std::size_t workers = std::min(worker_count(), n);
    if (t_in_pool || workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            run(i);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> threads;
        threads.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            threads.emplace_back([&] {
                t_in_pool = true;
                for (std::size_t i = next++; i < n; i = next++) {
                    run(i);
                }
            });
        }
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

// ---- protocol -----------------------------------------------------------------

TrainData reduced_train_data(const CondensedGraph& cg, const Graph& original) {
    cg.validate();
    const std::size_t m = cg.num_nodes();
    TrainData d;
    if (!cg.has_structure()) {
        d.graph = GraphOperator::identity(m);
    } else if (learned_structure(cg)) {
        d.graph = GraphOperator::dense_constant(*sparsify(cg, cg.delta).adjacency);
    } else {
        d.graph = GraphOperator::dense_constant(*cg.adjacency);
    }
    d.features = NodeInput::constant(cg.features);
    d.rows.resize(m);
    std::iota(d.rows.begin(), d.rows.end(), std::size_t{0});
    d.labels = cg.labels;
    if (cg.soft_labels) {
        d.soft_labels = std::make_shared<const Tensor>(*cg.soft_labels);
    }
    d.num_classes = cg.num_classes;
    attach_validation(d, original);
    return d;
}

TrainData reduced_train_data(const Graph& reduced, const Graph& original) {
    TrainData d = train_data(reduced);
    attach_validation(d, original);
    return d;
}

std::pair<double, double> mean_stddev(std::span<const double> xs) {
    if (xs.empty()) {
        return {nan(), nan()};
    }
    const double n = static_cast<double>(xs.size());
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    if (xs.size() < 2) {
        return {mean, 0.0};
    }
    double ss = 0.0;
    for (double x : xs) {
        ss += (x - mean) * (x - mean);
    }
    return {mean, std::sqrt(ss / (n - 1.0))};
}

std::pair<double, double> score_on(const Graph& original, const ModelSpec& spec, const Params& params) {
    Tensor logits = predict(spec, params, GraphOperator::from_graph(original), NodeInput::constant(original.features));
    const double val = original.val.empty() ? nan() : accuracy(logits, original.val, original.labels_of(original.val));
    const double test = accuracy(logits, original.test, original.labels_of(original.test));
    return {val, test};
}

json EvalReport::to_json() const {
    json rs = json::array();
    std::size_t failed = 0;
    for (const RunRecord& r : runs) {
        json e{{"seed", r.seed}, {"val_acc", r.val_acc}, {"test_acc", r.test_acc}, {"failed", r.failed}};
        if (r.failed) {
            e["error"] = r.error;
            ++failed;
        }
        rs.push_back(std::move(e));
    }
    return json{{"method", method},
                {"config_hash", config_hash},
                {"seed", seed},
                {"n_runs", runs.size()},
                {"failed_runs", failed},
                {"runs", std::move(rs)},
                {"mean", mean},
                {"stddev", stddev},
                {"val_mean", val_mean},
                {"timing",
                 {{"preprocess_s", timing.preprocess_s},
                  {"per_epoch_s", timing.per_epoch_s},
                  {"total_s", timing.total_s},
                  {"peak_memory_bytes", timing.peak_memory_bytes}}}};
}

EvalReport evaluate_protocol(const std::function<TrainData()>& substrate, const Graph& original,
                             const ProtocolConfig& config) {
    if (config.runs == 0) {
        throw std::invalid_argument("evaluate_protocol: runs must be positive");
    }
    if (original.test.empty()) {
        throw std::invalid_argument("evaluate_protocol: original graph has no test nodes");
    }
    config.model.validate();
    const auto t0 = Clock::now();
    EvalReport report;
    report.seed = config.seed;
    report.config_hash = fnv_hex(protocol_json(config).dump());
    report.runs.resize(config.runs);
    std::vector<double> prep(config.runs, 0.0);
    std::vector<double> fit(config.runs, 0.0);
    parallel_for(config.runs, [&](std::size_t i) {
        RunRecord& r = report.runs[i];
        r.seed = mix_seed(config.seed, i);
        try {
            const auto p0 = Clock::now();
            TrainData d = substrate();
            prep[i] = seconds_since(p0);
            const auto f0 = Clock::now();
            TrainResult tr = train(config.model, d, config.train, r.seed);
            fit[i] = seconds_since(f0);
            std::tie(r.val_acc, r.test_acc) = score_on(original, config.model, tr.params);
        } catch (const std::exception& e) {
            r.failed = true;
            r.error = e.what();
            r.val_acc = r.test_acc = 0.0;
        }
    });
    std::vector<double> tests;
    std::vector<double> vals;
    for (const RunRecord& r : report.runs) {
        if (!r.failed) {
            tests.push_back(r.test_acc);
            vals.push_back(r.val_acc);
        }
    }
    if (tests.empty()) {
        throw std::runtime_error("evaluate_protocol: every run failed: " + report.runs.front().error);
    }
    std::tie(report.mean, report.stddev) = mean_stddev(tests);
    report.val_mean = mean_stddev(vals).first;
    report.timing.preprocess_s = std::accumulate(prep.begin(), prep.end(), 0.0) / static_cast<double>(config.runs);
    report.timing.per_epoch_s = std::accumulate(fit.begin(), fit.end(), 0.0) /
                                static_cast<double>(config.runs * std::max<std::size_t>(1, config.train.epochs));
    report.timing.total_s = seconds_since(t0);
    report.timing.peak_memory_bytes = peak_memory_bytes();
    return report;
}

EvalReport evaluate_protocol(const CondensedGraph& cg, const Graph& original, const ProtocolConfig& config) {
    cg.validate();
    EvalReport r = evaluate_protocol([&] { return reduced_train_data(cg, original); }, original, config);
    r.method = cg.meta.method;
    return r;
}

EvalReport evaluate_protocol(const Graph& reduced, const Graph& original, const ProtocolConfig& config) {
    EvalReport r = evaluate_protocol([&] { return reduced_train_data(reduced, original); }, original, config);
    r.method = "whole";
    return r;
}

SnapshotChoice select_snapshot(std::span<const CondenseCheckpoint> snapshots, const Graph& original,
                               const ProtocolConfig& config) {
    if (snapshots.empty()) {
        throw std::invalid_argument("select_snapshot: no snapshots");
    }
    if (original.val.empty()) {
        throw std::invalid_argument("select_snapshot: original graph has no validation nodes");
    }
    ProtocolConfig single = config;
    single.runs = 1;
    SnapshotChoice choice;
    choice.val_acc.assign(snapshots.size(), -1.0);
    parallel_for(snapshots.size(), [&](std::size_t i) {
        EvalReport r = evaluate_protocol(snapshots[i].graph, original, single);
        choice.val_acc[i] = r.val_mean;
    });
    for (std::size_t i = 0; i < snapshots.size(); ++i) {
        if (choice.val_acc[i] >= choice.val_acc[choice.index]) {
            choice.index = i;
        }
    }
    choice.graph = snapshots[choice.index].graph;
    return choice;
}

// ---- transferability -------------------------------------------------------------

std::vector<HyperGrid::Cell> HyperGrid::cells(Arch arch) const {
    const bool layered = arch == Arch::SGC || arch == Arch::APPNP;
    const std::vector<std::size_t> layer_options = layered ? linear_layers : std::vector<std::size_t>{2};
    const std::vector<double> alpha_options = arch == Arch::APPNP ? alpha : std::vector<double>{ModelSpec{}.alpha};
    std::vector<Cell> out;
    for (std::size_t h : hidden) {
        for (double l : lr) {
            for (double wd : weight_decay) {
                for (double dr : dropout) {
                    for (std::size_t layers : layer_options) {
                        for (double a : alpha_options) {
                            Cell c;
                            c.spec.arch = arch;
                            c.spec.hidden = h;
                            c.spec.dropout = dr;
                            c.spec.layers = layers;
                            c.spec.alpha = a;
                            c.train.lr = l;
                            c.train.weight_decay = wd;
                            c.train.epochs = epochs;
                            out.push_back(c);
                        }
                    }
                }
            }
        }
    }
    return out;
}

json TransferReport::to_json() const {
    json rows = json::array();
    for (const TransferCell& c : cells) {
        rows.push_back(json{{"arch", to_string(c.arch)},
                            {"best_spec", model_spec_json(c.best_spec)},
                            {"best_train", train_json(c.best_train)},
                            {"val_acc", c.val_acc},
                            {"test_acc", c.test_acc},
                            {"whole_test_acc", c.whole_test_acc},
                            {"relative", c.relative},
                            {"failures", c.failures}});
    }
    return json{{"models", rows}};
}

std::string TransferReport::to_csv() const {
    std::ostringstream out;
    out << "model,val_acc,test_acc,whole_test_acc,relative,failures\n";
    for (const TransferCell& c : cells) {
        out << to_string(c.arch) << ',' << format_double(c.val_acc) << ',' << format_double(c.test_acc) << ','
            << format_double(c.whole_test_acc) << ',' << format_double(c.relative) << ',' << c.failures.size()
            << '\n';
    }
    return out.str();
}

namespace {

struct CellScore {
    double val = -1.0;
    double test = 0.0;
    std::string error;
};

CellScore train_and_score(const Substrate& substrate, const Graph& original, const ModelSpec& spec,
                          const TrainConfig& train_config, std::uint64_t seed) {
    CellScore s;
    try {
        TrainData d = substrate();
        TrainResult r = train(spec, d, train_config, seed);
        std::tie(s.val, s.test) = score_on(original, spec, r.params);
        if (std::isnan(s.val)) {
            s.val = 0.0;
        }
    } catch (const std::exception& e) {
        s.val = -1.0;
        s.error = e.what();
    }
    return s;
}

// Index of the best validation score; the first wins ties. Failed cells (val < 0) never win.
std::optional<std::size_t> best_by_val(std::span<const CellScore> scores) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores[i].error.empty() && (!best || scores[i].val > scores[*best].val)) {
            best = i;
        }
    }
    return best;
}

Substrate whole_substrate(const Graph& original, Setting setting) {
    auto tg = std::make_shared<const Graph>(training_graph(original, setting));
    return [tg, &original] { return reduced_train_data(*tg, original); };
}

}  // namespace

TransferReport transferability_matrix(const Substrate& reduced, const Substrate& whole, const Graph& original,
                                      std::span<const Arch> archs, const HyperGrid& grid, std::uint64_t seed) {
    struct Job {
        std::size_t arch;
        std::size_t cell;
        bool on_whole;
    };
    std::vector<std::vector<HyperGrid::Cell>> cells;
    std::vector<Job> jobs;
    for (std::size_t a = 0; a < archs.size(); ++a) {
        cells.push_back(grid.cells(archs[a]));
        if (cells.back().empty()) {
            throw std::invalid_argument("transferability_matrix: empty grid for " + to_string(archs[a]));
        }
        for (std::size_t c = 0; c < cells.back().size(); ++c) {
            jobs.push_back({a, c, false});
            jobs.push_back({a, c, true});
        }
    }
    const std::uint64_t run_seed = mix_seed(seed, 0);
    std::vector<CellScore> scores(jobs.size());
    parallel_for(jobs.size(), [&](std::size_t j) {
        const Job& job = jobs[j];
        const HyperGrid::Cell& cell = cells[job.arch][job.cell];
        scores[j] = train_and_score(job.on_whole ? whole : reduced, original, cell.spec, cell.train, run_seed);
    });

    TransferReport report;
    std::size_t j = 0;
    for (std::size_t a = 0; a < archs.size(); ++a) {
        std::vector<CellScore> red;
        std::vector<CellScore> full;
        TransferCell out;
        out.arch = archs[a];
        for (std::size_t c = 0; c < cells[a].size(); ++c, j += 2) {
            red.push_back(scores[j]);
            full.push_back(scores[j + 1]);
            for (const CellScore* s : {&scores[j], &scores[j + 1]}) {
                if (!s->error.empty()) {
                    out.failures.push_back((s == &scores[j] ? "reduced " : "whole ") +
                                           model_spec_json(cells[a][c].spec).dump() + ": " + s->error);
                }
            }
        }
        const auto br = best_by_val(red);
        const auto bw = best_by_val(full);
        if (br) {
            out.best_spec = cells[a][*br].spec;
            out.best_train = cells[a][*br].train;
            out.val_acc = red[*br].val;
            out.test_acc = red[*br].test;
        }
        if (bw) {
            out.whole_test_acc = full[*bw].test;
        }
        out.relative = br && bw && out.whole_test_acc > 0.0 ? out.test_acc / out.whole_test_acc : nan();
        report.cells.push_back(std::move(out));
    }
    return report;
}

TransferReport transferability_matrix(const CondensedGraph& cg, const Graph& original, std::span<const Arch> archs,
                                      const HyperGrid& grid, std::uint64_t seed, Setting setting) {
    cg.validate();
    return transferability_matrix([&] { return reduced_train_data(cg, original); }, whole_substrate(original, setting),
                                  original, archs, grid, seed);
}

// ---- NAS -----------------------------------------------------------------------------

NasSpace NasSpace::reduced() {
    NasSpace s;
    s.k = {2, 10};
    s.alpha = {0.1, 0.2};
    s.hidden = {16, 64, 256};
    s.activations = {Activation::Relu, Activation::Sigmoid};
    return s;
}

std::vector<ModelSpec> NasSpace::architectures() const {
    std::vector<ModelSpec> out;
    out.reserve(size());
    for (std::size_t k_ : k) {
        for (double a : alpha) {
            for (std::size_t h : hidden) {
                for (Activation act : activations) {
                    ModelSpec s;
                    s.arch = Arch::APPNP;
                    s.k = k_;
                    s.alpha = a;
                    s.hidden = h;
                    s.activation = act;
                    out.push_back(s);
                }
            }
        }
    }
    return out;
}

json NasResult::to_json() const {
    json rows = json::array();
    for (const NasEntry& e : entries) {
        rows.push_back(json{{"spec", model_spec_json(e.spec)},
                            {"cond_val", e.cond_val},
                            {"cond_test", e.cond_test},
                            {"whole_val", e.whole_val},
                            {"whole_test", e.whole_test}});
    }
    return json{{"n_architectures", entries.size()},
                {"top1_index", top1_index},
                {"top1_test", top1_test},
                {"acc_corr", acc_corr},
                {"rank_corr", rank_corr},
                {"architectures", rows}};
}

NasResult nas_summary(std::vector<NasEntry> entries) {
    if (entries.empty()) {
        throw std::invalid_argument("nas_summary: no architectures");
    }
    NasResult r;
    std::vector<double> cv;
    std::vector<double> wv;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        cv.push_back(entries[i].cond_val);
        wv.push_back(entries[i].whole_val);
        if (entries[i].cond_val > entries[r.top1_index].cond_val) {
            r.top1_index = i;
        }
    }
    r.top1_test = entries[r.top1_index].whole_test;
    r.acc_corr = safe_corr(&pearson, cv, wv);
    r.rank_corr = safe_corr(&spearman, cv, wv);
    r.entries = std::move(entries);
    return r;
}

NasResult nas_search(const Substrate& reduced, const Substrate& whole, const Graph& original, const NasSpace& space,
                     const TrainConfig& train_config, std::uint64_t seed) {
    const auto archs = space.architectures();
    if (archs.empty()) {
        throw std::invalid_argument("nas_search: empty search space");
    }
    const std::uint64_t run_seed = mix_seed(seed, 0);
    std::vector<CellScore> scores(2 * archs.size());
    parallel_for(scores.size(), [&](std::size_t j) {
        scores[j] = train_and_score(j % 2 ? whole : reduced, original, archs[j / 2], train_config, run_seed);
    });
    std::vector<NasEntry> entries;
    for (std::size_t i = 0; i < archs.size(); ++i) {
        for (const CellScore& s : {scores[2 * i], scores[2 * i + 1]}) {
            if (!s.error.empty()) {
                throw std::runtime_error("nas_search: " + model_spec_json(archs[i]).dump() + ": " + s.error);
            }
        }
        entries.push_back({archs[i], scores[2 * i].val, scores[2 * i].test, scores[2 * i + 1].val,
                           scores[2 * i + 1].test});
    }
    return nas_summary(std::move(entries));
}

NasResult nas_search(const CondensedGraph& cg, const Graph& original, const NasSpace& space,
                     const TrainConfig& train_config, std::uint64_t seed, Setting setting) {
    cg.validate();
    return nas_search([&] { return reduced_train_data(cg, original); }, whole_substrate(original, setting), original,
                      space, train_config, seed);
}

// ---- reduction orchestration ------------------------------------------------------------

const std::vector<std::string>& reduce_methods() {
    static const std::vector<std::string> methods = {"whole",  "random",    "kcenter", "herding", "cent-d",
                                                     "cent-p", "averaging", "vng",     "gcond",   "gcondx",
                                                     "doscond", "sfgc",     "geom",    "gcsntk"};
    return methods;
}

bool is_condensation_method(const std::string& method) {
    try {
        parse_condense_method(method);
        return true;
    } catch (const std::invalid_argument&) {
        return false;
    }
}

void ReduceConfig::validate() const {
    const auto& ms = reduce_methods();
    if (std::find(ms.begin(), ms.end(), method) == ms.end()) {
        throw std::invalid_argument("unknown reduction method: " + method);
    }
    if (method != "whole" && !budget.rate && !budget.ipc) {
        throw std::invalid_argument("reduction needs a rate or ipc");
    }
    if (budget.rate && (*budget.rate <= 0.0 || *budget.rate > 1.0)) {
        throw std::invalid_argument("rate must lie in (0, 1]");
    }
    if (protocol.runs == 0) {
        throw std::invalid_argument("protocol runs must be positive");
    }
    protocol.model.validate();
    expert_spec.validate();
    if (is_condensation_method(method)) {
        CondenseConfig c = condense;
        c.method = parse_condense_method(method);
        c.validate();
    }
}

json ReduceConfig::to_json() const {
    json j{{"method", method},
           {"setting", to_string(budget.setting)},
           {"select_snapshot", select_snapshot},
           {"protocol", protocol_json(protocol)},
           {"seed", seed}};
    j["rate"] = budget.rate ? json(*budget.rate) : json(nullptr);
    j["ipc"] = budget.ipc ? json(*budget.ipc) : json(nullptr);
    if (is_condensation_method(method)) {
        CondenseConfig c = condense;
        c.method = parse_condense_method(method);
        j["condense"] = json::parse(c.normalized().describe());
        j["experts"] = experts;
        j["expert_epochs"] = expert_epochs;
        j["snapshot_every"] = snapshot_every;
        j["expert_spec"] = model_spec_json(expert_spec);
    }
    return j;
}

std::string ReduceConfig::hash() const { return fnv_hex(to_json().dump()); }

namespace {

ProtocolConfig protocol_from_json(const json& j, ProtocolConfig p) {
    for (const auto& [key, v] : j.items()) {
        if (key == "model") p.model = model_spec_from_json(v);
        else if (key == "runs") p.runs = v.get<std::size_t>();
        else if (key == "seed") p.seed = v.get<std::uint64_t>();
        else if (key == "epochs") p.train.epochs = v.get<std::size_t>();
        else if (key == "lr") p.train.lr = v.get<double>();
        else if (key == "weight_decay") p.train.weight_decay = v.get<double>();
        else if (key == "train") {
            for (const auto& [k2, v2] : v.items()) {
                if (k2 == "epochs") p.train.epochs = v2.get<std::size_t>();
                else if (k2 == "lr") p.train.lr = v2.get<double>();
                else if (k2 == "weight_decay") p.train.weight_decay = v2.get<double>();
                else throw std::invalid_argument("unknown protocol.train key: " + k2);
            }
        } else throw std::invalid_argument("unknown protocol key: " + key);
    }
    return p;
}

}  // namespace

ReduceConfig reduce_config_from_json(const json& j) {
    if (!j.is_object()) {
        throw std::invalid_argument("reduction config must be a JSON object");
    }
    ReduceConfig c;
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "method") c.method = v.get<std::string>();
            else if (key == "rate") c.budget.rate = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
            else if (key == "ipc") c.budget.ipc = v.is_null() ? std::nullopt : std::optional<std::size_t>(v.get<std::size_t>());
            else if (key == "setting") c.budget.setting = parse_setting(v.get<std::string>());
            else if (key == "condense") c.condense = condense_config_from_json(v.dump());
            else if (key == "experts") c.experts = v.get<std::size_t>();
            else if (key == "expert_epochs") c.expert_epochs = v.get<std::size_t>();
            else if (key == "snapshot_every") c.snapshot_every = v.get<std::size_t>();
            else if (key == "expert_spec") c.expert_spec = model_spec_from_json(v);
            else if (key == "select_snapshot") c.select_snapshot = v.get<bool>();
            else if (key == "protocol") c.protocol = protocol_from_json(v, c.protocol);
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else throw std::invalid_argument("unknown config key: " + key);
        }
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("reduction config: ") + e.what());
    }
    if (c.budget.ipc && !j.contains("rate")) {
        c.budget.rate.reset();
    }
    c.validate();
    return c;
}

ReduceResult reduce(const Graph& g, const ReduceConfig& config, const ExpertBuffer* buffer) {
    config.validate();
    const auto t0 = Clock::now();
    ReduceResult out;
    const Graph tg = training_graph(g, config.budget.setting);
    if (config.method == "whole") {
        out.seconds = seconds_since(t0);
        return out;
    }
    out.budget = reduction_budget(config.budget, tg.num_nodes, tg.class_counts(tg.train));
    const std::string& m = config.method;
    CondensedGraph cg;
    if (m == "random" || m == "kcenter" || m == "herding" || m == "cent-d" || m == "cent-p") {
        Selection s;
        if (m == "random") s = select_random(tg, out.budget, config.seed);
        else if (m == "kcenter") s = select_kcenter(tg, out.budget, propagated_features(tg), config.seed);
        else if (m == "herding") s = select_herding(tg, out.budget, propagated_features(tg), config.seed);
        else s = select_centrality(tg, out.budget, m == "cent-d" ? Centrality::Degree : Centrality::PageRank);
        cg = condensed_from_graph(induce_subgraph(tg, s));
        out.selection = std::move(s);
    } else if (m == "averaging") {
        cg = coarsen_averaging(tg, out.budget, config.seed);
    } else if (m == "vng") {
        cg = coarsen_vng(tg, out.budget, config.seed);
    } else {
        CondenseConfig cc = config.condense;
        cc.method = parse_condense_method(m);
        cc.seed = config.seed;
        if (config.select_snapshot) {
            cc.checkpoint_every = std::max<std::size_t>(1, cc.outer_iterations / 10);
        }
        std::optional<ExpertBuffer> built;
        if ((cc.method == CondenseMethod::SFGC || cc.method == CondenseMethod::GEOM) && !buffer) {
            built = build_expert_buffer(tg, config.expert_spec, config.experts, config.expert_epochs,
                                        config.snapshot_every, mix_seed(config.seed, 1));
            buffer = &*built;
        }
        CondenseResult r = condense(tg, out.budget, cc, buffer);
        out.losses = std::move(r.losses);
        if (config.select_snapshot && !r.checkpoints.empty()) {
            SnapshotChoice choice = select_snapshot(r.checkpoints, g, config.protocol);
            out.snapshot_val = std::move(choice.val_acc);
            out.selected_snapshot = choice.index;
            cg = std::move(choice.graph);
        } else {
            cg = std::move(r.graph);
        }
    }
    const std::size_t total = std::accumulate(out.budget.begin(), out.budget.end(), std::size_t{0});
    cg.meta.method = m;
    cg.meta.source = graph_hash(g);
    cg.meta.rate = static_cast<double>(total) / static_cast<double>(tg.num_nodes);
    cg.meta.seed = config.seed;
    cg.meta.config_hash = config.hash();
    out.graph = std::move(cg);
    out.seconds = seconds_since(t0);
    return out;
}

EvalReport evaluate_reduction(const ReduceResult& r, const Graph& g, const ReduceConfig& config,
                              const Graph* inference) {
    const Graph& original = inference ? *inference : g;
    EvalReport report;
    if (r.graph) {
        report = evaluate_protocol(*r.graph, original, config.protocol);
    } else {
        report = evaluate_protocol(training_graph(g, config.budget.setting), original, config.protocol);
    }
    report.method = config.method;
    report.config_hash = config.hash();
    report.timing.preprocess_s += r.seconds;
    return report;
}

// ---- robustness -------------------------------------------------------------------------------

json RobustnessReport::to_json() const {
    json rows = json::array();
    for (const RobustnessCell& c : cells) {
        rows.push_back(json{{"method", c.method},
                            {"corruption", json::parse(c.corruption.describe())},
                            {"clean_acc", c.clean_acc},
                            {"accs", c.accs},
                            {"mean_acc", c.mean_acc},
                            {"perf_drop", c.perf_drop}});
    }
    return json{{"cells", rows}};
}

std::string RobustnessReport::to_csv() const {
    std::ostringstream out;
    out << "method,corruption,rate,scenario,clean_acc,mean_acc,perf_drop\n";
    for (const RobustnessCell& c : cells) {
        out << c.method << ',' << to_string(c.corruption.kind) << ',' << format_double(c.corruption.rate) << ','
            << to_string(c.corruption.scenario) << ',' << format_double(c.clean_acc) << ','
            << format_double(c.mean_acc) << ',' << format_double(c.perf_drop) << '\n';
    }
    return out.str();
}

RobustnessReport robustness_pipeline(const Graph& g, std::span<const ReduceConfig> methods,
                                     std::span<const CorruptionSpec> corruptions, const ModelSpec& surrogate,
                                     const AttackConfig& attack) {
    for (const CorruptionSpec& c : corruptions) {
        c.validate();
    }
    // Corrupted copies are shared by every method.
    std::vector<std::pair<std::size_t, std::size_t>> copies;
    for (std::size_t c = 0; c < corruptions.size(); ++c) {
        for (std::size_t r = 0; r < corruptions[c].repeats; ++r) {
            copies.emplace_back(c, r);
        }
    }
    std::vector<ScenarioInputs> inputs(copies.size());
    parallel_for(copies.size(), [&](std::size_t i) {
        const auto [c, r] = copies[i];
        inputs[i] = apply_scenario(g, corrupt(g, corruptions[c], r, surrogate, attack), corruptions[c].scenario);
    });

    const std::size_t per_method = copies.size() + 1;
    std::vector<double> accs(methods.size() * per_method);
    parallel_for(accs.size(), [&](std::size_t j) {
        const ReduceConfig& m = methods[j / per_method];
        const std::size_t k = j % per_method;
        if (k == 0) {
            accs[j] = evaluate_reduction(reduce(g, m), g, m).mean;
        } else {
            const ScenarioInputs& in = inputs[k - 1];
            accs[j] = evaluate_reduction(reduce(in.training, m), in.training, m, &in.inference).mean;
        }
    });

    RobustnessReport report;
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        const double clean = accs[mi * per_method];
        std::size_t k = 1;
        for (const CorruptionSpec& c : corruptions) {
            RobustnessCell cell;
            cell.method = methods[mi].method;
            cell.corruption = c;
            cell.clean_acc = clean;
            for (std::size_t r = 0; r < c.repeats; ++r, ++k) {
                cell.accs.push_back(accs[mi * per_method + k]);
            }
            cell.mean_acc = mean_stddev(cell.accs).first;
            cell.perf_drop = perf_drop(clean, cell.mean_acc);
            report.cells.push_back(std::move(cell));
        }
    }
    return report;
}

json strip_timing(json j) {
    if (j.is_object()) {
        j.erase("timing");
        for (auto& [key, v] : j.items()) {
            v = strip_timing(std::move(v));
        }
    } else if (j.is_array()) {
        for (auto& v : j) {
            v = strip_timing(std::move(v));
        }
    }
    return j;
}

}  // namespace graphslim
