#include "graphslim/condense.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "graphslim/coarsen.hpp"
#include "graphslim/coreset.hpp"
#include "graphslim/optim.hpp"
#include "json.hpp"

namespace graphslim {

using nlohmann::json;

namespace {

template <typename E>
E parse_enum(const std::string& s, const std::vector<std::pair<const char*, E>>& table, const char* what) {
    for (const auto& [name, value] : table) {
        if (s == name) {
            return value;
        }
    }
    throw std::invalid_argument(std::string("unknown ") + what + ": " + s);
}

template <typename E>
std::string enum_name(E v, const std::vector<std::pair<const char*, E>>& table) {
    for (const auto& [name, value] : table) {
        if (v == value) {
            return name;
        }
    }
    return "?";
}

const std::vector<std::pair<const char*, CondenseMethod>> kMethods = {
    {"gcond", CondenseMethod::GCond}, {"gcondx", CondenseMethod::GCondX}, {"doscond", CondenseMethod::DosCond},
    {"sfgc", CondenseMethod::SFGC},   {"geom", CondenseMethod::GEOM},     {"gcsntk", CondenseMethod::GCSNTK},
};
const std::vector<std::pair<const char*, InitStrategy>> kInits = {
    {"random-sample", InitStrategy::RandomSample},
    {"kcenter", InitStrategy::KCenter},
    {"herding", InitStrategy::Herding},
    {"averaging", InitStrategy::Averaging},
};
const std::vector<std::pair<const char*, WindowPolicy>> kWindows = {
    {"fixed", WindowPolicy::Fixed},
    {"expanding", WindowPolicy::Expanding},
};

bool is_trajectory_method(CondenseMethod m) { return m == CondenseMethod::SFGC || m == CondenseMethod::GEOM; }

}  // namespace

std::string fnv_hex(const std::string& text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::ostringstream out;
    out << std::hex;
    out.width(16);
    out.fill('0');
    out << h;
    return out.str();
}

json model_spec_json(const ModelSpec& s) {
    return json{{"arch", to_string(s.arch)},     {"layers", s.layers}, {"hidden", s.hidden},
                {"dropout", s.dropout},          {"activation", to_string(s.activation)},
                {"k", s.k},                      {"alpha", s.alpha}};
}

ModelSpec model_spec_from_json(const json& j) {
    ModelSpec s;
    for (const auto& [key, value] : j.items()) {
        if (key == "arch") {
            s.arch = parse_arch(value.get<std::string>());
        } else if (key == "layers") {
            s.layers = value.get<std::size_t>();
        } else if (key == "hidden") {
            s.hidden = value.get<std::size_t>();
        } else if (key == "dropout") {
            s.dropout = value.get<double>();
        } else if (key == "activation") {
            s.activation = parse_activation(value.get<std::string>());
        } else if (key == "k") {
            s.k = value.get<std::size_t>();
        } else if (key == "alpha") {
            s.alpha = value.get<double>();
        } else {
            throw std::invalid_argument("unknown model key: " + key);
        }
    }
    s.validate();
    return s;
}

namespace {

std::vector<std::size_t> weight_indices(const Params& p) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p.names[i].find(".bias") == std::string::npos) {
            out.push_back(i);
        }
    }
    return out;
}

CondensedGraph make_output(const Graph& g, const Tensor& features, std::optional<Tensor> adjacency,
                           std::vector<int> labels, const CondenseConfig& config) {
    CondensedGraph cg;
    cg.features = features;
    cg.adjacency = std::move(adjacency);
    cg.labels = std::move(labels);
    cg.num_classes = g.num_classes;
    cg.meta.method = to_string(config.method);
    cg.meta.source = graph_hash(g);
    cg.meta.rate = static_cast<double>(features.rows()) / static_cast<double>(g.num_nodes);
    cg.meta.seed = config.seed;
    cg.meta.config_hash = config.hash();
    cg.delta = config.delta;
    return cg;
}

void check_finite(const Tensor& t, const char* what, std::size_t iteration) {
    if (!t.all_finite()) {
        throw NumericalError(std::string(what) + " became non-finite at iteration " + std::to_string(iteration));
    }
}

// Soft targets from learnable logits, or one-hot constants.
Var targets(Tape& tape, std::optional<Var> label_logits, std::span<const int> labels, std::size_t classes) {
    if (label_logits) {
        return exp(log_softmax(*label_logits));
    }
    return tape.constant(one_hot(labels, classes));
}

Var soft_cross_entropy(Var logits, Var targets) {
    const double m = static_cast<double>(logits.rows());
    return affine(sum(mul(targets, log_softmax(logits))), -1.0 / m);
}

}  // namespace

CondenseMethod parse_condense_method(const std::string& s) { return parse_enum(s, kMethods, "condensation method"); }
std::string to_string(CondenseMethod m) { return enum_name(m, kMethods); }
InitStrategy parse_init_strategy(const std::string& s) { return parse_enum(s, kInits, "initialization strategy"); }
std::string to_string(InitStrategy s) { return enum_name(s, kInits); }
WindowPolicy parse_window_policy(const std::string& s) { return parse_enum(s, kWindows, "window policy"); }
std::string to_string(WindowPolicy w) { return enum_name(w, kWindows); }

bool is_structure_method(CondenseMethod m) { return m == CondenseMethod::GCond || m == CondenseMethod::DosCond; }

// ---- config -----------------------------------------------------------------

void CondenseConfig::validate() const {
    backbone.validate();
    if (outer_iterations == 0) {
        throw std::invalid_argument("outer_iterations must be positive");
    }
    if (match_steps == 0) {
        throw std::invalid_argument("match_steps must be positive");
    }
    for (double lr : {lr_features, lr_structure, lr_labels, lr_model, student_lr}) {
        if (!(lr > 0.0) || !std::isfinite(lr)) {
            throw std::invalid_argument("learning rates must be positive and finite");
        }
    }
    if (structure_hidden == 0) {
        throw std::invalid_argument("structure_hidden must be positive");
    }
    if (!(delta >= 0.0 && delta <= 1.0)) {
        throw std::invalid_argument("delta must lie in [0, 1]");
    }
    if (soft_labels && !is_trajectory_method(method)) {
        throw std::invalid_argument("soft labels are only learned by trajectory matching (sfgc, geom)");
    }
    if (method == CondenseMethod::GCSNTK && !(epsilon > 0.0)) {
        throw std::invalid_argument("kernel ridge epsilon must be positive");
    }
    if (class_sample_cap == 0) {
        throw std::invalid_argument("class_sample_cap must be positive");
    }
}

CondenseConfig CondenseConfig::normalized() const {
    CondenseConfig c = *this;
    if (method == CondenseMethod::GCondX || method == CondenseMethod::DosCond) {
        c.inner_steps = 0;
    }
    if (method == CondenseMethod::DosCond) {
        c.match_steps = 1;
    }
    return c;
}

std::string CondenseConfig::describe() const {
    json j{{"method", to_string(method)},
           {"outer_iterations", outer_iterations},
           {"match_steps", match_steps},
           {"inner_steps", inner_steps},
           {"backbone", model_spec_json(backbone)},
           {"lr_features", lr_features},
           {"lr_structure", lr_structure},
           {"lr_labels", lr_labels},
           {"lr_model", lr_model},
           {"structure_hidden", structure_hidden},
           {"delta", delta},
           {"student_steps", student_steps},
           {"expert_span", expert_span},
           {"max_start", max_start},
           {"student_lr", student_lr},
           {"window", to_string(window)},
           {"soft_labels", soft_labels},
           {"epsilon", epsilon},
           {"kernel_depth", kernel_depth},
           {"init", to_string(init)},
           {"class_sample_cap", class_sample_cap},
           {"hops", hops},
           {"checkpoint_every", checkpoint_every},
           {"seed", seed}};
    return j.dump();
}

std::string CondenseConfig::hash() const { return fnv_hex(normalized().describe()); }

CondenseConfig condense_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("condense config: ") + e.what());
    }
    if (!j.is_object()) {
        throw std::invalid_argument("condense config must be a JSON object");
    }
    CondenseConfig c;
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "method") c.method = parse_condense_method(v.get<std::string>());
            else if (key == "outer_iterations") c.outer_iterations = v.get<std::size_t>();
            else if (key == "match_steps") c.match_steps = v.get<std::size_t>();
            else if (key == "inner_steps") c.inner_steps = v.get<std::size_t>();
            else if (key == "backbone") c.backbone = model_spec_from_json(v);
            else if (key == "lr_features") c.lr_features = v.get<double>();
            else if (key == "lr_structure") c.lr_structure = v.get<double>();
            else if (key == "lr_labels") c.lr_labels = v.get<double>();
            else if (key == "lr_model") c.lr_model = v.get<double>();
            else if (key == "structure_hidden") c.structure_hidden = v.get<std::size_t>();
            else if (key == "delta") c.delta = v.get<double>();
            else if (key == "student_steps") c.student_steps = v.get<std::size_t>();
            else if (key == "expert_span") c.expert_span = v.get<std::size_t>();
            else if (key == "max_start") c.max_start = v.get<std::size_t>();
            else if (key == "student_lr") c.student_lr = v.get<double>();
            else if (key == "window") c.window = parse_window_policy(v.get<std::string>());
            else if (key == "soft_labels") c.soft_labels = v.get<bool>();
            else if (key == "epsilon") c.epsilon = v.get<double>();
            else if (key == "kernel_depth") c.kernel_depth = v.get<std::size_t>();
            else if (key == "init") c.init = parse_init_strategy(v.get<std::string>());
            else if (key == "class_sample_cap") c.class_sample_cap = v.get<std::size_t>();
            else if (key == "hops") c.hops = v.get<std::size_t>();
            else if (key == "checkpoint_every") c.checkpoint_every = v.get<std::size_t>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else throw std::invalid_argument("unknown condense config key: " + key);
        }
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("condense config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---- initialization ---------------------------------------------------------

CondensedGraph init_synthetic(const Graph& g, std::span<const std::size_t> budget, InitStrategy strategy,
                              std::uint64_t seed) {
    CondensedGraph cg;
    cg.num_classes = g.num_classes;
    if (strategy == InitStrategy::Averaging) {
        CondensedGraph avg = coarsen_averaging(g, budget, seed);
        cg.features = std::move(avg.features);
        cg.labels = std::move(avg.labels);
    } else {
        Selection s;
        switch (strategy) {
            case InitStrategy::RandomSample: s = select_random(g, budget, seed); break;
            case InitStrategy::KCenter: s = select_kcenter(g, budget, propagated_features(g), seed); break;
            case InitStrategy::Herding: s = select_herding(g, budget, propagated_features(g), seed); break;
            case InitStrategy::Averaging: break;
        }
        cg.features = Tensor(s.ids.size(), g.num_features());
        for (std::size_t r = 0; r < s.ids.size(); ++r) {
            std::copy(g.features.row(s.ids[r]).begin(), g.features.row(s.ids[r]).end(), cg.features.row(r).begin());
            cg.labels.push_back(g.labels[s.ids[r]]);
        }
    }
    cg.meta.method = "init:" + to_string(strategy);
    cg.meta.seed = seed;
    return cg;
}

Tensor one_hot(std::span<const int> labels, std::size_t num_classes) {
    Tensor t(labels.size(), num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
            throw std::invalid_argument("one_hot: label out of range");
        }
        t(i, static_cast<std::size_t>(labels[i])) = 1.0;
    }
    return t;
}

// ---- gradient matching ------------------------------------------------------

Var gm_distance(std::span<const Var> a, std::span<const Var> b) {
    if (a.size() != b.size() || a.empty()) {
        throw std::invalid_argument("gm_distance: layer counts differ or are zero");
    }
    Tape& tape = a[0].tape();
    Var total = tape.constant(Tensor::scalar(0.0));
    double constant_part = 0.0;
    for (std::size_t l = 0; l < a.size(); ++l) {
        if (a[l].rows() != b[l].rows() || a[l].cols() != b[l].cols()) {
            throw std::invalid_argument("gm_distance: shape mismatch at layer " + std::to_string(l) + " (" +
                                        shape_string(a[l].value()) + " vs " + shape_string(b[l].value()) + ")");
        }
        const Tensor& av = a[l].value();
        const Tensor& bv = b[l].value();
        auto valid = std::make_shared<std::vector<std::size_t>>();
        for (std::size_t c = 0; c < av.cols(); ++c) {
            double na = 0.0;
            double nb = 0.0;
            for (std::size_t r = 0; r < av.rows(); ++r) {
                na += av(r, c) * av(r, c);
                nb += bv(r, c) * bv(r, c);
            }
            if (na > 0.0 && nb > 0.0) {
                valid->push_back(c);
            } else if (na > 0.0 || nb > 0.0) {
                constant_part += 1.0;
            }
        }
        if (valid->empty()) {
            continue;
        }
        Var ga = valid->size() == av.cols() ? a[l] : gather_cols(a[l], valid);
        Var gb = valid->size() == av.cols() ? b[l] : gather_cols(b[l], valid);
        Var dots = col_sum(mul(ga, gb));
        Var norms = pow(mul(col_sum(mul(ga, ga)), col_sum(mul(gb, gb))), 0.5);
        Var cos_sum = sum(div(dots, norms));
        total = add(total, affine(cos_sum, -1.0, static_cast<double>(valid->size())));
    }
    return affine(total, 1.0, constant_part);
}

double gm_distance(std::span<const Tensor> a, std::span<const Tensor> b) {
    Tape tape;
    std::vector<Var> va;
    std::vector<Var> vb;
    for (const Tensor& t : a) va.push_back(tape.constant(t));
    for (const Tensor& t : b) vb.push_back(tape.constant(t));
    return gm_distance(va, vb).value().item();
}

StructureGenerator init_structure_generator(std::size_t feature_dim, std::size_t hidden, std::uint64_t seed) {
    ModelSpec mlp;
    mlp.layers = 2;
    mlp.hidden = hidden;
    StructureGenerator phi;
    phi.params = init_params(mlp, 2 * feature_dim, 1, seed);
    return phi;
}

Var gen_structure(std::span<const Var> phi, Var features) {
    if (phi.size() != 4) {
        throw std::invalid_argument("gen_structure: expected W1, b1, W2, b2");
    }
    const std::size_t m = features.rows();
    const std::size_t d = features.cols();
    if (phi[0].rows() != 2 * d) {
        throw std::invalid_argument("gen_structure: generator expects " + std::to_string(phi[0].rows() / 2) +
                                    " features, got " + std::to_string(d));
    }
    std::vector<std::size_t> top(d);
    std::iota(top.begin(), top.end(), 0);
    std::vector<std::size_t> bottom(d);
    std::iota(bottom.begin(), bottom.end(), d);
    Var p = matmul(features, gather_rows(phi[0], std::move(top)));
    Var q = matmul(features, gather_rows(phi[0], std::move(bottom)));
    auto rows_i = std::make_shared<std::vector<std::size_t>>(m * m);
    auto rows_j = std::make_shared<std::vector<std::size_t>>(m * m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            (*rows_i)[i * m + j] = i;
            (*rows_j)[i * m + j] = j;
        }
    }
    Var h = relu(add(add(gather_rows(p, rows_i), gather_rows(q, rows_j)), broadcast_rows(phi[1], m * m)));
    Var logits = reshape(add(matmul(h, phi[2]), broadcast_rows(phi[3], m * m)), m, m);
    Var sym = affine(add(logits, transpose(logits)), 0.5);
    Tensor off_diag(m, m, 1.0);
    for (std::size_t i = 0; i < m; ++i) {
        off_diag(i, i) = 0.0;
    }
    return mul_const(sigmoid(sym), std::move(off_diag));
}

Tensor gen_structure(const StructureGenerator& phi, const Tensor& features) {
    Tape tape;
    auto vars = bind_params(tape, phi.params, false);
    return gen_structure(vars, tape.constant(features)).value();
}

namespace {

// Per-class slice of the original training signal: centre rows inside a hop-closed node set.
struct ClassSignal {
    GraphOperator op;
    NodeInput features;
    std::vector<std::size_t> rows;
    std::vector<int> labels;
};

class RealSignal {
  public:
    RealSignal(const Graph& g, const CondenseConfig& config)
        : g_(g), config_(config), full_(GraphOperator::from_graph(g)), neighbours_(g.num_nodes),
          by_class_(g.num_classes), cache_(g.num_classes) {
        for (const Edge& e : g.edges) {
            neighbours_[e.u].push_back(e.v);
            neighbours_[e.v].push_back(e.u);
        }
        for (std::size_t i : g.train) {
            by_class_[static_cast<std::size_t>(g.labels[i])].push_back(i);
        }
    }

    std::size_t num_classes() const { return by_class_.size(); }
    bool empty(std::size_t c) const { return by_class_[c].empty(); }

    const ClassSignal& get(std::size_t c, std::mt19937_64& rng) {
        const auto& members = by_class_[c];
        if (members.size() <= config_.class_sample_cap) {
            if (!cache_[c]) {
                cache_[c] = build(members);
            }
            return *cache_[c];
        }
        std::vector<std::size_t> pick = members;
        std::shuffle(pick.begin(), pick.end(), rng);
        pick.resize(config_.class_sample_cap);
        std::sort(pick.begin(), pick.end());
        scratch_ = build(pick);
        return *scratch_;
    }

  private:
    ClassSignal build(const std::vector<std::size_t>& centres) const {
        std::set<std::size_t> closed(centres.begin(), centres.end());
        std::vector<std::size_t> frontier = centres;
        for (std::size_t h = 0; h < config_.hops; ++h) {
            std::vector<std::size_t> next;
            for (std::size_t u : frontier) {
                for (std::size_t v : neighbours_[u]) {
                    if (closed.insert(v).second) {
                        next.push_back(v);
                    }
                }
            }
            frontier = std::move(next);
        }
        std::vector<std::size_t> ids(closed.begin(), closed.end());
        Tensor x(ids.size(), g_.num_features());
        for (std::size_t r = 0; r < ids.size(); ++r) {
            std::copy(g_.features.row(ids[r]).begin(), g_.features.row(ids[r]).end(), x.row(r).begin());
        }
        ClassSignal s{full_.restrict_to(ids), NodeInput::constant(x), {}, {}};
        for (std::size_t u : centres) {
            s.rows.push_back(static_cast<std::size_t>(std::lower_bound(ids.begin(), ids.end(), u) - ids.begin()));
            s.labels.push_back(g_.labels[u]);
        }
        return s;
    }

    const Graph& g_;
    const CondenseConfig& config_;
    GraphOperator full_;
    std::vector<std::vector<std::size_t>> neighbours_;
    std::vector<std::vector<std::size_t>> by_class_;
    std::vector<std::optional<ClassSignal>> cache_;
    std::optional<ClassSignal> scratch_;
};

std::vector<std::vector<Tensor>> real_gradients(const ModelSpec& spec, const Params& theta, RealSignal& real,
                                                std::mt19937_64& rng) {
    const auto widx = weight_indices(theta);
    std::vector<std::vector<Tensor>> out(real.num_classes());
    for (std::size_t c = 0; c < real.num_classes(); ++c) {
        if (real.empty(c)) {
            continue;
        }
        const ClassSignal& s = real.get(c, rng);
        Tape tape;
        auto vars = bind_params(tape, theta);
        Var loss = cross_entropy(forward(spec, vars, s.op, s.features), s.rows, s.labels);
        auto grads = backward(tape, loss);
        for (std::size_t i : widx) {
            out[c].push_back(std::move(grads.at(vars[i].id())));
        }
    }
    return out;
}

// Sum over classes of the matching distance, recorded on `tape`.
Var synthetic_distance(const ModelSpec& spec, const Params& theta, const GraphOperator& op, Var features,
                       const std::vector<std::vector<std::size_t>>& syn_rows,
                       const std::vector<std::vector<Tensor>>& real) {
    Tape& tape = features.tape();
    const auto widx = weight_indices(theta);
    auto vars = bind_params(tape, theta);
    Var logits = forward(spec, vars, op, NodeInput::variable(features));
    std::vector<Var> wrt;
    for (std::size_t i : widx) {
        wrt.push_back(vars[i]);
    }
    Var total = tape.constant(Tensor::scalar(0.0));
    for (std::size_t c = 0; c < real.size(); ++c) {
        if (real[c].empty() || syn_rows[c].empty()) {
            continue;
        }
        std::vector<int> labels(syn_rows[c].size(), static_cast<int>(c));
        Var loss = cross_entropy(logits, syn_rows[c], labels);
        auto syn = tape.grad(loss, wrt);
        std::vector<Var> target;
        for (const Tensor& t : real[c]) {
            target.push_back(tape.constant(t));
        }
        total = add(total, gm_distance(target, syn));
    }
    return total;
}

std::vector<std::vector<std::size_t>> rows_by_class(std::span<const int> labels, std::size_t classes) {
    std::vector<std::vector<std::size_t>> out(classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        out[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    return out;
}

}  // namespace

double gm_objective(const Graph& g, const CondensedGraph& s, const CondenseConfig& config, std::uint64_t init_seed) {
    RealSignal real(g, config);
    std::mt19937_64 rng(mix_seed(config.seed, 7));
    Params theta = init_params(config.backbone, g.num_features(), g.num_classes, init_seed);
    auto targets_real = real_gradients(config.backbone, theta, real, rng);
    Tape tape;
    Var x = tape.constant(s.features);
    GraphOperator op = s.adjacency ? GraphOperator::dense(tape.constant(*s.adjacency)) : GraphOperator::identity(s.num_nodes());
    return synthetic_distance(config.backbone, theta, op, x, rows_by_class(s.labels, g.num_classes), targets_real)
        .value()
        .item();
}

CondenseResult condense_gm(const Graph& g, std::span<const std::size_t> budget, const CondenseConfig& raw_config) {
    raw_config.validate();
    const CondenseConfig config = raw_config.normalized();
    if (config.method != CondenseMethod::GCond && config.method != CondenseMethod::GCondX &&
        config.method != CondenseMethod::DosCond) {
        throw std::invalid_argument("condense_gm: method must be gcond, gcondx or doscond");
    }
    const bool structure = is_structure_method(config.method);
    CondensedGraph init = init_synthetic(g, budget, config.init, mix_seed(config.seed, 1));
    Tensor x = init.features;
    const std::vector<int> labels = init.labels;
    const auto syn_rows = rows_by_class(labels, g.num_classes);
    StructureGenerator phi;
    if (structure) {
        phi = init_structure_generator(g.num_features(), config.structure_hidden, mix_seed(config.seed, 2));
    }
    AdamState adam_x(AdamHyper{.lr = config.lr_features});
    AdamState adam_phi(AdamHyper{.lr = config.lr_structure});
    RealSignal real(g, config);
    std::mt19937_64 rng(mix_seed(config.seed, 7));

    auto current = [&]() {
        std::optional<Tensor> adj;
        if (structure) {
            adj = gen_structure(phi, x);
        }
        return make_output(g, x, std::move(adj), labels, config);
    };

    CondenseResult result;
    for (std::size_t it = 0; it < config.outer_iterations; ++it) {
        Params theta = init_params(config.backbone, g.num_features(), g.num_classes, mix_seed(mix_seed(config.seed, 3), it));
        AdamState adam_model(AdamHyper{.lr = config.lr_model});
        const bool update_structure = structure && it % 2 == 1;
        for (std::size_t step = 0; step < config.match_steps; ++step) {
            auto real_grads = real_gradients(config.backbone, theta, real, rng);
            Tape tape;
            Var xv = tape.leaf(x, !update_structure);
            std::vector<Var> phi_vars;
            std::optional<GraphOperator> op;
            if (structure) {
                phi_vars = bind_params(tape, phi.params, update_structure);
                op = GraphOperator::dense(gen_structure(phi_vars, xv));
            } else {
                op = GraphOperator::identity(x.rows());
            }
            Var loss = synthetic_distance(config.backbone, theta, *op, xv, syn_rows, real_grads);
            if (!std::isfinite(loss.value().item())) {
                throw NumericalError("gradient matching loss is not finite at iteration " + std::to_string(it));
            }
            if (step == 0) {
                result.losses.push_back(loss.value().item());
            }
            auto grads = backward(tape, loss);
            if (update_structure) {
                std::vector<Tensor> gphi;
                for (const Var& v : phi_vars) {
                    gphi.push_back(std::move(grads.at(v.id())));
                }
                adam_step(phi.params.values, gphi, adam_phi);
                for (const Tensor& t : phi.params.values) {
                    check_finite(t, "structure generator", it);
                }
            } else {
                std::vector<Tensor> gx{std::move(grads.at(xv.id()))};
                adam_step(std::span<Tensor>(&x, 1), gx, adam_x);
                check_finite(x, "synthetic features", it);
            }
            if (config.inner_steps == 0 || step + 1 == config.match_steps) {
                continue;
            }
            // Inner loop: fit the backbone on the current condensed graph.
            GraphOperator inner_op = structure ? GraphOperator::dense_constant(gen_structure(phi, x)) : GraphOperator::identity(x.rows());
            NodeInput inner_x = NodeInput::constant(x);
            std::vector<std::size_t> all_rows(x.rows());
            std::iota(all_rows.begin(), all_rows.end(), 0);
            for (std::size_t k = 0; k < config.inner_steps; ++k) {
                Tape inner;
                auto vars = bind_params(inner, theta);
                Var l = cross_entropy(forward(config.backbone, vars, inner_op, inner_x), all_rows, labels);
                auto gmap = backward(inner, l);
                std::vector<Tensor> gt;
                for (const Var& v : vars) {
                    gt.push_back(std::move(gmap.at(v.id())));
                }
                adam_step(theta.values, gt, adam_model);
            }
        }
        if (config.checkpoint_every > 0 && (it + 1) % config.checkpoint_every == 0) {
            result.checkpoints.push_back({it + 1, current()});
        }
    }
    result.graph = current();
    result.graph.validate();
    return result;
}

// ---- expert buffer and trajectory matching ----------------------------------

void ExpertBuffer::validate() const {
    if (trajectories.empty()) {
        throw std::invalid_argument("expert buffer is empty");
    }
    if (seeds.size() != trajectories.size()) {
        throw std::invalid_argument("expert buffer: one seed per trajectory expected");
    }
    const std::size_t len = trajectories[0].snapshots.size();
    for (const Trajectory& t : trajectories) {
        if (t.snapshots.size() != len || len == 0) {
            throw std::invalid_argument("expert buffer: trajectories differ in length");
        }
        for (std::size_t k = 0; k < len; ++k) {
            if (t.snapshots[k].epoch != trajectories[0].snapshots[k].epoch) {
                throw std::invalid_argument("expert buffer: trajectories differ in snapshot interval");
            }
        }
    }
}

bool operator==(const ExpertBuffer& a, const ExpertBuffer& b) {
    if (a.spec.describe() != b.spec.describe() || a.snapshot_every != b.snapshot_every || a.epochs != b.epochs ||
        a.source_hash != b.source_hash || a.seeds != b.seeds || a.trajectories.size() != b.trajectories.size()) {
        return false;
    }
    for (std::size_t e = 0; e < a.trajectories.size(); ++e) {
        const auto& sa = a.trajectories[e].snapshots;
        const auto& sb = b.trajectories[e].snapshots;
        if (sa.size() != sb.size()) {
            return false;
        }
        for (std::size_t k = 0; k < sa.size(); ++k) {
            if (sa[k].epoch != sb[k].epoch || sa[k].val_acc != sb[k].val_acc || !(sa[k].params == sb[k].params)) {
                return false;
            }
        }
    }
    return true;
}

ExpertBuffer build_expert_buffer(const Graph& g, const ModelSpec& spec, std::size_t n_experts, std::size_t epochs,
                                 std::size_t snapshot_every, std::uint64_t seed, const TrainConfig& base) {
    if (n_experts == 0) {
        throw std::invalid_argument("build_expert_buffer: n_experts must be at least 1");
    }
    if (snapshot_every == 0 || epochs == 0) {
        throw std::invalid_argument("build_expert_buffer: epochs and snapshot_every must be positive");
    }
    ExpertBuffer buf;
    buf.spec = spec;
    buf.snapshot_every = snapshot_every;
    buf.epochs = epochs;
    buf.source_hash = graph_hash(g);
    TrainConfig tc = base;
    tc.epochs = epochs;
    tc.snapshot_every = snapshot_every;
    const TrainData data = train_data(g);
    for (std::size_t e = 0; e < n_experts; ++e) {
        const std::uint64_t s = mix_seed(seed, e + 1);
        buf.seeds.push_back(s);
        buf.trajectories.push_back(train(spec, data, tc, s).trajectory);
    }
    return buf;
}

void save_expert_buffer(const ExpertBuffer& buffer, const std::filesystem::path& dir) {
    buffer.validate();
    std::filesystem::create_directories(dir);
    json manifest{{"spec", model_spec_json(buffer.spec)},
                  {"snapshot_every", buffer.snapshot_every},
                  {"epochs", buffer.epochs},
                  {"source_hash", buffer.source_hash},
                  {"seeds", buffer.seeds},
                  {"experts", buffer.trajectories.size()}};
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
    for (std::size_t e = 0; e < buffer.trajectories.size(); ++e) {
        std::ofstream out(dir / ("expert_" + std::to_string(e) + ".txt"));
        for (const Snapshot& s : buffer.trajectories[e].snapshots) {
            out << "snapshot " << s.epoch << ' ' << format_double(s.val_acc) << ' ' << s.params.size() << '\n';
            for (std::size_t p = 0; p < s.params.size(); ++p) {
                const Tensor& t = s.params.values[p];
                out << s.params.names[p] << ' ' << t.rows() << ' ' << t.cols() << '\n';
                for (std::size_t i = 0; i < t.size(); ++i) {
                    out << (i ? " " : "") << format_double(t[i]);
                }
                out << '\n';
            }
        }
        if (!out) {
            throw std::runtime_error("failed writing expert " + std::to_string(e));
        }
    }
}

ExpertBuffer load_expert_buffer(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) {
        throw DataError("missing file: " + (dir / "manifest.json").string());
    }
    ExpertBuffer buf;
    std::size_t experts = 0;
    try {
        json m = json::parse(in);
        buf.spec = model_spec_from_json(m.at("spec"));
        buf.snapshot_every = m.at("snapshot_every").get<std::size_t>();
        buf.epochs = m.at("epochs").get<std::size_t>();
        buf.source_hash = m.at("source_hash").get<std::string>();
        buf.seeds = m.at("seeds").get<std::vector<std::uint64_t>>();
        experts = m.at("experts").get<std::size_t>();
    } catch (const json::exception& e) {
        throw DataError(std::string("manifest.json: ") + e.what());
    }
    for (std::size_t e = 0; e < experts; ++e) {
        const auto path = dir / ("expert_" + std::to_string(e) + ".txt");
        std::ifstream f(path);
        if (!f) {
            throw DataError("missing file: " + path.string());
        }
        Trajectory traj;
        std::string tag;
        while (f >> tag) {
            if (tag != "snapshot") {
                throw DataError(path.string() + ": expected 'snapshot', got '" + tag + "'");
            }
            Snapshot s;
            std::string acc;
            std::size_t count = 0;
            f >> s.epoch >> acc >> count;
            s.val_acc = parse_double(acc);
            for (std::size_t p = 0; p < count; ++p) {
                std::string name;
                std::size_t rows = 0;
                std::size_t cols = 0;
                f >> name >> rows >> cols;
                Tensor t(rows, cols);
                for (std::size_t i = 0; i < t.size(); ++i) {
                    std::string v;
                    f >> v;
                    t[i] = parse_double(v);
                }
                s.params.names.push_back(name);
                s.params.values.push_back(std::move(t));
            }
            if (!f) {
                throw DataError(path.string() + ": truncated snapshot");
            }
            traj.snapshots.push_back(std::move(s));
        }
        buf.trajectories.push_back(std::move(traj));
    }
    buf.validate();
    return buf;
}

namespace {

// Unrolled student training from `start`; returns the normalized parameter distance on the tape.
Var tm_loss(const ExpertBuffer& buffer, const CondenseConfig& config, std::size_t expert, std::size_t start,
            Var features, Var soft_targets) {
    Tape& tape = features.tape();
    const auto& snaps = buffer.trajectories.at(expert).snapshots;
    const std::size_t target = start + config.expert_span;
    if (target >= snaps.size()) {
        throw std::invalid_argument("trajectory window exceeds the expert trajectory (" + std::to_string(target + 1) +
                                    " > " + std::to_string(snaps.size()) + " snapshots)");
    }
    ModelSpec spec = buffer.spec;
    spec.dropout = 0.0;
    const GraphOperator op = GraphOperator::identity(features.rows());
    const NodeInput input = NodeInput::variable(features);
    std::vector<Var> theta = bind_params(tape, snaps[start].params);
    for (std::size_t k = 0; k < config.student_steps; ++k) {
        Var loss = soft_cross_entropy(forward(spec, theta, op, input), soft_targets);
        auto grads = tape.grad(loss, theta);
        for (std::size_t p = 0; p < theta.size(); ++p) {
            theta[p] = sub(theta[p], affine(grads[p], config.student_lr));
        }
    }
    Var num = tape.constant(Tensor::scalar(0.0));
    double den = 0.0;
    for (std::size_t p = 0; p < theta.size(); ++p) {
        const Tensor& goal = snaps[target].params.values[p];
        num = add(num, sum(pow(sub(theta[p], tape.constant(goal)), 2.0)));
        const Tensor& from = snaps[start].params.values[p];
        for (std::size_t i = 0; i < goal.size(); ++i) {
            den += (from[i] - goal[i]) * (from[i] - goal[i]);
        }
    }
    return affine(num, 1.0 / (den + 1e-12));
}

}  // namespace

double tm_objective(const CondensedGraph& s, const ExpertBuffer& buffer, const CondenseConfig& config,
                    std::size_t expert, std::size_t start) {
    Tape tape;
    Var x = tape.constant(s.features);
    Var y = s.soft_labels ? tape.constant(*s.soft_labels) : tape.constant(one_hot(s.labels, s.num_classes));
    return tm_loss(buffer, config, expert, start, x, y).value().item();
}

CondenseResult condense_tm(const Graph& g, std::span<const std::size_t> budget, const ExpertBuffer& buffer,
                           const CondenseConfig& config) {
    config.validate();
    buffer.validate();
    if (!is_trajectory_method(config.method)) {
        throw std::invalid_argument("condense_tm: method must be sfgc or geom");
    }
    if (buffer.trajectories[0].snapshots.front().params.values.front().rows() != g.num_features()) {
        throw std::invalid_argument("condense_tm: expert buffer was trained on a different feature dimension");
    }
    const std::size_t len = buffer.trajectories[0].snapshots.size();
    if (config.expert_span >= len) {
        throw std::invalid_argument("trajectory window exceeds the expert trajectory: span " +
                                    std::to_string(config.expert_span) + " with " + std::to_string(len) + " snapshots");
    }
    CondensedGraph init = init_synthetic(g, budget, config.init, mix_seed(config.seed, 1));
    Tensor x = init.features;
    const std::vector<int> labels = init.labels;
    std::optional<Tensor> label_logits;
    if (config.soft_labels) {
        label_logits = one_hot(labels, g.num_classes);
        for (double& v : label_logits->values()) {
            v *= 5.0;
        }
    }
    AdamState adam_x(AdamHyper{.lr = config.lr_features});
    AdamState adam_y(AdamHyper{.lr = config.lr_labels});
    std::mt19937_64 rng(mix_seed(config.seed, 4));
    const std::size_t last_start = len - 1 - config.expert_span;

    auto current = [&]() {
        CondensedGraph cg = make_output(g, x, std::nullopt, labels, config);
        if (label_logits) {
            Tape t;
            cg.soft_labels = exp(log_softmax(t.constant(*label_logits))).value();
        }
        return cg;
    };

    CondenseResult result;
    for (std::size_t it = 0; it < config.outer_iterations; ++it) {
        std::size_t hi = std::min(config.max_start, last_start);
        if (config.window == WindowPolicy::Expanding) {
            const double frac = config.outer_iterations > 1
                                    ? static_cast<double>(it) / static_cast<double>(config.outer_iterations - 1)
                                    : 1.0;
            hi = static_cast<std::size_t>(std::floor(frac * static_cast<double>(last_start)));
        }
        const std::size_t expert = std::uniform_int_distribution<std::size_t>(0, buffer.trajectories.size() - 1)(rng);
        const std::size_t start = std::uniform_int_distribution<std::size_t>(0, hi)(rng);

        Tape tape;
        Var xv = tape.leaf(x);
        std::optional<Var> zv;
        if (label_logits) {
            zv = tape.leaf(*label_logits);
        }
        Var loss = tm_loss(buffer, config, expert, start, xv, targets(tape, zv, labels, g.num_classes));
        if (!std::isfinite(loss.value().item())) {
            throw NumericalError("trajectory matching loss is not finite at iteration " + std::to_string(it));
        }
        result.losses.push_back(loss.value().item());
        auto grads = backward(tape, loss);
        std::vector<Tensor> gx{std::move(grads.at(xv.id()))};
        adam_step(std::span<Tensor>(&x, 1), gx, adam_x);
        check_finite(x, "synthetic features", it);
        if (zv) {
            std::vector<Tensor> gz{std::move(grads.at(zv->id()))};
            adam_step(std::span<Tensor>(&*label_logits, 1), gz, adam_y);
            check_finite(*label_logits, "soft labels", it);
        }
        if (config.checkpoint_every > 0 && (it + 1) % config.checkpoint_every == 0) {
            result.checkpoints.push_back({it + 1, current()});
        }
    }
    result.graph = current();
    result.graph.validate();
    return result;
}

// ---- kernel ridge regression ------------------------------------------------

namespace {

constexpr double kSaturated = 1.0 - 1e-9;

Var aggregate(Var sigma, const SparseOperatorPtr& left, const SparseOperatorPtr& right) {
    if (left) {
        sigma = spmm(left, sigma);
    }
    if (right) {
        sigma = transpose(spmm(right, transpose(sigma)));
    }
    return sigma;
}

Var diagonal(Var square) {
    return row_sum(mul_const(square, Tensor::identity(square.rows())));
}

// ReLU covariance and derivative maps. Entries with |rho| at 1 are held constant so the
// arc-cosine derivatives stay finite.
std::pair<Var, Var> relu_maps(Var sigma, Var da, Var db) {
    Tape& tape = sigma.tape();
    Var scale = pow(affine(matmul(da, db, false, true), 1.0, 1e-300), 0.5);
    Var rho = clamp(div(sigma, scale), -1.0, 1.0);
    const Tensor& rv = rho.value();
    Tensor inner(rv.rows(), rv.cols());
    Tensor k0_sat(rv.rows(), rv.cols());
    Tensor k1_sat(rv.rows(), rv.cols());
    bool any = false;
    for (std::size_t i = 0; i < rv.size(); ++i) {
        if (std::abs(rv[i]) < kSaturated) {
            inner[i] = 1.0;
        } else {
            any = true;
            k0_sat[i] = rv[i] > 0 ? 1.0 : 0.0;
            k1_sat[i] = rv[i] > 0 ? 1.0 : 0.0;
        }
    }
    Var k0;
    Var k1;
    if (!any) {
        k0 = arccos_k0(rho);
        k1 = arccos_k1(rho);
    } else {
        auto mask = std::make_shared<const Tensor>(std::move(inner));
        Var safe = mul_const(rho, mask);
        k0 = add(mul_const(arccos_k0(safe), mask), tape.constant(std::move(k0_sat)));
        k1 = add(mul_const(arccos_k1(safe), mask), tape.constant(std::move(k1_sat)));
    }
    return {k0, mul(scale, k1)};
}

std::vector<Var> side_diagonals(const GntkSide& s, std::size_t depth) {
    if (!s.diagonals.empty()) {
        if (s.diagonals.size() != depth + 1) {
            throw std::invalid_argument("gntk: expected " + std::to_string(depth + 1) + " precomputed diagonals");
        }
        return s.diagonals;
    }
    std::vector<Var> out;
    Var self = matmul(s.features, s.features, false, true);
    out.push_back(diagonal(self));
    for (std::size_t l = 1; l <= depth; ++l) {
        self = aggregate(self, s.adjacency, s.adjacency);
        Var d = diagonal(self);
        out.push_back(d);
        if (l < depth) {
            self = relu_maps(self, d, d).second;
        }
    }
    return out;
}

}  // namespace

Var gntk(const GntkSide& a, const GntkSide& b, std::size_t depth) {
    if (a.features.cols() != b.features.cols()) {
        throw std::invalid_argument("gntk: feature dimensions differ (" + std::to_string(a.features.cols()) + " vs " +
                                    std::to_string(b.features.cols()) + ")");
    }
    const auto da = side_diagonals(a, depth);
    const auto db = side_diagonals(b, depth);
    Var sigma = matmul(a.features, b.features, false, true);
    Var theta = sigma;
    for (std::size_t l = 1; l <= depth; ++l) {
        sigma = aggregate(sigma, a.adjacency, b.adjacency);
        theta = aggregate(theta, a.adjacency, b.adjacency);
        auto [dot, cov] = relu_maps(sigma, da[l], db[l]);
        sigma = cov;
        theta = add(mul(theta, dot), sigma);
    }
    return theta;
}

Tensor gntk(const Tensor& xa, const SparseOperatorPtr& adj_a, const Tensor& xb, const SparseOperatorPtr& adj_b,
            std::size_t depth) {
    Tape tape;
    return gntk(GntkSide{tape.constant(xa), adj_a, {}}, GntkSide{tape.constant(xb), adj_b, {}}, depth).value();
}

std::vector<Tensor> gntk_diagonals(const Tensor& x, const SparseOperatorPtr& adjacency, std::size_t depth) {
    Tape tape;
    std::vector<Tensor> out;
    for (const Var& v : side_diagonals(GntkSide{tape.constant(x), adjacency, {}}, depth)) {
        out.push_back(v.value());
    }
    return out;
}

Var krr_loss(const GntkSide& t, std::span<const std::size_t> t_rows, const Tensor& y_t, const GntkSide& s,
             std::span<const std::size_t> s_rows, const Tensor& y_s, double epsilon, std::size_t depth) {
    if (!(epsilon > 0.0)) {
        throw std::invalid_argument("krr_loss: epsilon must be positive");
    }
    if (y_t.rows() != t_rows.size() || y_s.rows() != s_rows.size() || y_t.cols() != y_s.cols()) {
        throw std::invalid_argument("krr_loss: target shapes do not match the row sets");
    }
    Tape& tape = s.features.tape();
    auto srow = std::make_shared<std::vector<std::size_t>>(s_rows.begin(), s_rows.end());
    auto trow = std::make_shared<std::vector<std::size_t>>(t_rows.begin(), t_rows.end());
    Var kss = gather_cols(gather_rows(gntk(s, s, depth), srow), srow);
    Var kts = gather_cols(gather_rows(gntk(t, s, depth), trow), srow);
    Tensor ridge = Tensor::identity(s_rows.size());
    for (double& v : ridge.values()) {
        v *= epsilon;
    }
    Var alpha = solve(add(kss, tape.constant(std::move(ridge))), tape.constant(y_s));
    Var residual = sub(tape.constant(y_t), matmul(kts, alpha));
    return affine(sum(mul(residual, residual)), 0.5);
}

CondenseResult condense_krr(const Graph& g, std::span<const std::size_t> budget, const CondenseConfig& config) {
    config.validate();
    if (config.method != CondenseMethod::GCSNTK) {
        throw std::invalid_argument("condense_krr: method must be gcsntk");
    }
    CondensedGraph init = init_synthetic(g, budget, config.init, mix_seed(config.seed, 1));
    Tensor x = init.features;
    const std::vector<int> labels = init.labels;
    const Tensor y_s = one_hot(labels, g.num_classes);
    const Tensor y_t = one_hot(g.labels_of(g.train), g.num_classes);
    const SparseOperatorPtr adj = normalize_adjacency(g);
    const auto diags = gntk_diagonals(g.features, adj, config.kernel_depth);
    std::vector<std::size_t> s_rows(x.rows());
    std::iota(s_rows.begin(), s_rows.end(), 0);
    AdamState adam(AdamHyper{.lr = config.lr_features});

    CondenseResult result;
    for (std::size_t it = 0; it < config.outer_iterations; ++it) {
        Tape tape;
        GntkSide t{tape.constant(g.features), adj, {}};
        for (const Tensor& d : diags) {
            t.diagonals.push_back(tape.constant(d));
        }
        Var xv = tape.leaf(x);
        Var loss = krr_loss(t, g.train, y_t, GntkSide{xv, nullptr, {}}, s_rows, y_s, config.epsilon, config.kernel_depth);
        if (!std::isfinite(loss.value().item())) {
            throw NumericalError("kernel ridge loss is not finite at iteration " + std::to_string(it));
        }
        result.losses.push_back(loss.value().item());
        auto grads = backward(tape, loss);
        std::vector<Tensor> gx{std::move(grads.at(xv.id()))};
        adam_step(std::span<Tensor>(&x, 1), gx, adam);
        check_finite(x, "synthetic features", it);
        if (config.checkpoint_every > 0 && (it + 1) % config.checkpoint_every == 0) {
            result.checkpoints.push_back({it + 1, make_output(g, x, std::nullopt, labels, config)});
        }
    }
    result.graph = make_output(g, x, std::nullopt, labels, config);
    result.graph.validate();
    return result;
}

CondenseResult condense(const Graph& g, std::span<const std::size_t> budget, const CondenseConfig& config,
                        const ExpertBuffer* buffer) {
    switch (config.method) {
        case CondenseMethod::GCond:
        case CondenseMethod::GCondX:
        case CondenseMethod::DosCond:
            return condense_gm(g, budget, config);
        case CondenseMethod::SFGC:
        case CondenseMethod::GEOM:
            if (buffer == nullptr) {
                throw std::invalid_argument("trajectory matching needs an expert buffer");
            }
            return condense_tm(g, budget, *buffer, config);
        case CondenseMethod::GCSNTK:
            return condense_krr(g, budget, config);
    }
    throw std::invalid_argument("unknown condensation method");
}

}  // namespace graphslim
