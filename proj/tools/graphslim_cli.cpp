// graphslim: command-line front end for reduction, evaluation and analysis runs.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "graphslim/harness.hpp"
#include "graphslim/metrics.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace graphslim;

namespace {

// Raised for bad configuration; maps to exit code 1.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
};

json load_config(const std::string& path) {
    if (path.empty()) {
        return json::object();
    }
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config file: " + path);
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
    if (!j.is_object()) {
        throw ConfigError("config must be a JSON object");
    }
    static const std::vector<std::string> sections = {"dataset", "sbm",   "reduce",   "protocol",
                                                      "nas",     "transfer", "robustness"};
    for (const auto& [key, v] : j.items()) {
        if (std::find(sections.begin(), sections.end(), key) == sections.end()) {
            throw ConfigError("unknown config section: " + key);
        }
    }
    return j;
}

SbmParams sbm_from_json(const json& j) {
    SbmParams p;
    p.block_sizes = {100, 100};
    for (const auto& [key, v] : j.items()) {
        if (key == "block_sizes") p.block_sizes = v.get<std::vector<std::size_t>>();
        else if (key == "p_intra") p.p_intra = v.get<double>();
        else if (key == "p_inter") p.p_inter = v.get<double>();
        else if (key == "feature_dim") p.feature_dim = v.get<std::size_t>();
        else if (key == "mean_separation") p.mean_separation = v.get<double>();
        else if (key == "noise") p.noise = v.get<double>();
        else if (key == "train_fraction") p.train_fraction = v.get<double>();
        else if (key == "val_fraction") p.val_fraction = v.get<double>();
        else if (key == "seed") p.seed = v.get<std::uint64_t>();
        else throw ConfigError("unknown sbm key: " + key);
    }
    return p;
}

// A bundle directory, a name under $GRAPHSLIM_DATA (bundle or Planetoid files), or "sbm".
Graph load_dataset(const std::string& name, const json& config) {
    if (name.empty()) {
        throw ConfigError("no dataset given (--dataset or config \"dataset\")");
    }
    if (name == "sbm") {
        return sbm_generate(sbm_from_json(config.value("sbm", json::object())));
    }
    if (fs::is_directory(name)) {
        return load_bundle(name);
    }
    if (const char* root = std::getenv("GRAPHSLIM_DATA")) {
        const fs::path dir = fs::path(root) / name;
        if (fs::exists(dir / "edges.csv")) {
            return load_bundle(dir);
        }
        if (fs::exists(dir / (name + ".content"))) {
            return convert_planetoid(dir / (name + ".content"), dir / (name + ".cites"));
        }
    }
    throw ConfigError("dataset not found: " + name);
}

std::string resolve_dataset(const std::string& flag, const json& config) {
    return flag.empty() ? config.value("dataset", std::string()) : flag;
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

ProtocolConfig protocol_from(const json& config, const Common& common, std::optional<std::size_t> runs) {
    ReduceConfig shell;
    if (config.contains("protocol")) {
        shell = reduce_config_from_json(json{{"method", "whole"}, {"protocol", config["protocol"]}});
    }
    ProtocolConfig p = shell.protocol;
    if (common.seed) p.seed = *common.seed;
    if (runs) p.runs = *runs;
    return p;
}

// ---- subcommands ------------------------------------------------------------------

struct ConvertArgs {
    std::string content, cites, dataset, name = "dataset";
    std::size_t per_class = 20, num_val = 500, num_test = 1000;
};

int run_convert(const Common& c, const ConvertArgs& a) {
    const json config = load_config(c.config);
    Graph g;
    if (!a.content.empty() || !a.cites.empty()) {
        if (a.content.empty() || a.cites.empty()) {
            throw ConfigError("convert needs both --content and --cites");
        }
        g = convert_planetoid(a.content, a.cites, c.seed.value_or(0), a.per_class, a.num_val, a.num_test);
    } else {
        json cfg = config;
        if (c.seed) cfg["sbm"]["seed"] = *c.seed;
        g = load_dataset(resolve_dataset(a.dataset, cfg), cfg);
    }
    const fs::path dir = fs::path(c.out) / "bundles" / a.name;
    save_bundle(g, dir);
    std::cout << dir.string() << " nodes=" << g.num_nodes << " edges=" << g.edges.size() << "\n";
    return 0;
}

struct ReduceArgs {
    std::string dataset, method, setting, experts;
    std::optional<double> rate;
    std::optional<std::size_t> ipc, runs;
};

ReduceConfig reduce_config_from(const json& config, const Common& c, const ReduceArgs& a) {
    json r = config.value("reduce", json::object());
    if (!a.method.empty()) r["method"] = a.method;
    if (a.rate) {
        r["rate"] = *a.rate;
        r.erase("ipc");
    }
    if (a.ipc) {
        r["ipc"] = *a.ipc;
        if (!a.rate) r.erase("rate");
    }
    if (!a.setting.empty()) r["setting"] = a.setting;
    if (c.seed) r["seed"] = *c.seed;
    if (config.contains("protocol") && !r.contains("protocol")) r["protocol"] = config["protocol"];
    ReduceConfig rc = reduce_config_from_json(r);
    if (a.runs) rc.protocol.runs = *a.runs;
    if (c.seed) rc.protocol.seed = *c.seed;
    return rc;
}

int run_reduce(const Common& c, const ReduceArgs& a, bool condensation_only) {
    const json config = load_config(c.config);
    const ReduceConfig rc = reduce_config_from(config, c, a);
    if (rc.method == "whole") {
        throw ConfigError("method \"whole\" produces no reduced graph");
    }
    if (condensation_only != is_condensation_method(rc.method)) {
        throw ConfigError(condensation_only ? "condense expects a condensation method, got " + rc.method
                                            : "reduce expects a coreset or coarsening method; use condense for " +
                                                  rc.method);
    }
    const Graph g = load_dataset(resolve_dataset(a.dataset, config), config);
    std::optional<ExpertBuffer> buffer;
    if (rc.method == "sfgc" || rc.method == "geom") {
        if (!a.experts.empty()) {
            buffer = load_expert_buffer(a.experts);
        } else {
            const Graph tg = training_graph(g, rc.budget.setting);
            buffer = build_expert_buffer(tg, rc.expert_spec, rc.experts, rc.expert_epochs, rc.snapshot_every,
                                         mix_seed(rc.seed, 1));
            save_expert_buffer(*buffer, fs::path(c.out) / "experts" / rc.method);
        }
    }
    ReduceResult r = reduce(g, rc, buffer ? &*buffer : nullptr);
    const fs::path dir = fs::path(c.out) / "bundles" / rc.method;
    save_condensed(*r.graph, dir);
    if (r.selection) {
        write_text(dir / "selection.json", selection_to_json(*r.selection) + "\n");
    }
    json report{{"method", rc.method},
                {"config", rc.to_json()},
                {"config_hash", rc.hash()},
                {"source", r.graph->meta.source},
                {"budget", r.budget},
                {"nodes", r.graph->num_nodes()},
                {"losses", r.losses},
                {"snapshot_val", r.snapshot_val},
                {"selected_snapshot", r.selected_snapshot},
                {"timing", {{"total_s", r.seconds}}}};
    write_json(fs::path(c.out) / "reports" / (rc.method + "_reduce.json"), report);
    std::cout << dir.string() << " nodes=" << r.graph->num_nodes() << "\n";
    return 0;
}

struct EvalArgs {
    std::string dataset, bundle, setting;
    std::optional<std::size_t> runs;
};

int run_evaluate(const Common& c, const EvalArgs& a) {
    const json config = load_config(c.config);
    const ProtocolConfig pc = protocol_from(config, c, a.runs);
    const Graph g = load_dataset(resolve_dataset(a.dataset, config), config);
    EvalReport r;
    if (a.bundle.empty()) {
        const Setting s = a.setting.empty() ? Setting::Transductive : parse_setting(a.setting);
        r = evaluate_protocol(training_graph(g, s), g, pc);
    } else {
        r = evaluate_protocol(load_condensed(a.bundle), g, pc);
    }
    json j = r.to_json();
    write_json(fs::path(c.out) / "reports" / ("eval_" + r.method + ".json"), j);
    std::cout << r.method << " test " << r.mean << " +- " << r.stddev << "\n";
    return 0;
}

struct AnalysisArgs {
    std::string dataset, bundle, setting;
    bool reduced_space = false;
};

int run_transfer(const Common& c, const AnalysisArgs& a) {
    const json config = load_config(c.config);
    const json t = config.value("transfer", json::object());
    HyperGrid grid;
    std::vector<Arch> archs = {Arch::GCN, Arch::SGC, Arch::APPNP, Arch::Cheby, Arch::SAGE};
    for (const auto& [key, v] : t.items()) {
        if (key == "archs") {
            archs.clear();
            for (const auto& s : v) archs.push_back(parse_arch(s.get<std::string>()));
        } else if (key == "hidden") grid.hidden = v.get<std::vector<std::size_t>>();
        else if (key == "lr") grid.lr = v.get<std::vector<double>>();
        else if (key == "weight_decay") grid.weight_decay = v.get<std::vector<double>>();
        else if (key == "dropout") grid.dropout = v.get<std::vector<double>>();
        else if (key == "linear_layers") grid.linear_layers = v.get<std::vector<std::size_t>>();
        else if (key == "alpha") grid.alpha = v.get<std::vector<double>>();
        else if (key == "epochs") grid.epochs = v.get<std::size_t>();
        else throw ConfigError("unknown transfer key: " + key);
    }
    if (a.bundle.empty()) throw ConfigError("transfer needs --bundle");
    const Graph g = load_dataset(resolve_dataset(a.dataset, config), config);
    const Setting s = a.setting.empty() ? Setting::Transductive : parse_setting(a.setting);
    TransferReport r = transferability_matrix(load_condensed(a.bundle), g, archs, grid, c.seed.value_or(0), s);
    write_json(fs::path(c.out) / "reports" / "transfer.json", r.to_json());
    write_text(fs::path(c.out) / "reports" / "transfer.csv", r.to_csv());
    std::cout << r.to_csv();
    return 0;
}

int run_nas(const Common& c, const AnalysisArgs& a) {
    const json config = load_config(c.config);
    const json n = config.value("nas", json::object());
    NasSpace space = a.reduced_space ? NasSpace::reduced() : NasSpace::full();
    TrainConfig tc;
    for (const auto& [key, v] : n.items()) {
        if (key == "space") {
            const auto name = v.get<std::string>();
            if (name != "reduced" && name != "full") throw ConfigError("nas space must be reduced or full");
            if (!a.reduced_space) space = name == "reduced" ? NasSpace::reduced() : NasSpace::full();
        } else if (key == "epochs") tc.epochs = v.get<std::size_t>();
        else if (key == "lr") tc.lr = v.get<double>();
        else if (key == "weight_decay") tc.weight_decay = v.get<double>();
        else throw ConfigError("unknown nas key: " + key);
    }
    if (a.bundle.empty()) throw ConfigError("nas needs --bundle");
    const Graph g = load_dataset(resolve_dataset(a.dataset, config), config);
    const Setting s = a.setting.empty() ? Setting::Transductive : parse_setting(a.setting);
    NasResult r = nas_search(load_condensed(a.bundle), g, space, tc, c.seed.value_or(0), s);
    write_json(fs::path(c.out) / "reports" / "nas.json", r.to_json());
    std::ostringstream csv;
    csv << "architecture,cond_val,cond_test,whole_val,whole_test\n";
    for (const NasEntry& e : r.entries) {
        csv << e.spec.describe() << ',' << format_double(e.cond_val) << ',' << format_double(e.cond_test) << ','
            << format_double(e.whole_val) << ',' << format_double(e.whole_test) << '\n';
    }
    write_text(fs::path(c.out) / "reports" / "nas.csv", csv.str());
    std::cout << "architectures " << r.entries.size() << " top1 " << r.top1_test << " acc_corr " << r.acc_corr
              << " rank_corr " << r.rank_corr << "\n";
    return 0;
}

int run_robustness(const Common& c, const AnalysisArgs& a) {
    const json config = load_config(c.config);
    const json rj = config.value("robustness", json::object());
    std::vector<ReduceConfig> methods;
    std::vector<CorruptionSpec> corruptions;
    ModelSpec surrogate;
    AttackConfig attack;
    for (const auto& [key, v] : rj.items()) {
        if (key == "methods") {
            for (const auto& m : v) {
                json mj = m;
                if (c.seed) mj["seed"] = *c.seed;
                methods.push_back(reduce_config_from_json(mj));
            }
        } else if (key == "corruptions") {
            for (const auto& cj : v) {
                CorruptionSpec s;
                for (const auto& [k2, v2] : cj.items()) {
                    if (k2 == "kind") s.kind = parse_corruption_kind(v2.get<std::string>());
                    else if (k2 == "rate") s.rate = v2.get<double>();
                    else if (k2 == "scenario") s.scenario = parse_scenario(v2.get<std::string>());
                    else if (k2 == "repeats") s.repeats = v2.get<std::size_t>();
                    else if (k2 == "seed") s.seed = v2.get<std::uint64_t>();
                    else throw ConfigError("unknown corruption key: " + k2);
                }
                if (c.seed) s.seed = *c.seed;
                s.validate();
                corruptions.push_back(s);
            }
        } else if (key == "surrogate") surrogate = model_spec_from_json(v);
        else if (key == "attack_steps") attack.steps = v.get<std::size_t>();
        else if (key == "attack_block_size") attack.block_size = v.get<std::size_t>();
        else throw ConfigError("unknown robustness key: " + key);
    }
    if (methods.empty()) {
        for (const char* m : {"whole", "gcond"}) {
            ReduceConfig rc;
            rc.method = m;
            rc.seed = c.seed.value_or(0);
            methods.push_back(rc);
        }
    }
    if (corruptions.empty()) {
        CorruptionSpec s;
        s.seed = c.seed.value_or(0);
        corruptions.push_back(s);
    }
    const Graph g = load_dataset(resolve_dataset(a.dataset, config), config);
    RobustnessReport r = robustness_pipeline(g, methods, corruptions, surrogate, attack);
    write_json(fs::path(c.out) / "reports" / "robustness.json", r.to_json());
    write_text(fs::path(c.out) / "reports" / "robustness.csv", r.to_csv());
    std::cout << r.to_csv();
    return 0;
}

json property_json(const PropertyReport& r) {
    auto vec = [](const PropertyVector& p) {
        json j = json::object();
        for (const char* m : kMetricNames) {
            const auto v = metric_value(p, m);
            j[m] = v ? json(*v) : json(nullptr);
        }
        if (!p.errors.empty()) j["errors"] = p.errors;
        return j;
    };
    json pairs = json::array();
    for (const PropertyPair& p : r.pairs) {
        pairs.push_back(json{{"name", p.name}, {"original", vec(p.original)}, {"condensed", vec(p.condensed)}});
    }
    json corr = json::object();
    for (const auto& [k, v] : r.correlation) corr[k] = v ? json(*v) : json(nullptr);
    return json{{"pairs", pairs}, {"correlation", corr}, {"correlation_errors", r.correlation_errors}};
}

int run_properties(const Common& c, const AnalysisArgs& a) {
    const json config = load_config(c.config);
    const Graph g = load_dataset(resolve_dataset(a.dataset, config), config);
    if (a.bundle.empty()) throw ConfigError("properties needs --bundle");
    const CondensedGraph cg = load_condensed(a.bundle);
    const std::vector<NamedPair> pairs = {{cg.meta.method.empty() ? "pair" : cg.meta.method, &g, &cg}};
    PropertyReport r = property_report(pairs, cg.delta);
    write_json(fs::path(c.out) / "reports" / "properties.json", property_json(r));
    write_text(fs::path(c.out) / "reports" / "properties.csv", property_report_csv(r));
    std::cout << property_report_csv(r);
    return 0;
}

struct ReportArgs {
    std::vector<std::string> pairs;
    std::string reports;
};

// Pairs are name=dataset:bundle.
int run_report(const Common& c, const ReportArgs& a) {
    const json config = load_config(c.config);
    if (a.pairs.empty() && a.reports.empty()) {
        throw ConfigError("report needs --pair or --reports");
    }
    if (!a.pairs.empty()) {
        std::vector<Graph> graphs;
        std::vector<CondensedGraph> condensed;
        std::vector<std::string> names;
        graphs.reserve(a.pairs.size());
        condensed.reserve(a.pairs.size());
        for (const std::string& p : a.pairs) {
            const auto eq = p.find('=');
            const auto colon = p.find(':', eq == std::string::npos ? 0 : eq);
            if (eq == std::string::npos || colon == std::string::npos) {
                throw ConfigError("pair must look like name=dataset:bundle, got " + p);
            }
            names.push_back(p.substr(0, eq));
            graphs.push_back(load_dataset(p.substr(eq + 1, colon - eq - 1), config));
            condensed.push_back(load_condensed(p.substr(colon + 1)));
        }
        std::vector<NamedPair> pairs;
        for (std::size_t i = 0; i < names.size(); ++i) pairs.push_back({names[i], &graphs[i], &condensed[i]});
        PropertyReport r = property_report(pairs, condensed.front().delta);
        write_json(fs::path(c.out) / "reports" / "property_table.json", property_json(r));
        write_text(fs::path(c.out) / "reports" / "property_table.csv", property_report_csv(r));
        std::cout << property_report_csv(r);
    }
    if (!a.reports.empty()) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(a.reports)) {
            if (e.path().filename().string().rfind("eval_", 0) == 0 && e.path().extension() == ".json") {
                files.push_back(e.path());
            }
        }
        std::sort(files.begin(), files.end());
        std::ostringstream csv;
        csv << "method,n_runs,mean,stddev,val_mean\n";
        json rows = json::array();
        for (const fs::path& f : files) {
            std::ifstream in(f);
            const json j = json::parse(in);
            csv << j.at("method").get<std::string>() << ',' << j.at("n_runs").get<std::size_t>() << ','
                << format_double(j.at("mean").get<double>()) << ',' << format_double(j.at("stddev").get<double>())
                << ',' << format_double(j.at("val_mean").get<double>()) << '\n';
            rows.push_back(json{{"method", j.at("method")}, {"mean", j.at("mean")}, {"stddev", j.at("stddev")}});
        }
        write_text(fs::path(c.out) / "reports" / "results_table.csv", csv.str());
        write_json(fs::path(c.out) / "reports" / "results_table.json", json{{"rows", rows}});
        std::cout << csv.str();
    }
    return 0;
}

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "JSON config file");
    app->add_option("--seed", c.seed, "Seed overriding the config");
    app->add_option("--out", c.out, "Output directory (bundles/, reports/, experts/)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"graphslim: graph reduction, condensation and evaluation"};
    app.require_subcommand(1);

    Common common;
    ConvertArgs conv;
    ReduceArgs red;
    EvalArgs ev;
    AnalysisArgs an;
    ReportArgs rep;

    auto* convert = app.add_subcommand("convert", "Write a dataset bundle from Planetoid files or an SBM");
    add_common(convert, common);
    convert->add_option("--content", conv.content, "Planetoid .content file");
    convert->add_option("--cites", conv.cites, "Planetoid .cites file");
    convert->add_option("--dataset", conv.dataset, "Dataset to re-export (bundle dir, name, or sbm)");
    convert->add_option("--name", conv.name, "Bundle name under bundles/");
    convert->add_option("--per-class", conv.per_class, "Training nodes per class");
    convert->add_option("--num-val", conv.num_val, "Validation nodes");
    convert->add_option("--num-test", conv.num_test, "Test nodes");

    auto add_reduce = [&](const char* name, const char* help) {
        auto* sc = app.add_subcommand(name, help);
        add_common(sc, common);
        sc->add_option("--dataset", red.dataset, "Bundle dir, dataset name, or sbm");
        sc->add_option("--method", red.method, "Reduction method");
        sc->add_option("--rate", red.rate, "Reduction rate");
        sc->add_option("--ipc", red.ipc, "Nodes per class");
        sc->add_option("--setting", red.setting, "transductive or inductive");
        sc->add_option("--runs", red.runs, "Protocol runs for snapshot selection config");
        return sc;
    };
    auto* reduce_cmd = add_reduce("reduce", "Coreset selection or coarsening");
    auto* condense_cmd = add_reduce("condense", "Graph condensation");
    condense_cmd->add_option("--experts", red.experts, "Expert buffer directory for trajectory matching");

    auto* evaluate_cmd = app.add_subcommand("evaluate", "Protocol evaluation of a reduced graph");
    add_common(evaluate_cmd, common);
    evaluate_cmd->add_option("--dataset", ev.dataset, "Original dataset");
    evaluate_cmd->add_option("--bundle", ev.bundle, "Reduced graph bundle (omit for whole-graph training)");
    evaluate_cmd->add_option("--setting", ev.setting, "transductive or inductive");
    evaluate_cmd->add_option("--runs", ev.runs, "Number of runs");

    auto add_analysis = [&](const char* name, const char* help) {
        auto* sc = app.add_subcommand(name, help);
        add_common(sc, common);
        sc->add_option("--dataset", an.dataset, "Original dataset");
        sc->add_option("--bundle", an.bundle, "Reduced graph bundle");
        sc->add_option("--setting", an.setting, "transductive or inductive");
        return sc;
    };
    auto* transfer_cmd = add_analysis("transfer", "Transferability across GNN architectures");
    auto* nas_cmd = add_analysis("nas", "Architecture search on condensed vs whole graphs");
    nas_cmd->add_flag("--reduced-space", an.reduced_space, "24-architecture search space");
    auto* robustness_cmd = app.add_subcommand("robustness", "Corruption robustness table");
    add_common(robustness_cmd, common);
    robustness_cmd->add_option("--dataset", an.dataset, "Original dataset");
    auto* properties_cmd = add_analysis("properties", "Graph property vector of an original/reduced pair");

    auto* report_cmd = app.add_subcommand("report", "Property table across pairs and results table");
    add_common(report_cmd, common);
    report_cmd->add_option("--pair", rep.pairs, "name=dataset:bundle (repeatable)");
    report_cmd->add_option("--reports", rep.reports, "Directory of eval_*.json reports");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n";
        const auto subs = app.get_subcommands();
        std::cerr << (subs.empty() ? app.help() : subs.front()->help());
        return 1;
    }

    try {
        if (*convert) return run_convert(common, conv);
        if (*reduce_cmd) return run_reduce(common, red, false);
        if (*condense_cmd) return run_reduce(common, red, true);
        if (*evaluate_cmd) return run_evaluate(common, ev);
        if (*transfer_cmd) return run_transfer(common, an);
        if (*nas_cmd) return run_nas(common, an);
        if (*robustness_cmd) return run_robustness(common, an);
        if (*properties_cmd) return run_properties(common, an);
        if (*report_cmd) return run_report(common, rep);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
