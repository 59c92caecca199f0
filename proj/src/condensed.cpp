#include "graphslim/condensed.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace graphslim {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::size_t> CondensedGraph::class_counts() const {
    std::vector<std::size_t> counts(num_classes, 0);
    for (int y : labels) {
        ++counts.at(static_cast<std::size_t>(y));
    }
    return counts;
}

void CondensedGraph::validate() const {
    const std::size_t m = features.rows();
    if (labels.size() != m) {
        throw DataError("condensed graph has " + std::to_string(m) + " feature rows but " +
                        std::to_string(labels.size()) + " labels");
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
            throw DataError("condensed label out of range");
        }
    }
    if (!features.all_finite()) {
        throw DataError("condensed features are not finite");
    }
    if (adjacency) {
        const Tensor& a = *adjacency;
        if (a.rows() != m || a.cols() != m) {
            throw DataError("condensed adjacency has shape " + shape_string(a) + ", expected " + std::to_string(m) +
                            "x" + std::to_string(m));
        }
        for (std::size_t i = 0; i < m; ++i) {
            if (a(i, i) != 0.0) {
                throw DataError("condensed adjacency has a nonzero diagonal");
            }
            for (std::size_t j = i + 1; j < m; ++j) {
                if (a(i, j) != a(j, i) || !(a(i, j) >= 0.0) || !std::isfinite(a(i, j))) {
                    throw DataError("condensed adjacency must be symmetric, finite and non-negative");
                }
            }
        }
    }
    if (soft_labels && (soft_labels->rows() != m || soft_labels->cols() != num_classes)) {
        throw DataError("soft labels must be m x classes");
    }
}

CondensedGraph condensed_from_graph(const Graph& g, bool keep_structure) {
    CondensedGraph cg;
    cg.features = g.features;
    cg.labels = g.labels;
    cg.num_classes = g.num_classes;
    if (keep_structure) {
        Tensor a(g.num_nodes, g.num_nodes);
        for (const Edge& e : g.edges) {
            a(e.u, e.v) = a(e.v, e.u) = e.weight;
        }
        cg.adjacency = std::move(a);
    }
    return cg;
}

CondensedGraph sparsify(const CondensedGraph& cg, double delta) {
    if (!cg.adjacency) {
        throw std::invalid_argument("sparsify: condensed graph has no structure");
    }
    CondensedGraph out = cg;
    for (double& v : out.adjacency->values()) {
        if (v < delta) {
            v = 0.0;
        }
    }
    out.delta = delta;
    return out;
}

void save_condensed(const CondensedGraph& cg, const fs::path& dir) {
    cg.validate();
    Graph g;
    g.num_nodes = cg.num_nodes();
    g.num_classes = cg.num_classes;
    g.features = cg.features;
    g.labels = cg.labels;
    g.train.resize(g.num_nodes);
    for (std::size_t i = 0; i < g.num_nodes; ++i) {
        g.train[i] = i;
    }
    if (cg.adjacency) {
        for (std::size_t i = 0; i < g.num_nodes; ++i) {
            for (std::size_t j = i + 1; j < g.num_nodes; ++j) {
                const double w = (*cg.adjacency)(i, j);
                if (w != 0.0) {
                    g.edges.push_back({i, j, w});
                }
            }
        }
    }
    save_bundle(g, dir);

    json meta;
    meta["method"] = cg.meta.method;
    meta["source"] = cg.meta.source;
    meta["rate"] = cg.meta.rate;
    meta["seed"] = cg.meta.seed;
    meta["config_hash"] = cg.meta.config_hash;
    meta["num_classes"] = cg.num_classes;
    meta["structure"] = cg.has_structure();
    meta["delta"] = cg.delta;
    meta["soft_labels"] = cg.soft_labels.has_value();
    std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';

    if (cg.soft_labels) {
        std::ofstream out(dir / "soft_labels.csv");
        for (std::size_t i = 0; i < cg.soft_labels->rows(); ++i) {
            auto r = cg.soft_labels->row(i);
            for (std::size_t j = 0; j < r.size(); ++j) {
                out << (j > 0 ? "," : "") << format_double(r[j]);
            }
            out << '\n';
        }
    }
}

CondensedGraph load_condensed(const fs::path& dir) {
    std::ifstream in(dir / "meta.json");
    if (!in) {
        throw DataError("missing file: " + (dir / "meta.json").string());
    }
    json meta;
    try {
        in >> meta;
    } catch (const json::exception& e) {
        throw DataError(std::string("meta.json: ") + e.what());
    }
    Graph g = load_bundle(dir);
    CondensedGraph cg;
    cg.features = g.features;
    cg.labels = g.labels;
    cg.num_classes = meta.value("num_classes", g.num_classes);
    cg.meta.method = meta.value("method", "");
    cg.meta.source = meta.value("source", "");
    cg.meta.rate = meta.value("rate", 0.0);
    cg.meta.seed = meta.value("seed", std::uint64_t{0});
    cg.meta.config_hash = meta.value("config_hash", "");
    cg.delta = meta.value("delta", 0.5);
    if (meta.value("structure", false)) {
        Tensor a(g.num_nodes, g.num_nodes);
        for (const Edge& e : g.edges) {
            a(e.u, e.v) = a(e.v, e.u) = e.weight;
        }
        cg.adjacency = std::move(a);
    } else if (!g.edges.empty()) {
        throw DataError("structure-free condensed graph has edges");
    }
    if (meta.value("soft_labels", false)) {
        std::ifstream sin(dir / "soft_labels.csv");
        if (!sin) {
            throw DataError("missing file: " + (dir / "soft_labels.csv").string());
        }
        Tensor y(g.num_nodes, cg.num_classes);
        std::string line;
        for (std::size_t i = 0; i < g.num_nodes; ++i) {
            if (!std::getline(sin, line)) {
                throw DataError("soft_labels.csv is short");
            }
            std::size_t start = 0;
            for (std::size_t j = 0; j < cg.num_classes; ++j) {
                const std::size_t end = line.find(',', start);
                y(i, j) = parse_double(std::string_view(line).substr(start, end == std::string::npos ? end : end - start));
                start = end + 1;
            }
        }
        cg.soft_labels = std::move(y);
    }
    cg.validate();
    return cg;
}

}  // namespace graphslim
