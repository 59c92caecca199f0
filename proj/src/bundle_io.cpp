#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

#include "graphslim/graph.hpp"

namespace graphslim {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    if (!s.empty() && s.front() == '+') {
        s.remove_prefix(1);
    }
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw DataError("cannot parse number '" + std::string(s) + "'");
    }
    return v;
}

namespace {

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

std::ifstream open_input(const fs::path& p) {
    std::ifstream in(p);
    if (!in) {
        throw DataError("missing file: " + p.string());
    }
    return in;
}

std::ofstream open_output(const fs::path& p) {
    std::ofstream out(p, std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + p.string());
    }
    return out;
}

std::size_t parse_index(std::string_view s) {
    const double v = parse_double(s);
    if (v < 0.0 || v != std::floor(v)) {
        throw DataError("invalid node index '" + std::string(s) + "'");
    }
    return static_cast<std::size_t>(v);
}

bool blank(const std::string& line) {
    return std::all_of(line.begin(), line.end(), [](char c) { return c == ' ' || c == '\r' || c == '\t'; });
}

}  // namespace

Graph load_bundle(const fs::path& dir) {
    if (!fs::is_directory(dir)) {
        throw DataError("bundle directory does not exist: " + dir.string());
    }
    Graph g;

    {
        auto in = open_input(dir / "labels.csv");
        std::string line;
        int max_label = -1;
        while (std::getline(in, line)) {
            if (blank(line)) {
                continue;
            }
            const double v = parse_double(line);
            if (v != std::floor(v) || v < 0.0) {
                throw DataError("label out of range: '" + line + "'");
            }
            g.labels.push_back(static_cast<int>(v));
            max_label = std::max(max_label, g.labels.back());
        }
        g.num_nodes = g.labels.size();
        g.num_classes = static_cast<std::size_t>(max_label + 1);
    }

    {
        auto in = open_input(dir / "features.csv");
        std::string line;
        std::vector<double> values;
        std::size_t rows = 0;
        std::size_t cols = 0;
        while (std::getline(in, line)) {
            if (blank(line)) {
                continue;
            }
            auto fields = split(line, ',');
            if (rows == 0) {
                cols = fields.size();
            } else if (fields.size() != cols) {
                throw DataError("features.csv row " + std::to_string(rows) + " has " + std::to_string(fields.size()) +
                                " columns, expected " + std::to_string(cols));
            }
            for (auto f : fields) {
                values.push_back(parse_double(f));
            }
            ++rows;
        }
        if (rows != g.num_nodes) {
            throw DataError("features.csv has " + std::to_string(rows) + " rows but labels.csv has " +
                            std::to_string(g.num_nodes));
        }
        g.features = Tensor(rows, cols, std::move(values));
    }

    {
        auto in = open_input(dir / "edges.csv");
        std::string line;
        std::vector<Edge> edges;
        while (std::getline(in, line)) {
            if (blank(line)) {
                continue;
            }
            auto fields = split(line, ',');
            if (fields.size() < 2 || fields.size() > 3) {
                throw DataError("malformed edge line '" + line + "'");
            }
            Edge e{parse_index(fields[0]), parse_index(fields[1]), fields.size() == 3 ? parse_double(fields[2]) : 1.0};
            if (e.u >= g.num_nodes || e.v >= g.num_nodes) {
                throw DataError("edge references unknown node in '" + line + "'");
            }
            edges.push_back(e);
        }
        g.edges = canonical_edges(std::move(edges));
    }

    {
        auto in = open_input(dir / "splits.json");
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw DataError(std::string("splits.json: ") + e.what());
        }
        auto read = [&](const char* key) {
            std::vector<std::size_t> ids;
            if (j.contains(key)) {
                ids = j.at(key).get<std::vector<std::size_t>>();
            }
            std::sort(ids.begin(), ids.end());
            return ids;
        };
        g.train = read("train");
        g.val = read("val");
        g.test = read("test");
    }

    g.validate();
    return g;
}

void save_bundle(const Graph& g, const fs::path& dir) {
    g.validate();
    fs::create_directories(dir);
    {
        auto out = open_output(dir / "edges.csv");
        for (const Edge& e : g.edges) {
            out << e.u << ',' << e.v << ',' << format_double(e.weight) << '\n';
        }
    }
    {
        auto out = open_output(dir / "features.csv");
        std::string line;
        for (std::size_t i = 0; i < g.num_nodes; ++i) {
            line.clear();
            auto row = g.features.row(i);
            for (std::size_t j = 0; j < row.size(); ++j) {
                if (j > 0) {
                    line.push_back(',');
                }
                line += format_double(row[j]);
            }
            out << line << '\n';
        }
    }
    {
        auto out = open_output(dir / "labels.csv");
        for (int y : g.labels) {
            out << y << '\n';
        }
    }
    {
        auto out = open_output(dir / "splits.json");
        json j;
        j["train"] = g.train;
        j["val"] = g.val;
        j["test"] = g.test;
        out << j.dump() << '\n';
    }
    for (const char* f : {"edges.csv", "features.csv", "labels.csv", "splits.json"}) {
        if (!fs::exists(dir / f)) {
            throw std::runtime_error("failed writing " + (dir / f).string());
        }
    }
}

Graph convert_planetoid(const fs::path& content, const fs::path& cites, std::uint64_t seed, std::size_t per_class,
                        std::size_t num_val, std::size_t num_test) {
    std::map<std::string, std::size_t> ids;
    std::map<std::string, int> classes;
    std::vector<std::vector<double>> rows;
    std::vector<std::string> label_names;
    {
        auto in = open_input(content);
        std::string line;
        while (std::getline(in, line)) {
            if (blank(line)) {
                continue;
            }
            std::istringstream ss(line);
            std::vector<std::string> tokens;
            std::string tok;
            while (ss >> tok) {
                tokens.push_back(tok);
            }
            if (tokens.size() < 3) {
                throw DataError("malformed .content line");
            }
            if (ids.count(tokens.front()) != 0) {
                continue;
            }
            ids.emplace(tokens.front(), rows.size());
            std::vector<double> feats;
            for (std::size_t k = 1; k + 1 < tokens.size(); ++k) {
                feats.push_back(parse_double(tokens[k]));
            }
            if (!rows.empty() && feats.size() != rows.front().size()) {
                throw DataError("inconsistent feature width in .content");
            }
            rows.push_back(std::move(feats));
            label_names.push_back(tokens.back());
            classes.emplace(tokens.back(), 0);
        }
    }
    int next = 0;
    for (auto& [name, id] : classes) {
        id = next++;
    }

    Graph g;
    g.num_nodes = rows.size();
    g.num_classes = classes.size();
    const std::size_t d = rows.empty() ? 0 : rows.front().size();
    g.features = Tensor(g.num_nodes, d);
    for (std::size_t i = 0; i < g.num_nodes; ++i) {
        std::copy(rows[i].begin(), rows[i].end(), g.features.row(i).begin());
        g.labels.push_back(classes.at(label_names[i]));
    }

    {
        auto in = open_input(cites);
        std::string line;
        std::vector<Edge> edges;
        while (std::getline(in, line)) {
            std::istringstream ss(line);
            std::string a;
            std::string b;
            if (!(ss >> a >> b)) {
                continue;
            }
            auto ia = ids.find(a);
            auto ib = ids.find(b);
            if (ia == ids.end() || ib == ids.end()) {
                continue;  // citations to papers without content rows
            }
            edges.push_back({ia->second, ib->second, 1.0});
        }
        g.edges = canonical_edges(std::move(edges));
    }

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> perm(g.num_nodes);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::size_t> taken(g.num_classes, 0);
    std::vector<std::size_t> rest;
    for (std::size_t i : perm) {
        auto& t = taken[static_cast<std::size_t>(g.labels[i])];
        if (t < per_class) {
            g.train.push_back(i);
            ++t;
        } else {
            rest.push_back(i);
        }
    }
    const std::size_t nv = std::min(num_val, rest.size());
    const std::size_t nt = std::min(num_test, rest.size() - nv);
    g.val.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(nv));
    g.test.assign(rest.begin() + static_cast<std::ptrdiff_t>(nv), rest.begin() + static_cast<std::ptrdiff_t>(nv + nt));
    std::sort(g.train.begin(), g.train.end());
    std::sort(g.val.begin(), g.val.end());
    std::sort(g.test.begin(), g.test.end());
    g.validate();
    return g;
}

}  // namespace graphslim
