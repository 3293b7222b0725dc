#include "actnet/graph.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "json.hpp"

namespace actnet::graph {

using features::kNumFeatures;
using json = nlohmann::json;

void SamplerConfig::validate() const {
    if (n_samples == 0) throw std::invalid_argument("sampler.n_samples must be positive");
    if (!(fps_fraction >= 0.0 && fps_fraction <= 1.0)) throw std::invalid_argument("sampler.fps_fraction must be in [0, 1]");
}

void EdgeConfig::validate() const {
    if (k == 0) throw std::invalid_argument("edge.k must be at least 1");
    if (!(d > 0.0)) throw std::invalid_argument("edge.d must be positive");
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw std::invalid_argument("edge.alpha and edge.beta must be non-negative");
    if (alpha == 0.0 && beta == 0.0) throw std::invalid_argument("edge.alpha and edge.beta cannot both be zero");
    if (dilation == 0) throw std::invalid_argument("edge.dilation must be at least 1");
}

namespace {

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

void check_points(const Points& points) {
    for (const auto& p : points) {
        if (p.size() != points.front().size()) throw std::invalid_argument("points have inconsistent dimensions");
    }
}

}  // namespace

std::vector<std::size_t> fps_sample(const Points& points, std::size_t m, std::size_t start_index) {
    const std::size_t n = points.size();
    if (m > n) throw std::invalid_argument("fps_sample: m exceeds the number of points");
    if (m == 0) return {};
    if (start_index >= n) throw std::out_of_range("fps_sample: start index out of range");
    check_points(points);
    std::vector<std::size_t> chosen{start_index};
    std::vector<bool> taken(n, false);
    taken[start_index] = true;
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    while (chosen.size() < m) {
        const auto& last = points[chosen.back()];
        std::size_t best = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (taken[i]) continue;
            nearest[i] = std::min(nearest[i], squared_distance(points[i], last));
            if (best == n || nearest[i] > nearest[best]) best = i;
        }
        taken[best] = true;
        chosen.push_back(best);
    }
    return chosen;
}

std::vector<std::size_t> fused_sample(const Points& centroids, const SamplerConfig& cfg) {
    cfg.validate();
    const std::size_t n = centroids.size();
    if (n == 0) throw EmptyGraphError();
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    if (n <= cfg.n_samples) return all;

    const auto n_fps = static_cast<std::size_t>(std::floor(cfg.fps_fraction * static_cast<double>(cfg.n_samples)));
    std::vector<std::size_t> picked = fps_sample(centroids, n_fps, 0);
    std::vector<bool> taken(n, false);
    for (auto i : picked) taken[i] = true;
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < n; ++i)
        if (!taken[i]) rest.push_back(i);
    std::mt19937_64 rng(cfg.seed);
    const std::size_t n_random = cfg.n_samples - picked.size();
    for (std::size_t i = 0; i < n_random; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, rest.size() - 1);
        std::swap(rest[i], rest[pick(rng)]);
        picked.push_back(rest[i]);
    }
    return picked;
}

void standardize_columns(std::vector<std::array<double, kNumFeatures>>& rows) {
    if (rows.empty()) return;
    const double n = static_cast<double>(rows.size());
    for (std::size_t f = 0; f < kNumFeatures; ++f) {
        double lo = rows[0][f], hi = rows[0][f], sum = 0.0;
        for (const auto& r : rows) {
            lo = std::min(lo, r[f]);
            hi = std::max(hi, r[f]);
            sum += r[f];
        }
        if (lo == hi) {
            for (auto& r : rows) r[f] = 0.0;
            continue;
        }
        const double mean = sum / n;
        double ss = 0.0;
        for (const auto& r : rows) ss += (r[f] - mean) * (r[f] - mean);
        const double sd = std::sqrt(ss / n);
        for (auto& r : rows) r[f] = (r[f] - mean) / sd;
    }
}

std::vector<double> overall_feature(const std::array<double, kNumFeatures>& g, const std::array<double, 2>& c,
                                    double alpha, double beta) {
    std::vector<double> t;
    t.reserve(kNumFeatures + 2);
    for (double v : g) t.push_back(alpha * v);
    t.push_back(beta * c[0]);
    t.push_back(beta * c[1]);
    return t;
}

std::vector<Edge> build_adjacency(const Points& t, std::size_t k, double d, bool symmetrize, std::size_t dilation) {
    if (k == 0 || dilation == 0) throw std::invalid_argument("build_adjacency: k and dilation must be positive");
    check_points(t);
    const std::size_t n = t.size();
    std::vector<Edge> edges;
    std::vector<std::pair<double, std::size_t>> order;
    for (std::size_t i = 0; i < n; ++i) {
        order.clear();
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) order.emplace_back(squared_distance(t[i], t[j]), j);
        const std::size_t reach = std::min(order.size(), k * dilation);
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(reach), order.end());
        for (std::size_t r = 0; r < reach; r += dilation) {
            if (std::sqrt(order[r].first) < d) edges.push_back({i, order[r].second});
        }
    }
    if (symmetrize) {
        const std::size_t directed = edges.size();
        for (std::size_t e = 0; e < directed; ++e) edges.push_back({edges[e].dst, edges[e].src});
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    return edges;
}

CellGraph graph_from_features(std::vector<features::FeatureVector> cells, const SamplerConfig& sampler,
                              const EdgeConfig& edge, int label, std::string source_id) {
    sampler.validate();
    edge.validate();
    if (cells.empty()) throw EmptyGraphError();
    std::vector<std::array<double, kNumFeatures>> g;
    Points centroids;
    for (const auto& c : cells) {
        g.push_back(c.g);
        centroids.push_back({c.centroid_row, c.centroid_col});
    }
    standardize_columns(g);
    auto selected = fused_sample(centroids, sampler);
    std::sort(selected.begin(), selected.end());

    CellGraph out;
    out.n = selected.size();
    out.label = label;
    out.source_id = std::move(source_id);
    out.sampler = sampler;
    out.edge_config = edge;
    Points t;
    for (auto i : selected) {
        out.features.push_back(g[i]);
        out.coords.push_back({cells[i].centroid_row, cells[i].centroid_col});
        t.push_back(overall_feature(out.features.back(), out.coords.back(), edge.alpha, edge.beta));
    }
    out.edges = build_adjacency(t, edge.k, edge.d, edge.symmetrize, edge.dilation);
    return out;
}

CellGraph build_graph(const Image& image, const LabeledMask& mask, const SamplerConfig& sampler, const EdgeConfig& edge,
                      int label, std::string source_id, const features::FeatureConfig& feature_cfg) {
    return graph_from_features(features::extract_node_features(image, mask, feature_cfg), sampler, edge, label,
                               std::move(source_id));
}

std::string serialize_graph(const CellGraph& g) {
    json j;
    j["n"] = g.n;
    j["label"] = g.label;
    j["coords"] = json::array();
    for (const auto& c : g.coords) j["coords"].push_back({c[0], c[1]});
    j["features"] = json::array();
    for (const auto& f : g.features) j["features"].push_back(f);
    j["edges"] = json::array();
    for (const auto& e : g.edges) j["edges"].push_back({e.src, e.dst});
    j["meta"] = {{"source_id", g.source_id},
                 {"sampler", {{"n_samples", g.sampler.n_samples},
                              {"fps_fraction", g.sampler.fps_fraction},
                              {"seed", g.sampler.seed}}},
                 {"edge", {{"k", g.edge_config.k},
                           {"d", g.edge_config.d},
                           {"alpha", g.edge_config.alpha},
                           {"beta", g.edge_config.beta},
                           {"symmetrize", g.edge_config.symmetrize},
                           {"dilation", g.edge_config.dilation}}}};
    return j.dump() + "\n";
}

namespace {

// Typed accessors that report the JSON pointer of the offending value.
class Reader {
public:
    const json& field(const json& obj, const std::string& key, const std::string& at) const {
        if (!obj.is_object()) fail(at, "expected an object");
        auto it = obj.find(key);
        if (it == obj.end()) fail(at + "/" + key, "missing field");
        return *it;
    }
    const json& array(const json& v, const std::string& at, std::size_t expected_size = npos) const {
        if (!v.is_array()) fail(at, "expected an array");
        if (expected_size != npos && v.size() != expected_size) {
            fail(at, "expected " + std::to_string(expected_size) + " entries, found " + std::to_string(v.size()));
        }
        return v;
    }
    double number(const json& v, const std::string& at) const {
        if (!v.is_number()) fail(at, "expected a number");
        return v.get<double>();
    }
    std::uint64_t unsigned_int(const json& v, const std::string& at) const {
        if (!v.is_number_unsigned()) fail(at, "expected a non-negative integer");
        return v.get<std::uint64_t>();
    }
    [[noreturn]] void fail(const std::string& at, const std::string& what) const {
        throw GraphParseError(at.empty() ? "/" : at, what);
    }
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

}  // namespace

CellGraph deserialize_graph(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw GraphParseError("byte " + std::to_string(e.byte), e.what());
    }
    const Reader rd;
    CellGraph g;
    g.n = rd.unsigned_int(rd.field(j, "n", ""), "/n");
    const json& label = rd.field(j, "label", "");
    if (!label.is_number_integer()) rd.fail("/label", "expected an integer");
    g.label = label.get<int>();

    const json& coords = rd.array(rd.field(j, "coords", ""), "/coords", g.n);
    for (std::size_t i = 0; i < g.n; ++i) {
        const std::string at = "/coords/" + std::to_string(i);
        const json& c = rd.array(coords[i], at, 2);
        g.coords.push_back({rd.number(c[0], at + "/0"), rd.number(c[1], at + "/1")});
    }
    const json& feats = rd.array(rd.field(j, "features", ""), "/features", g.n);
    for (std::size_t i = 0; i < g.n; ++i) {
        const std::string at = "/features/" + std::to_string(i);
        const json& f = rd.array(feats[i], at, kNumFeatures);
        std::array<double, kNumFeatures> row{};
        for (std::size_t k = 0; k < kNumFeatures; ++k) row[k] = rd.number(f[k], at + "/" + std::to_string(k));
        g.features.push_back(row);
    }
    const json& edges = rd.array(rd.field(j, "edges", ""), "/edges");
    for (std::size_t e = 0; e < edges.size(); ++e) {
        const std::string at = "/edges/" + std::to_string(e);
        const json& pair = rd.array(edges[e], at, 2);
        const auto src = rd.unsigned_int(pair[0], at + "/0");
        const auto dst = rd.unsigned_int(pair[1], at + "/1");
        if (src >= g.n || dst >= g.n) rd.fail(at, "node index out of range");
        if (src == dst) rd.fail(at, "self-loop");
        g.edges.push_back({static_cast<std::size_t>(src), static_cast<std::size_t>(dst)});
    }
    const json& meta = rd.field(j, "meta", "");
    const json& source = rd.field(meta, "source_id", "/meta");
    if (!source.is_string()) rd.fail("/meta/source_id", "expected a string");
    g.source_id = source.get<std::string>();
    const json& s = rd.field(meta, "sampler", "/meta");
    g.sampler.n_samples = rd.unsigned_int(rd.field(s, "n_samples", "/meta/sampler"), "/meta/sampler/n_samples");
    g.sampler.fps_fraction = rd.number(rd.field(s, "fps_fraction", "/meta/sampler"), "/meta/sampler/fps_fraction");
    g.sampler.seed = rd.unsigned_int(rd.field(s, "seed", "/meta/sampler"), "/meta/sampler/seed");
    const json& ec = rd.field(meta, "edge", "/meta");
    g.edge_config.k = rd.unsigned_int(rd.field(ec, "k", "/meta/edge"), "/meta/edge/k");
    g.edge_config.d = rd.number(rd.field(ec, "d", "/meta/edge"), "/meta/edge/d");
    g.edge_config.alpha = rd.number(rd.field(ec, "alpha", "/meta/edge"), "/meta/edge/alpha");
    g.edge_config.beta = rd.number(rd.field(ec, "beta", "/meta/edge"), "/meta/edge/beta");
    const json& sym = rd.field(ec, "symmetrize", "/meta/edge");
    if (!sym.is_boolean()) rd.fail("/meta/edge/symmetrize", "expected a boolean");
    g.edge_config.symmetrize = sym.get<bool>();
    g.edge_config.dilation = rd.unsigned_int(rd.field(ec, "dilation", "/meta/edge"), "/meta/edge/dilation");
    return g;
}

}  // namespace actnet::graph
