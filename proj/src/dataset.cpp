#include "actnet/dataset.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "actnet/graph.h"

namespace actnet::data {

using json = nlohmann::json;

namespace {

std::string join_lines(const std::vector<std::string>& lines) {
    std::string out = lines.size() == 1 ? "" : std::to_string(lines.size()) + " problems:";
    for (const auto& l : lines) out += (out.empty() ? "" : "\n  ") + l;
    return out;
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DatasetError({p.string() + ": cannot open"});
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
    if (!out) throw DatasetError({p.string() + ": write failed"});
}

}  // namespace

DatasetError::DatasetError(std::vector<std::string> problems)
    : std::runtime_error(join_lines(problems)), problems_(std::move(problems)) {}

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    throw std::invalid_argument("unknown split '" + s + "'");
}

std::vector<std::vector<std::size_t>> DatasetManifest::class_counts() const {
    std::vector<std::vector<std::size_t>> counts(2, std::vector<std::size_t>(num_classes(), 0));
    for (const auto& s : samples) {
        if (s.label >= 0 && static_cast<std::size_t>(s.label) < num_classes()) {
            ++counts[static_cast<std::size_t>(s.split)][static_cast<std::size_t>(s.label)];
        }
    }
    return counts;
}

std::vector<const SampleRecord*> DatasetManifest::split(Split s) const {
    std::vector<const SampleRecord*> out;
    for (const auto& r : samples)
        if (r.split == s) out.push_back(&r);
    return out;
}

// ---------------------------------------------------------------------------
// Manifest JSON

json to_json(const DatasetManifest& m) {
    json samples = json::array();
    for (const auto& s : m.samples) {
        json r = {{"id", s.id}, {"image", s.image}, {"mask", s.mask}, {"label", s.label}, {"split", to_string(s.split)}};
        if (!s.graph.empty()) r["graph"] = s.graph;
        samples.push_back(std::move(r));
    }
    const auto counts = m.class_counts();
    return {{"version", m.version},
            {"class_names", m.class_names},
            {"seed", m.seed},
            {"generator", m.generator},
            {"counts", {{"train", counts[0]}, {"test", counts[1]}}},
            {"samples", std::move(samples)}};
}

DatasetManifest manifest_from_json(const json& j) {
    std::vector<std::string> problems;
    auto fail = [&](const std::string& at, const std::string& what) { problems.push_back("manifest" + at + ": " + what); };
    if (!j.is_object()) throw DatasetError({"manifest: expected an object"});
    static const std::set<std::string> known{"version", "class_names", "seed", "generator", "counts", "samples"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) fail("/" + it.key(), "unknown key");

    DatasetManifest m;
    if (!j.contains("version") || !j["version"].is_number_integer()) {
        fail("/version", "expected an integer");
    } else if ((m.version = j["version"].get<int>()) != kManifestVersion) {
        fail("/version", "unsupported version " + std::to_string(m.version));
    }
    if (!j.contains("class_names") || !j["class_names"].is_array()) {
        fail("/class_names", "expected an array of strings");
    } else {
        for (const auto& n : j["class_names"]) {
            if (!n.is_string()) fail("/class_names", "expected an array of strings");
            else m.class_names.push_back(n.get<std::string>());
        }
        if (m.class_names.size() < 2) fail("/class_names", "at least two classes are required");
    }
    if (j.contains("seed")) {
        if (!j["seed"].is_number_unsigned()) fail("/seed", "expected a non-negative integer");
        else m.seed = j["seed"].get<std::uint64_t>();
    }
    if (j.contains("generator")) m.generator = j["generator"];
    if (!j.contains("samples") || !j["samples"].is_array()) {
        fail("/samples", "expected an array");
        throw DatasetError(problems);
    }
    std::set<std::string> ids;
    const auto& arr = j["samples"];
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string at = "/samples/" + std::to_string(i);
        const json& r = arr[i];
        if (!r.is_object()) {
            fail(at, "expected an object");
            continue;
        }
        SampleRecord s;
        bool ok = true;
        for (const char* key : {"id", "image", "mask"}) {
            if (!r.contains(key) || !r[key].is_string() || r[key].get<std::string>().empty()) {
                fail(at + "/" + key, "expected a non-empty string");
                ok = false;
            }
        }
        if (!ok) continue;
        s.id = r["id"].get<std::string>();
        s.image = r["image"].get<std::string>();
        s.mask = r["mask"].get<std::string>();
        if (r.contains("graph")) {
            if (!r["graph"].is_string()) fail(at + "/graph", "expected a string");
            else s.graph = r["graph"].get<std::string>();
        }
        if (!r.contains("label") || !r["label"].is_number_integer()) {
            fail(at + "/label", "expected an integer");
        } else {
            s.label = r["label"].get<int>();
            if (s.label < 0 || static_cast<std::size_t>(s.label) >= m.class_names.size()) {
                fail(at + "/label", "label " + std::to_string(s.label) + " outside [0, " +
                                        std::to_string(m.class_names.size()) + ")");
            }
        }
        try {
            s.split = split_from_string(r.value("split", std::string{}));
        } catch (const std::invalid_argument&) {
            fail(at + "/split", "expected \"train\" or \"test\"");
        }
        for (auto it = r.begin(); it != r.end(); ++it) {
            static const std::set<std::string> fields{"id", "image", "mask", "graph", "label", "split"};
            if (!fields.count(it.key())) fail(at + "/" + it.key(), "unknown key");
        }
        if (!ids.insert(s.id).second) fail(at + "/id", "duplicate id '" + s.id + "'");
        m.samples.push_back(std::move(s));
    }
    if (problems.empty() && j.contains("counts")) {
        const auto counts = m.class_counts();
        const json expected = {{"train", counts[0]}, {"test", counts[1]}};
        if (j["counts"] != expected) fail("/counts", "does not match the sample list");
    }
    if (!problems.empty()) throw DatasetError(problems);
    return m;
}

std::string serialize_manifest(const DatasetManifest& m) { return to_json(m).dump(2) + "\n"; }

DatasetManifest deserialize_manifest(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw DatasetError({std::string("manifest: ") + e.what()});
    }
    return manifest_from_json(j);
}

void save_manifest(const fs::path& root, const DatasetManifest& m) { write_text(root / "manifest.json", serialize_manifest(m)); }

DatasetManifest load_manifest(const fs::path& root) {
    const fs::path path = root / "manifest.json";
    DatasetManifest m;
    try {
        m = deserialize_manifest(read_text(path));
    } catch (const DatasetError& e) {
        std::vector<std::string> p;
        for (const auto& line : e.problems()) p.push_back(path.string() + ": " + line);
        throw DatasetError(p);
    }
    std::vector<std::string> problems;
    for (const auto& s : m.samples) {
        for (const std::string* rel : {&s.image, &s.mask, &s.graph}) {
            if (rel->empty()) continue;
            if (!fs::is_regular_file(root / *rel)) problems.push_back((root / *rel).string() + ": missing (sample " + s.id + ")");
        }
    }
    if (!problems.empty()) throw DatasetError(problems);
    return m;
}

// ---------------------------------------------------------------------------
// Synthetic patches

std::vector<ClassProfile> class_profiles(std::size_t classes) {
    if (classes < 2) throw std::invalid_argument("class_profiles: at least two classes are required");
    const ClassProfile base[3] = {
        {"sparse_round", 9.0, 4.4, 4.4, 0.45, 0.0, 0.0, 0.45, 0.0, 0, 0.0, 0.0, 0.10, 0.08},
        {"clustered_elongated", 22.0, 2.8, 4.6, 0.40, 0.2, 0.75, 0.92, 0.8, 2, 7.0, 0.8, 0.25, 0.0},
        {"bimodal", 15.0, 2.6, 6.0, 0.35, 0.45, 0.2, 0.6, -0.85, 0, 0.0, 0.0, 0.40, 0.18},
    };
    std::vector<ClassProfile> out;
    for (std::size_t c = 0; c < classes; ++c) {
        if (c < 3) {
            out.push_back(base[c]);
            continue;
        }
        const ClassProfile& a = base[c % 3];
        const ClassProfile& b = base[(c + 1) % 3];
        auto mix = [](double x, double y) { return 0.5 * (x + y); };
        ClassProfile p;
        p.name = "mixed_" + std::to_string(c);
        p.cells_mean = mix(a.cells_mean, b.cells_mean) * (1.0 + 0.3 * static_cast<double>(c / 3));
        p.size_small = mix(a.size_small, b.size_small);
        p.size_large = mix(a.size_large, b.size_large);
        p.size_sd = mix(a.size_sd, b.size_sd);
        p.large_fraction = mix(a.large_fraction, b.large_fraction);
        p.ecc_min = mix(a.ecc_min, b.ecc_min);
        p.ecc_max = mix(a.ecc_max, b.ecc_max);
        p.size_darkness_corr = mix(a.size_darkness_corr, b.size_darkness_corr);
        p.clusters = std::max(a.clusters, b.clusters);
        p.cluster_sd = std::max(a.cluster_sd, b.cluster_sd);
        p.aligned = mix(a.aligned, b.aligned);
        p.chromatin = mix(a.chromatin, b.chromatin);
        p.stroma_freq = mix(a.stroma_freq, b.stroma_freq) + 0.03 * static_cast<double>(c / 3);
        out.push_back(p);
    }
    return out;
}

json to_json(const ClassProfile& p) {
    return {{"name", p.name},
            {"cells_mean", p.cells_mean},
            {"size_small", p.size_small},
            {"size_large", p.size_large},
            {"size_sd", p.size_sd},
            {"large_fraction", p.large_fraction},
            {"ecc_min", p.ecc_min},
            {"ecc_max", p.ecc_max},
            {"size_darkness_corr", p.size_darkness_corr},
            {"clusters", p.clusters},
            {"cluster_sd", p.cluster_sd},
            {"aligned", p.aligned},
            {"chromatin", p.chromatin},
            {"stroma_freq", p.stroma_freq}};
}

namespace {

struct Ellipse {
    double r = 0.0, c = 0.0, a = 0.0, b = 0.0, theta = 0.0;
    bool contains(double y, double x, double grow = 0.0) const {
        const double dy = y - r, dx = x - c;
        const double u = dx * std::cos(theta) + dy * std::sin(theta);
        const double v = -dx * std::sin(theta) + dy * std::cos(theta);
        const double aa = a + grow, bb = b + grow;
        return (u * u) / (aa * aa) + (v * v) / (bb * bb) <= 1.0;
    }
};

constexpr int kPlacementTries = 60;
constexpr std::size_t kMinCellPixels = 6;

}  // namespace

Patch render_patch(const ClassProfile& p, std::size_t size, std::mt19937_64& rng) {
    if (size < 16) throw std::invalid_argument("render_patch: size must be at least 16");
    const double S = static_cast<double>(size);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t n_cells = std::max<std::size_t>(3, std::poisson_distribution<std::size_t>(p.cells_mean)(rng));

    std::vector<std::array<double, 2>> centers;
    for (std::size_t k = 0; k < p.clusters; ++k) centers.push_back({8.0 + unit(rng) * (S - 16.0), 8.0 + unit(rng) * (S - 16.0)});
    const double shared_theta = unit(rng) * std::numbers::pi;
    const double size_mid = p.size_small + p.large_fraction * (p.size_large - p.size_small);
    const double size_spread = std::max(0.5, 0.5 * (p.size_large - p.size_small) + p.size_sd);

    Patch out{Image(size, size, 3), LabeledMask(size, size)};
    std::vector<double> darkness;
    std::int32_t next = 1;
    for (std::size_t cell = 0; cell < n_cells; ++cell) {
        const bool large = unit(rng) < p.large_fraction;
        const double major = std::clamp((large ? p.size_large : p.size_small) + p.size_sd * normal(rng), 1.8, 9.0);
        const double ecc = p.ecc_min + (p.ecc_max - p.ecc_min) * unit(rng);
        const double minor = std::max(1.4, major * std::sqrt(1.0 - ecc * ecc));
        const double theta = unit(rng) < p.aligned ? shared_theta + 0.15 * normal(rng) : unit(rng) * std::numbers::pi;
        const double zs = (major - size_mid) / size_spread;
        const double rho = p.size_darkness_corr;
        const double dark = std::clamp(0.55 + 0.2 * (rho * zs + std::sqrt(1.0 - rho * rho) * normal(rng)), 0.15, 0.95);
        for (int attempt = 0; attempt < kPlacementTries; ++attempt) {
            Ellipse e{0.0, 0.0, major, minor, theta};
            if (!centers.empty() && attempt < kPlacementTries / 2) {
                const auto& ctr = centers[static_cast<std::size_t>(unit(rng) * static_cast<double>(centers.size())) % centers.size()];
                e.r = ctr[0] + p.cluster_sd * normal(rng);
                e.c = ctr[1] + p.cluster_sd * normal(rng);
            } else {
                e.r = major + unit(rng) * (S - 2.0 * major);
                e.c = major + unit(rng) * (S - 2.0 * major);
            }
            const int r0 = static_cast<int>(std::floor(e.r - major - 2.0)), r1 = static_cast<int>(std::ceil(e.r + major + 2.0));
            const int c0 = static_cast<int>(std::floor(e.c - major - 2.0)), c1 = static_cast<int>(std::ceil(e.c + major + 2.0));
            bool fits = true;
            std::vector<std::pair<std::size_t, std::size_t>> pixels;
            for (int y = r0; y <= r1 && fits; ++y) {
                for (int x = c0; x <= c1; ++x) {
                    const double py = y + 0.5, px = x + 0.5;
                    if (!e.contains(py, px, 1.5)) continue;
                    const bool inside = y >= 0 && x >= 0 && y < static_cast<int>(size) && x < static_cast<int>(size);
                    if (e.contains(py, px) && !inside) {
                        fits = false;
                        break;
                    }
                    if (inside && out.mask.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) != 0) {
                        fits = false;
                        break;
                    }
                    if (inside && e.contains(py, px)) pixels.emplace_back(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
                }
            }
            if (!fits || pixels.size() < kMinCellPixels) continue;
            for (auto [y, x] : pixels) out.mask.at(y, x) = next;
            darkness.push_back(dark);
            ++next;
            break;
        }
    }

    // Eosin-pink background with optional fibres, hematoxylin-purple nuclei.
    constexpr double kPink[3] = {0.94, 0.78, 0.87};
    constexpr double kPurple[3] = {0.32, 0.16, 0.50};
    const double phi = unit(rng) * std::numbers::pi, phase = unit(rng) * 2.0 * std::numbers::pi;
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double fibre = p.stroma_freq > 0.0
                                     ? 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * p.stroma_freq *
                                                                (x * std::cos(phi) + y * std::sin(phi)) + phase)
                                     : 0.0;
            const double shade = 1.0 - 0.12 * fibre + 0.03 * normal(rng);
            const std::int32_t label = out.mask.at(y, x);
            const double d = label > 0 ? std::clamp(darkness[static_cast<std::size_t>(label - 1)] * (1.0 + p.chromatin * normal(rng)), 0.0, 1.0) : 0.0;
            for (std::size_t ch = 0; ch < 3; ++ch) {
                const double bg = kPink[ch] * shade;
                out.image.at(y, x, ch) = std::clamp(bg * (1.0 - d) + kPurple[ch] * d + 0.02 * normal(rng), 0.0, 1.0);
            }
        }
    }
    return out;
}

DatasetManifest generate_synthetic(const GeneratorConfig& cfg, std::uint64_t seed, const fs::path& root) {
    cfg.validate();
    const auto profiles = class_profiles(cfg.classes);
    fs::create_directories(root / "images");
    fs::create_directories(root / "masks");

    DatasetManifest m;
    m.seed = seed;
    json echo = {{"classes", cfg.classes},
                 {"train_per_class", cfg.train_per_class},
                 {"test_per_class", cfg.test_per_class},
                 {"image_size", cfg.image_size},
                 {"profiles", json::array()}};
    for (const auto& p : profiles) {
        m.class_names.push_back(p.name);
        echo["profiles"].push_back(to_json(p));
    }
    m.generator = echo;
    for (std::size_t c = 0; c < cfg.classes; ++c) {
        for (Split split : {Split::train, Split::test}) {
            const std::size_t count = split == Split::train ? cfg.train_per_class : cfg.test_per_class;
            for (std::size_t k = 0; k < count; ++k) {
                std::ostringstream id;
                id << "c" << c << "_" << to_string(split) << "_" << std::setw(4) << std::setfill('0') << k;
                std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                                  static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(split),
                                  static_cast<std::uint32_t>(k)};
                std::mt19937_64 rng(seq);
                const Patch patch = render_patch(profiles[c], cfg.image_size, rng);
                SampleRecord r;
                r.id = id.str();
                r.image = "images/" + r.id + ".ppm";
                r.mask = "masks/" + r.id + ".pgm";
                r.label = static_cast<int>(c);
                r.split = split;
                write_pnm(root / r.image, patch.image);
                write_label_mask(root / r.mask, patch.mask);
                m.samples.push_back(std::move(r));
            }
        }
    }
    save_manifest(root, m);
    return m;
}

// ---------------------------------------------------------------------------
// Ingestion

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<fs::path> sorted_subdirs(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

DatasetManifest scan_layout(const fs::path& root, std::vector<std::string>& problems) {
    std::vector<std::pair<Split, fs::path>> split_dirs;
    if (fs::is_directory(root / "train") || fs::is_directory(root / "test")) {
        for (Split s : {Split::train, Split::test})
            if (fs::is_directory(root / to_string(s))) split_dirs.emplace_back(s, root / to_string(s));
    } else {
        split_dirs.emplace_back(Split::train, root);
    }
    std::set<std::string> names;
    for (const auto& [split, dir] : split_dirs)
        for (const auto& d : sorted_subdirs(dir)) names.insert(d.filename().string());
    DatasetManifest m;
    m.class_names.assign(names.begin(), names.end());
    for (const auto& [split, dir] : split_dirs) {
        for (std::size_t label = 0; label < m.class_names.size(); ++label) {
            const fs::path cdir = dir / m.class_names[label];
            if (!fs::is_directory(cdir)) continue;
            std::vector<fs::path> files;
            for (const auto& e : fs::directory_iterator(cdir))
                if (e.is_regular_file()) files.push_back(e.path());
            std::sort(files.begin(), files.end());
            for (const auto& f : files) {
                const std::string name = f.filename().string();
                if (ends_with(name, ".mask.pgm") || !(ends_with(name, ".ppm") || ends_with(name, ".pgm"))) continue;
                const std::string stem = f.stem().string();
                const fs::path mask = cdir / (stem + ".mask.pgm");
                if (!fs::is_regular_file(mask)) {
                    problems.push_back(mask.string() + ": missing mask for " + f.string());
                    continue;
                }
                SampleRecord r;
                r.id = to_string(split) + "_" + m.class_names[label] + "_" + stem;
                r.image = fs::relative(f, root).generic_string();
                r.mask = fs::relative(mask, root).generic_string();
                r.label = static_cast<int>(label);
                r.split = split;
                m.samples.push_back(std::move(r));
            }
        }
    }
    if (m.class_names.size() < 2) problems.push_back(root.string() + ": expected at least two class directories");
    return m;
}

}  // namespace

DatasetManifest ingest_dataset(const fs::path& root) {
    if (!fs::is_directory(root)) throw DatasetError({root.string() + ": not a directory"});
    std::vector<std::string> problems;
    DatasetManifest m;
    if (fs::exists(root / "manifest.json")) {
        try {
            m = load_manifest(root);
        } catch (const DatasetError& e) {
            problems = e.problems();
        }
    } else {
        m = scan_layout(root, problems);
    }
    for (const auto& s : m.samples) {
        std::optional<Image> image;
        std::optional<LabeledMask> mask;
        try {
            if (fs::exists(root / s.image)) image = read_pnm(root / s.image);
        } catch (const ImageIoError& e) {
            problems.push_back(e.what());
        }
        try {
            if (fs::exists(root / s.mask)) mask = read_label_mask(root / s.mask);
        } catch (const ImageIoError& e) {
            problems.push_back(e.what());
        }
        if (image && mask && (image->width != mask->width || image->height != mask->height)) {
            problems.push_back((root / s.mask).string() + ": size differs from " + (root / s.image).string());
        }
    }
    if (!problems.empty()) throw DatasetError(problems);
    return m;
}

GraphBuildReport build_graph_dataset(const DatasetManifest& manifest, const fs::path& root, const RunConfig& cfg,
                                     std::size_t jobs) {
    cfg.validate();
    fs::create_directories(root / "graphs");
    const std::size_t n = manifest.samples.size();
    std::vector<std::optional<std::string>> errors(n);
    std::atomic<std::size_t> cursor{0};
    auto worker = [&] {
        for (std::size_t i = cursor++; i < n; i = cursor++) {
            const SampleRecord& s = manifest.samples[i];
            try {
                const Image image = read_pnm(root / s.image);
                const LabeledMask mask = read_label_mask(root / s.mask);
                const auto g = graph::build_graph(image, mask, cfg.sampler, cfg.edge, s.label, s.id, cfg.features);
                write_text(root / "graphs" / (s.id + ".json"), graph::serialize_graph(g));
            } catch (const graph::EmptyGraphError&) {
                errors[i] = "empty graph: the mask has no cells";
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < std::max<std::size_t>(1, std::min(jobs, n)); ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    GraphBuildReport report;
    report.manifest = manifest;
    report.manifest.samples.clear();
    for (std::size_t i = 0; i < n; ++i) {
        SampleRecord s = manifest.samples[i];
        if (errors[i]) {
            report.failures.push_back({s.id, *errors[i]});
            std::error_code ec;
            fs::remove(root / "graphs" / (s.id + ".json"), ec);
            continue;
        }
        s.graph = "graphs/" + s.id + ".json";
        report.manifest.samples.push_back(std::move(s));
    }
    save_manifest(root, report.manifest);
    return report;
}

}  // namespace actnet::data
