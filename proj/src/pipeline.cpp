#include "actnet/pipeline.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "actnet/checkpoint.h"
#include "actnet/cnn.h"
#include "actnet/gcn.h"
#include "actnet/graph.h"
#include "actnet/image.h"

namespace actnet::pipeline {

using json = nlohmann::json;

namespace {

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error(p.string() + ": cannot open");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error(p.string() + ": write failed");
}

json read_json(const fs::path& p) {
    try {
        return json::parse(read_text(p));
    } catch (const json::parse_error& e) {
        throw std::runtime_error(p.string() + ": " + e.what());
    }
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

RunConfig with_seed(RunConfig cfg, std::uint64_t seed) {
    cfg.seed = seed;
    cfg.cotrain.seed = seed;
    cfg.segadapt.seed = seed;
    return cfg;
}

constexpr std::uint64_t kGcnSeedOffset = 0x9e3779b97f4a7c15ULL;

}  // namespace

std::vector<cotrain::Sample> load_samples(const data::DatasetManifest& manifest, const fs::path& root, data::Split split) {
    std::vector<cotrain::Sample> out;
    std::vector<std::string> problems;
    for (const auto* r : manifest.split(split)) {
        if (r->graph.empty()) {
            problems.push_back(r->id + ": no graph recorded (run build-graphs first)");
            continue;
        }
        try {
            cotrain::Sample s;
            s.image = cnn::standardize_channels(cnn::image_tensor(read_pnm(root / r->image)));
            graph::CellGraph g;
            try {
                g = graph::deserialize_graph(read_text(root / r->graph));
            } catch (const graph::GraphParseError& e) {
                throw std::runtime_error((root / r->graph).string() + ": " + e.what());
            }
            if (g.label != r->label) throw std::runtime_error((root / r->graph).string() + ": label differs from manifest");
            s.graph = gcn::prepare_graph(g);
            s.label = r->label;
            s.id = r->id;
            out.push_back(std::move(s));
        } catch (const std::exception& e) {
            problems.push_back(e.what());
        }
    }
    if (!problems.empty()) throw data::DatasetError(problems);
    return out;
}

json to_json(const cotrain::MetricsReport& r) {
    return {{"num_classes", r.num_classes}, {"accuracy", r.accuracy},   {"macro_f1", r.macro_f1},
            {"precision", r.precision},     {"recall", r.recall},       {"f1", r.f1},
            {"support", r.support},         {"confusion", r.confusion}, {"degenerate_classes", r.degenerate_classes}};
}

cotrain::MetricsReport metrics_from_json(const json& j) {
    cotrain::MetricsReport r;
    try {
        r.num_classes = j.at("num_classes").get<std::size_t>();
        r.accuracy = j.at("accuracy").get<double>();
        r.macro_f1 = j.at("macro_f1").get<double>();
        r.precision = j.at("precision").get<std::vector<double>>();
        r.recall = j.at("recall").get<std::vector<double>>();
        r.f1 = j.at("f1").get<std::vector<double>>();
        r.support = j.at("support").get<std::vector<std::size_t>>();
        r.confusion = j.at("confusion").get<std::vector<std::vector<std::size_t>>>();
        r.degenerate_classes = j.at("degenerate_classes").get<std::vector<std::size_t>>();
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("metrics: ") + e.what());
    }
    if (r.f1.size() != r.num_classes) throw std::runtime_error("metrics: f1 has the wrong length");
    return r;
}

json run_echo(const RunConfig& cfg, cotrain::Mode mode, const fs::path& dataset) {
    return {{"command", "train"}, {"mode", cotrain::to_string(mode)}, {"dataset", dataset.generic_string()},
            {"run_config", to_json(cfg)}};
}

RunSummary run_train(const data::DatasetManifest& manifest, const fs::path& dataset, const RunConfig& cfg_in,
                     cotrain::Mode mode, const fs::path& out,
                     const std::function<void(const cotrain::EpochRecord&)>& on_epoch) {
    const RunConfig cfg = with_seed(cfg_in, cfg_in.seed);
    cfg.validate();
    if (manifest.num_classes() != cfg.cnn.num_classes) {
        throw std::invalid_argument("dataset has " + std::to_string(manifest.num_classes()) + " classes, config expects " +
                                    std::to_string(cfg.cnn.num_classes));
    }
    const auto train = load_samples(manifest, dataset, data::Split::train);
    const auto test = load_samples(manifest, dataset, data::Split::test);
    if (train.empty()) throw std::invalid_argument("dataset has no training samples");
    if (test.empty()) throw std::invalid_argument("dataset has no test samples");

    cnn::CnnModel cnn_model(cfg.cnn, cfg.seed);
    gcn::GcnModel gcn_model(cfg.gcn, cfg.seed ^ kGcnSeedOffset);
    RunSummary summary{out, cfg.seed, mode, cotrain::co_train(cnn_model, gcn_model, train, test, cfg.cotrain, mode, on_epoch)};

    fs::create_directories(out);
    write_text(out / "config.json", run_echo(cfg, mode, dataset).dump(2) + "\n");
    write_text(out / "history.csv", cotrain::history_csv(summary.result.history));
    const json metrics = {{"mode", cotrain::to_string(mode)},
                          {"seed", cfg.seed},
                          {"class_names", manifest.class_names},
                          {"cnn", to_json(summary.result.cnn_report)},
                          {"gcn", to_json(summary.result.gcn_report)}};
    write_text(out / "metrics.json", metrics.dump(2) + "\n");
    save_checkpoint((out / "cnn.ckpt").string(), "cnn", to_json(cfg), cnn_model.parameters());
    save_checkpoint((out / "gcn.ckpt").string(), "gcn", to_json(cfg), gcn_model.parameters());

    std::ostringstream csv;
    csv << "id,label,pred_cnn,pred_gcn";
    const std::size_t cnn_dim = cnn_model.config().classifier_width > 0 ? cnn_model.config().classifier_width
                                                                        : cnn_model.config().blocks.back().out_channels;
    for (std::size_t i = 0; i < cnn_dim; ++i) csv << ",cnn_emb" << i;
    for (std::size_t i = 0; i < cfg.gcn.hidden_dim; ++i) csv << ",gcn_emb" << i;
    csv << "\n";
    std::mt19937_64 unused(0);
    for (std::size_t i = 0; i < test.size(); ++i) {
        csv << test[i].id << "," << test[i].label << "," << summary.result.cnn_predictions[i] << ","
            << summary.result.gcn_predictions[i];
        const Tensor ce = cnn_model.forward(test[i].image, false, unused).embedding.detach();
        const Tensor ge = gcn_model.embedding(test[i].graph);
        for (double v : ce.data()) csv << "," << fmt(v);
        for (double v : ge.data()) csv << "," << fmt(v);
        csv << "\n";
    }
    write_text(out / "features.csv", csv.str());
    return summary;
}

json sweep_summary(const std::vector<RunSummary>& runs) {
    json j = {{"runs", runs.size()}, {"seeds", json::array()}};
    if (!runs.empty()) j["mode"] = cotrain::to_string(runs.front().mode);
    for (const auto& r : runs) j["seeds"].push_back(r.seed);
    auto stats = [&](auto pick) {
        std::vector<double> v;
        for (const auto& r : runs) v.push_back(pick(r.result));
        const double n = static_cast<double>(v.size());
        const double mean = v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / n;
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        return json{{"mean", mean}, {"std", v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0}, {"values", v}};
    };
    j["cnn"] = {{"accuracy", stats([](const cotrain::TrainResult& t) { return t.cnn_report.accuracy; })},
                {"macro_f1", stats([](const cotrain::TrainResult& t) { return t.cnn_report.macro_f1; })}};
    j["gcn"] = {{"accuracy", stats([](const cotrain::TrainResult& t) { return t.gcn_report.accuracy; })},
                {"macro_f1", stats([](const cotrain::TrainResult& t) { return t.gcn_report.macro_f1; })}};
    return j;
}

std::vector<RunSummary> run_sweep(const data::DatasetManifest& manifest, const fs::path& dataset, const RunConfig& cfg,
                                  cotrain::Mode mode, std::size_t seeds, const fs::path& out, std::size_t jobs) {
    if (seeds == 0) throw std::invalid_argument("run_sweep: seeds must be positive");
    std::vector<std::optional<RunSummary>> results(seeds);
    std::vector<std::string> errors(seeds);
    std::atomic<std::size_t> cursor{0};
    auto worker = [&] {
        for (std::size_t i = cursor++; i < seeds; i = cursor++) {
            const std::uint64_t s = cfg.seed + i;
            try {
                results[i] = run_train(manifest, dataset, with_seed(cfg, s), mode, out / ("seed_" + std::to_string(s)));
            } catch (const std::exception& e) {
                errors[i] = "seed " + std::to_string(s) + ": " + e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < std::max<std::size_t>(1, std::min(jobs, seeds)); ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    std::vector<std::string> failed;
    for (const auto& e : errors)
        if (!e.empty()) failed.push_back(e);
    if (!failed.empty()) throw data::DatasetError(failed);
    std::vector<RunSummary> runs;
    for (auto& r : results) runs.push_back(std::move(*r));
    fs::create_directories(out);
    write_text(out / "summary.json", sweep_summary(runs).dump(2) + "\n");
    return runs;
}

// ---------------------------------------------------------------------------

ExplainResult run_explain(const std::vector<fs::path>& checkpoints, const fs::path& image_path,
                          std::optional<std::size_t> class_id, const fs::path& out, bool shared_normalization) {
    if (checkpoints.empty() || checkpoints.size() > 2) throw std::invalid_argument("explain takes one or two checkpoints");
    const Image image = read_pnm(image_path);
    std::vector<cnn::CamMap> maps;
    std::vector<std::size_t> predicted;
    for (const auto& path : checkpoints) {
        const Checkpoint ck = load_checkpoint(path.string());
        if (ck.kind != "cnn") throw CheckpointError(path.string(), "expected a cnn checkpoint, found '" + ck.kind + "'");
        cnn::CnnModel model(run_config_from_json(ck.config).cnn, 0);
        restore_parameters(ck, model.parameters());
        const Tensor x = cnn::standardize_channels(cnn::image_tensor(image));
        const auto& mc = model.config();
        if (x.shape() != Shape{mc.channels, mc.height, mc.width}) {
            throw std::invalid_argument(image_path.string() + ": image is " + shape_str(x.shape()) + ", model expects " +
                                        shape_str({mc.channels, mc.height, mc.width}));
        }
        if (class_id && *class_id >= mc.num_classes) {
            throw std::out_of_range("class " + std::to_string(*class_id) + " outside [0, " + std::to_string(mc.num_classes) + ")");
        }
        const auto pred = static_cast<std::size_t>(cotrain::argmax(model.forward_eval(x)));
        predicted.push_back(pred);
        maps.push_back(cnn::grad_cam(model, x, class_id.value_or(pred)));
    }
    const bool shared = shared_normalization && maps.size() == 2;
    if (shared) {
        const double top = std::max(maps[0].peak, maps[1].peak);
        for (auto& m : maps) {
            const double scale = top > 0.0 ? m.peak / top : 0.0;
            for (double& v : m.values) v *= scale;
        }
    }
    fs::create_directories(out);
    ExplainResult result;
    result.info = {{"image", image_path.generic_string()},
                   {"shared_normalization", shared},
                   {"requested_class", class_id ? json(*class_id) : json(nullptr)},
                   {"maps", json::array()}};
    for (std::size_t i = 0; i < maps.size(); ++i) {
        const std::string name = maps.size() == 1 ? "cam.pgm" : (i == 0 ? "cam_a.pgm" : "cam_b.pgm");
        Image gray(maps[i].width, maps[i].height, 1);
        gray.pixels = maps[i].values;
        write_pnm(out / name, gray);
        result.maps.push_back(out / name);
        result.info["maps"].push_back({{"file", name},
                                       {"checkpoint", checkpoints[i].generic_string()},
                                       {"class", maps[i].class_id},
                                       {"predicted", predicted[i]},
                                       {"logits", maps[i].logits},
                                       {"peak", maps[i].peak},
                                       {"height", maps[i].height},
                                       {"width", maps[i].width}});
    }
    result.sidecar = out / "cam.json";
    write_text(result.sidecar, result.info.dump(2) + "\n");
    return result;
}

// ---------------------------------------------------------------------------

namespace {

struct RunRow {
    std::string dir;
    std::string mode;
    std::uint64_t seed = 0;
    cotrain::MetricsReport cnn, gcn;
};

void collect_runs(const fs::path& p, std::vector<fs::path>& out) {
    if (fs::is_regular_file(p / "metrics.json")) {
        out.push_back(p);
        return;
    }
    std::vector<fs::path> sub;
    if (fs::is_directory(p))
        for (const auto& e : fs::directory_iterator(p))
            if (e.is_directory() && fs::is_regular_file(e.path() / "metrics.json")) sub.push_back(e.path());
    if (sub.empty()) throw std::runtime_error(p.string() + ": not a run directory (no metrics.json)");
    std::sort(sub.begin(), sub.end());
    out.insert(out.end(), sub.begin(), sub.end());
}

json branch_json(const cotrain::MetricsReport& r) { return {{"accuracy", r.accuracy}, {"macro_f1", r.macro_f1}, {"f1", r.f1}}; }

json branch_delta(const cotrain::MetricsReport& a, const cotrain::MetricsReport& b) {
    std::vector<double> f1(a.f1.size());
    for (std::size_t k = 0; k < f1.size(); ++k) f1[k] = a.f1[k] - b.f1[k];
    return {{"accuracy", a.accuracy - b.accuracy}, {"macro_f1", a.macro_f1 - b.macro_f1}, {"f1", f1}};
}

}  // namespace

json write_report(const std::vector<fs::path>& inputs, const fs::path& out) {
    if (inputs.empty()) throw std::invalid_argument("report needs at least one run directory");
    std::vector<fs::path> dirs;
    for (const auto& p : inputs) collect_runs(p, dirs);
    std::vector<RunRow> rows;
    for (const auto& d : dirs) {
        const json m = read_json(d / "metrics.json");
        RunRow r;
        r.dir = d.generic_string();
        try {
            r.mode = m.at("mode").get<std::string>();
            r.seed = m.at("seed").get<std::uint64_t>();
            r.cnn = metrics_from_json(m.at("cnn"));
            r.gcn = metrics_from_json(m.at("gcn"));
        } catch (const std::exception& e) {
            throw std::runtime_error((d / "metrics.json").string() + ": " + e.what());
        }
        rows.push_back(std::move(r));
    }
    const std::size_t classes = rows.front().cnn.num_classes;
    for (const auto& r : rows) {
        if (r.cnn.num_classes != classes || r.gcn.num_classes != classes) {
            throw std::invalid_argument(r.dir + ": has " + std::to_string(r.cnn.num_classes) + " classes, expected " +
                                        std::to_string(classes));
        }
    }

    json report = {{"num_classes", classes}, {"rows", json::array()}, {"means", json::object()}};
    std::ostringstream csv;
    csv << "run,mode,seed";
    for (const std::string prefix : {"", "delta_"}) {
        for (const char* b : {"cnn", "gcn"}) {
            csv << "," << prefix << b << "_accuracy," << prefix << b << "_macro_f1";
            for (std::size_t k = 0; k < classes; ++k) csv << "," << prefix << b << "_f1_" << k;
        }
    }
    csv << "\n";
    for (const auto& r : rows) {
        json row = {{"run", r.dir}, {"mode", r.mode}, {"seed", r.seed}, {"cnn", branch_json(r.cnn)}, {"gcn", branch_json(r.gcn)}};
        const RunRow* partner = nullptr;
        if (r.mode == "cotrain") {
            for (const auto& o : rows)
                if (o.mode == "independent" && o.seed == r.seed) partner = &o;
        }
        csv << r.dir << "," << r.mode << "," << r.seed;
        for (const auto* m : {&r.cnn, &r.gcn}) {
            csv << "," << fmt(m->accuracy) << "," << fmt(m->macro_f1);
            for (double f : m->f1) csv << "," << fmt(f);
        }
        if (partner) {
            row["delta"] = {{"cnn", branch_delta(r.cnn, partner->cnn)}, {"gcn", branch_delta(r.gcn, partner->gcn)}};
            row["paired_with"] = partner->dir;
            for (const char* b : {"cnn", "gcn"}) {
                const json& d = row["delta"][b];
                csv << "," << fmt(d["accuracy"].get<double>()) << "," << fmt(d["macro_f1"].get<double>());
                for (const auto& f : d["f1"]) csv << "," << fmt(f.get<double>());
            }
        } else {
            for (std::size_t i = 0; i < 2 * (classes + 2); ++i) csv << ",";
        }
        csv << "\n";
        report["rows"].push_back(std::move(row));
    }
    std::map<std::string, std::vector<const RunRow*>> by_mode;
    for (const auto& r : rows) by_mode[r.mode].push_back(&r);
    for (const auto& [mode, list] : by_mode) {
        json entry = {{"runs", list.size()}};
        for (const char* b : {"cnn", "gcn"}) {
            double acc = 0.0, f1 = 0.0;
            for (const auto* r : list) {
                const auto& m = std::string(b) == "cnn" ? r->cnn : r->gcn;
                acc += m.accuracy;
                f1 += m.macro_f1;
            }
            entry[b] = {{"accuracy", acc / static_cast<double>(list.size())}, {"macro_f1", f1 / static_cast<double>(list.size())}};
        }
        report["means"][mode] = entry;
    }
    if (by_mode.count("cotrain") && by_mode.count("independent")) {
        const json& c = report["means"]["cotrain"];
        const json& i = report["means"]["independent"];
        for (const char* b : {"cnn", "gcn"}) {
            report["mean_delta"][b] = {{"accuracy", c[b]["accuracy"].get<double>() - i[b]["accuracy"].get<double>()},
                                       {"macro_f1", c[b]["macro_f1"].get<double>() - i[b]["macro_f1"].get<double>()}};
        }
    }
    fs::create_directories(out);
    write_text(out / "report.csv", csv.str());
    write_text(out / "report.json", report.dump(2) + "\n");
    return report;
}

}  // namespace actnet::pipeline
