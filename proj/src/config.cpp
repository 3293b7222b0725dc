#include "actnet/config.h"

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>

namespace actnet {

using json = nlohmann::json;

void GeneratorConfig::validate() const {
    if (classes < 2) throw std::invalid_argument("generator.classes must be at least 2");
    if (train_per_class == 0) throw std::invalid_argument("generator.train_per_class must be positive");
    if (image_size < 16) throw std::invalid_argument("generator.image_size must be at least 16");
}

void RunConfig::validate() const {
    generator.validate();
    sampler.validate();
    edge.validate();
    gcn.validate();
    cnn.validate();
    cotrain.validate();
    segadapt.validate();
    if (edge.dilation != gcn.dilation) throw std::invalid_argument("edge.dilation must equal gcn.dilation");
    if (gcn.num_classes != generator.classes || cnn.num_classes != generator.classes) {
        throw std::invalid_argument("gcn/cnn class counts must equal generator.classes");
    }
    if (cnn.height != generator.image_size || cnn.width != generator.image_size) {
        throw std::invalid_argument("cnn input size must equal generator.image_size");
    }
    if (features.glcm.levels < 2) throw std::invalid_argument("features.glcm_levels must be at least 2");
    if (features.glcm.distance == 0) throw std::invalid_argument("features.glcm_distance must be positive");
    if (seg_domain.count == 0 || seg_domain.size < 8 || seg_domain.size % 4 != 0) {
        throw std::invalid_argument("seg_domain needs count > 0 and a size that is a multiple of 4, at least 8");
    }
}

json to_json(const RunConfig& c) {
    json blocks = json::array();
    for (const auto& b : c.cnn.blocks) blocks.push_back({b.out_channels, b.stride});
    const auto& p = c.cotrain.plateau;
    const auto& a = c.cotrain.adamw;
    return {
        {"seed", c.seed},
        {"paths", {{"data", c.paths.data}, {"out", c.paths.out}}},
        {"generator",
         {{"classes", c.generator.classes},
          {"train_per_class", c.generator.train_per_class},
          {"test_per_class", c.generator.test_per_class},
          {"image_size", c.generator.image_size}}},
        {"features",
         {{"ring_width", c.features.ring_width},
          {"glcm_levels", c.features.glcm.levels},
          {"glcm_distance", c.features.glcm.distance}}},
        {"sampler", {{"n_samples", c.sampler.n_samples}, {"fps_fraction", c.sampler.fps_fraction}, {"seed", c.sampler.seed}}},
        {"edge",
         {{"k", c.edge.k}, {"d", c.edge.d}, {"alpha", c.edge.alpha}, {"beta", c.edge.beta}, {"symmetrize", c.edge.symmetrize}}},
        {"gcn",
         {{"depth", c.gcn.depth},
          {"hidden_dim", c.gcn.hidden_dim},
          {"backbone", gcn::to_string(c.gcn.backbone)},
          {"dropout", c.gcn.dropout},
          {"topk_k", c.gcn.topk_k},
          {"dilation", c.gcn.dilation}}},
        {"cnn",
         {{"blocks", blocks}, {"classifier_width", c.cnn.classifier_width}, {"dropout", c.cnn.dropout}}},
        {"cotrain",
         {{"d_kl", std::isinf(c.cotrain.d_kl) ? json("inf") : json(c.cotrain.d_kl)},
          {"ls_alpha", c.cotrain.ls_alpha},
          {"lr", c.cotrain.lr},
          {"batch_size", c.cotrain.batch_size},
          {"epochs", c.cotrain.epochs},
          {"per_sample_gate", c.cotrain.per_sample_gate},
          {"plateau", {{"factor", p.factor}, {"patience", p.patience}, {"min_lr", p.min_lr}}},
          {"adamw", {{"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}, {"weight_decay", a.weight_decay}}}}},
        {"segadapt",
         {{"lambda_adv", c.segadapt.weights.lambda_adv},
          {"lambda_recons", c.segadapt.weights.lambda_recons},
          {"entropy_on_target", c.segadapt.entropy_on_target},
          {"epochs", c.segadapt.epochs},
          {"batch_size", c.segadapt.batch_size},
          {"lr", c.segadapt.lr},
          {"width", c.segadapt.width},
          {"domain_count", c.seg_domain.count},
          {"domain_size", c.seg_domain.size}}},
    };
}

namespace {

// Reads the keys of one object and rejects anything it was not asked for.
class Section {
public:
    Section(const json& j, std::string at) : j_(j), at_(std::move(at)) {
        if (!j_.is_object()) throw ConfigError(at_.empty() ? "/" : at_, "expected an object");
    }

    const json* find(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }
    std::string where(const std::string& key) const { return at_ + "/" + key; }

    void get(const std::string& key, std::size_t& out) {
        if (const json* v = find(key)) {
            if (!v->is_number_unsigned()) throw ConfigError(where(key), "expected a non-negative integer");
            out = v->get<std::size_t>();
        }
    }
    void get(const std::string& key, std::uint64_t& out, int) {
        std::size_t v = out;
        get(key, v);
        out = v;
    }
    void get(const std::string& key, double& out) {
        if (const json* v = find(key)) {
            if (v->is_string() && v->get<std::string>() == "inf") {
                out = std::numeric_limits<double>::infinity();
                return;
            }
            if (!v->is_number()) throw ConfigError(where(key), "expected a number");
            out = v->get<double>();
        }
    }
    void get(const std::string& key, bool& out) {
        if (const json* v = find(key)) {
            if (!v->is_boolean()) throw ConfigError(where(key), "expected a boolean");
            out = v->get<bool>();
        }
    }
    void get(const std::string& key, std::string& out) {
        if (const json* v = find(key)) {
            if (!v->is_string()) throw ConfigError(where(key), "expected a string");
            out = v->get<std::string>();
        }
    }
    std::optional<Section> section(const std::string& key) {
        if (const json* v = find(key)) return Section(*v, where(key));
        return std::nullopt;
    }
    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) throw ConfigError(where(it.key()), "unknown key");
        }
    }

private:
    const json& j_;
    std::string at_;
    std::set<std::string> seen_;
};

}  // namespace

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    Section root(j, "");
    root.get("seed", c.seed, 0);
    if (auto s = root.section("paths")) {
        s->get("data", c.paths.data);
        s->get("out", c.paths.out);
        s->finish();
    }
    if (auto s = root.section("generator")) {
        s->get("classes", c.generator.classes);
        s->get("train_per_class", c.generator.train_per_class);
        s->get("test_per_class", c.generator.test_per_class);
        s->get("image_size", c.generator.image_size);
        s->finish();
    }
    if (auto s = root.section("features")) {
        s->get("ring_width", c.features.ring_width);
        s->get("glcm_levels", c.features.glcm.levels);
        s->get("glcm_distance", c.features.glcm.distance);
        s->finish();
    }
    if (auto s = root.section("sampler")) {
        s->get("n_samples", c.sampler.n_samples);
        s->get("fps_fraction", c.sampler.fps_fraction);
        s->get("seed", c.sampler.seed, 0);
        s->finish();
    }
    if (auto s = root.section("edge")) {
        s->get("k", c.edge.k);
        s->get("d", c.edge.d);
        s->get("alpha", c.edge.alpha);
        s->get("beta", c.edge.beta);
        s->get("symmetrize", c.edge.symmetrize);
        s->finish();
    }
    if (auto s = root.section("gcn")) {
        s->get("depth", c.gcn.depth);
        s->get("hidden_dim", c.gcn.hidden_dim);
        std::string backbone = gcn::to_string(c.gcn.backbone);
        s->get("backbone", backbone);
        try {
            c.gcn.backbone = gcn::backbone_from_string(backbone);
        } catch (const std::invalid_argument& e) {
            throw ConfigError("/gcn/backbone", e.what());
        }
        s->get("dropout", c.gcn.dropout);
        s->get("topk_k", c.gcn.topk_k);
        s->get("dilation", c.gcn.dilation);
        s->finish();
    }
    if (auto s = root.section("cnn")) {
        if (const json* b = s->find("blocks")) {
            if (!b->is_array() || b->empty()) throw ConfigError("/cnn/blocks", "expected a non-empty array");
            c.cnn.blocks.clear();
            for (std::size_t i = 0; i < b->size(); ++i) {
                const json& e = (*b)[i];
                const std::string at = "/cnn/blocks/" + std::to_string(i);
                if (!e.is_array() || e.size() != 2 || !e[0].is_number_unsigned() || !e[1].is_number_unsigned()) {
                    throw ConfigError(at, "expected [out_channels, stride]");
                }
                c.cnn.blocks.push_back({e[0].get<std::size_t>(), e[1].get<std::size_t>()});
            }
        }
        s->get("classifier_width", c.cnn.classifier_width);
        s->get("dropout", c.cnn.dropout);
        s->finish();
    }
    if (auto s = root.section("cotrain")) {
        s->get("d_kl", c.cotrain.d_kl);
        s->get("ls_alpha", c.cotrain.ls_alpha);
        s->get("lr", c.cotrain.lr);
        s->get("batch_size", c.cotrain.batch_size);
        s->get("epochs", c.cotrain.epochs);
        s->get("per_sample_gate", c.cotrain.per_sample_gate);
        if (auto p = s->section("plateau")) {
            p->get("factor", c.cotrain.plateau.factor);
            p->get("patience", c.cotrain.plateau.patience);
            p->get("min_lr", c.cotrain.plateau.min_lr);
            p->finish();
        }
        if (auto a = s->section("adamw")) {
            a->get("beta1", c.cotrain.adamw.beta1);
            a->get("beta2", c.cotrain.adamw.beta2);
            a->get("eps", c.cotrain.adamw.eps);
            a->get("weight_decay", c.cotrain.adamw.weight_decay);
            a->finish();
        }
        s->finish();
    }
    if (auto s = root.section("segadapt")) {
        s->get("lambda_adv", c.segadapt.weights.lambda_adv);
        s->get("lambda_recons", c.segadapt.weights.lambda_recons);
        s->get("entropy_on_target", c.segadapt.entropy_on_target);
        s->get("epochs", c.segadapt.epochs);
        s->get("batch_size", c.segadapt.batch_size);
        s->get("lr", c.segadapt.lr);
        s->get("width", c.segadapt.width);
        s->get("domain_count", c.seg_domain.count);
        s->get("domain_size", c.seg_domain.size);
        s->finish();
    }
    root.finish();

    // Derived fields.
    c.edge.dilation = c.gcn.dilation;
    c.gcn.num_classes = c.cnn.num_classes = c.generator.classes;
    c.cnn.height = c.cnn.width = c.generator.image_size;
    c.cotrain.seed = c.seed;
    c.segadapt.seed = c.seed;
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError("/", e.what());
    }
    return c;
}

RunConfig parse_run_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("byte " + std::to_string(e.byte), e.what());
    }
    if (j.is_object() && j.contains("command") && j.contains("run_config")) {
        try {
            return run_config_from_json(j["run_config"]);
        } catch (const ConfigError& e) {
            throw ConfigError("/run_config" + (e.location() == "/" ? "" : e.location()),
                              std::string(e.what()).substr(e.location().size() + 2));
        }
    }
    return run_config_from_json(j);
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path, "cannot open config file");
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_run_config(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path + ":" + e.location(), std::string(e.what()).substr(e.location().size() + 2));
    }
}

std::string dump_run_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

}  // namespace actnet
