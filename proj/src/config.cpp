#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "dfl/error.hpp"
#include "dfl/harness.hpp"
#include "json.hpp"

namespace dfl {

using nlohmann::json;

std::string to_string(SupervisionMode m) { return m == SupervisionMode::Mask ? "mask" : "sspsl"; }

SupervisionMode supervision_mode_from_string(const std::string& s) {
    if (s == "mask") return SupervisionMode::Mask;
    if (s == "sspsl") return SupervisionMode::Sspsl;
    fail(ErrorKind::Config, "unknown supervision mode '" + s + "' (expected mask|sspsl)");
}

void RunConfig::validate() const {
    model.validate();
    auto bad = [](const std::string& m) { fail(ErrorKind::Config, "run config: " + m); };
    if (!(lr > 0.0) || !std::isfinite(lr)) bad("lr must be positive");
    if (lr_halve_every <= 0) bad("lr_halve_every must be positive");
    if (epochs < 0) bad("epochs must be non-negative");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0))
        bad("adam betas must be in [0,1) and eps positive");
    if (batch_size == 0) bad("batch_size must be positive");
    if (min_real + min_fake > batch_size)
        bad("batch_size " + std::to_string(batch_size) + " cannot hold min_real " + std::to_string(min_real) +
            " + min_fake " + std::to_string(min_fake));
    if (mode == SupervisionMode::Sspsl && (min_real == 0 || min_fake == 0))
        bad("sspsl mode needs at least one real and one fake per batch");
}

namespace {

json model_json(const ModelConfig& c) {
    return {{"image_size", c.image_size},   {"grid", c.grid},
            {"entry_widths", c.entry_widths}, {"middle_widths", c.middle_widths},
            {"exit_width", c.exit_width},   {"embed_dim", c.embed_dim},
            {"bilinear_m", c.bilinear_m},   {"bilinear_n", c.bilinear_n},
            {"n_cmce", c.n_cmce},           {"n_lfga", c.n_lfga},
            {"streams", to_string(c.streams)}, {"use_cmce", c.use_cmce},
            {"use_lfga", c.use_lfga},       {"use_mpff", c.use_mpff},
            {"seed", c.seed}};
}

void check_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
    if (!j.is_object()) fail(ErrorKind::Config, where + ": expected a JSON object");
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) fail(ErrorKind::Config, where + ": unknown key '" + k + "'");
}

template <typename T>
void get(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        fail(ErrorKind::Config, where + ": bad value for '" + key + "'");
    }
}

ModelConfig model_from(const json& j) {
    const std::string w = "model config";
    check_keys(j, {"image_size", "grid", "entry_widths", "middle_widths", "exit_width", "embed_dim", "bilinear_m",
                   "bilinear_n", "n_cmce", "n_lfga", "streams", "use_cmce", "use_lfga", "use_mpff", "seed"},
               w);
    ModelConfig c;
    get(j, "image_size", c.image_size, w);
    get(j, "grid", c.grid, w);
    get(j, "entry_widths", c.entry_widths, w);
    get(j, "middle_widths", c.middle_widths, w);
    get(j, "exit_width", c.exit_width, w);
    get(j, "embed_dim", c.embed_dim, w);
    get(j, "bilinear_m", c.bilinear_m, w);
    get(j, "bilinear_n", c.bilinear_n, w);
    get(j, "n_cmce", c.n_cmce, w);
    get(j, "n_lfga", c.n_lfga, w);
    std::string streams = to_string(c.streams);
    get(j, "streams", streams, w);
    try {
        c.streams = stream_mode_from_string(streams);
    } catch (const Error& e) {
        fail(ErrorKind::Config, e.what());
    }
    get(j, "use_cmce", c.use_cmce, w);
    get(j, "use_lfga", c.use_lfga, w);
    get(j, "use_mpff", c.use_mpff, w);
    get(j, "seed", c.seed, w);
    return c;
}

json parse(const std::string& text, const std::string& where) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorKind::Config, where + ": " + e.what());
    }
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return model_json(cfg).dump(); }

ModelConfig model_config_from_json(const std::string& text) { return model_from(parse(text, "model config")); }

std::string config_to_json(const RunConfig& c) {
    json j{{"model", model_json(c.model)},
           {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
           {"lr", c.lr},
           {"lr_halve_every", c.lr_halve_every},
           {"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"min_real", c.min_real},
           {"min_fake", c.min_fake},
           {"mode", to_string(c.mode)},
           {"region", to_string(c.region)},
           {"augment",
            {{"flip", c.augment.flip}, {"contrast", c.augment.contrast}, {"blur", c.augment.blur}, {"crop", c.augment.crop}}},
           {"train_data", c.train_data},
           {"eval_data", c.eval_data},
           {"seed", c.seed},
           {"out_dir", c.out_dir},
           {"threads", c.threads}};
    return j.dump(1);
}

RunConfig config_from_json(const std::string& text) {
    const std::string w = "run config";
    const json j = parse(text, w);
    check_keys(j, {"model", "adam", "lr", "lr_halve_every", "epochs", "batch_size", "min_real", "min_fake", "mode",
                   "region", "augment", "train_data", "eval_data", "seed", "out_dir", "threads"},
               w);
    RunConfig c;
    if (j.contains("model")) c.model = model_from(j.at("model"));
    if (j.contains("adam")) {
        const json& a = j.at("adam");
        check_keys(a, {"beta1", "beta2", "eps"}, "adam");
        get(a, "beta1", c.adam.beta1, "adam");
        get(a, "beta2", c.adam.beta2, "adam");
        get(a, "eps", c.adam.eps, "adam");
    }
    get(j, "lr", c.lr, w);
    get(j, "lr_halve_every", c.lr_halve_every, w);
    get(j, "epochs", c.epochs, w);
    get(j, "batch_size", c.batch_size, w);
    get(j, "min_real", c.min_real, w);
    get(j, "min_fake", c.min_fake, w);
    std::string mode = to_string(c.mode), region = to_string(c.region);
    get(j, "mode", mode, w);
    get(j, "region", region, w);
    c.mode = supervision_mode_from_string(mode);
    c.region = reference_region_from_string(region);
    if (j.contains("augment")) {
        const json& a = j.at("augment");
        check_keys(a, {"flip", "contrast", "blur", "crop"}, "augment");
        get(a, "flip", c.augment.flip, "augment");
        get(a, "contrast", c.augment.contrast, "augment");
        get(a, "blur", c.augment.blur, "augment");
        get(a, "crop", c.augment.crop, "augment");
    }
    get(j, "train_data", c.train_data, w);
    get(j, "eval_data", c.eval_data, w);
    get(j, "seed", c.seed, w);
    get(j, "out_dir", c.out_dir, w);
    get(j, "threads", c.threads, w);
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return config_from_json(ss.str());
    } catch (const Error& e) {
        fail(e.kind(), path.string() + ": " + e.what());
    }
}

double lr_at_epoch(const RunConfig& cfg, int epoch) {
    require(epoch >= 0, ErrorKind::InvalidArgument, "lr_at_epoch: negative epoch");
    return std::ldexp(cfg.lr, -(epoch / cfg.lr_halve_every));
}

}  // namespace dfl
