#include "dfl/dfl.h"

#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <new>
#include <string>

#include "dfl/error.hpp"
#include "dfl/harness.hpp"

struct dfl_config {
    dfl::RunConfig cfg;
};

struct dfl_model {
    dfl::TwoStreamModel model;
};

namespace {

thread_local std::string g_error;

std::mutex g_log_mu;
dfl_log_fn g_log_fn = nullptr;
void* g_log_user = nullptr;

void log_line(const std::string& s) {
    std::lock_guard lock(g_log_mu);
    if (g_log_fn) g_log_fn(s.c_str(), g_log_user);
}

dfl::LogFn logger() {
    return [](const std::string& s) { log_line(s); };
}

template <class F>
dfl_status guard(F&& f) {
    g_error.clear();
    try {
        f();
        return DFL_OK;
    } catch (const dfl::Error& e) {
        g_error = e.what();
        return static_cast<dfl_status>(static_cast<int>(e.kind()));
    } catch (const std::bad_alloc&) {
        g_error = "out of memory";
        return DFL_ERR_RUNTIME;
    } catch (const std::exception& e) {
        g_error = e.what();
        return DFL_ERR_INTERNAL;
    } catch (...) {
        g_error = "unknown exception";
        return DFL_ERR_INTERNAL;
    }
}

void need(const void* p, const char* what) {
    if (!p) dfl::fail(dfl::ErrorKind::InvalidArgument, std::string(what) + " is NULL");
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    unsigned long long n = 0;
    try {
        if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
        n = std::stoull(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size()) dfl::fail(dfl::ErrorKind::Config, key + ": expected a non-negative integer, got '" + v + "'");
    return static_cast<std::size_t>(n);
}

double parse_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double d = 0;
    try {
        d = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size()) dfl::fail(dfl::ErrorKind::Config, key + ": expected a number, got '" + v + "'");
    return d;
}

dfl::Tensor image_tensor(const dfl_model* m, const double* image, std::size_t len) {
    need(image, "image");
    const std::size_t s = m->model.config().image_size;
    if (len != 3 * s * s)
        dfl::fail(dfl::ErrorKind::Shape, "image has " + std::to_string(len) + " values, model expects 3x" + std::to_string(s) +
                                             "x" + std::to_string(s));
    return dfl::Tensor({3, s, s}, std::vector<double>(image, image + len));
}

std::vector<double> epoch_means(const std::vector<dfl::StepRecord>& history) {
    std::map<int, std::pair<double, std::size_t>> acc;
    for (const auto& r : history) {
        acc[r.epoch].first += r.loss;
        acc[r.epoch].second += 1;
    }
    std::vector<double> out;
    for (const auto& [e, v] : acc) out.push_back(v.first / static_cast<double>(v.second));
    return out;
}

void write_loss_csv(const std::vector<dfl::StepRecord>& history, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) dfl::fail(dfl::ErrorKind::Io, "cannot open " + path.string() + " for writing");
    out << "step,epoch,lr,loss,loss_cls,loss_loc,n_real,n_fake\n";
    out.precision(17);
    for (const auto& r : history)
        out << r.step << ',' << r.epoch << ',' << r.lr << ',' << r.loss << ',' << r.loss_cls << ',' << r.loss_loc << ','
            << r.n_real << ',' << r.n_fake << '\n';
    if (!out) dfl::fail(dfl::ErrorKind::Io, "write failed for " + path.string());
}

void fill_metrics(const dfl::MetricsReport& r, dfl_metrics* m) {
    if (!m) return;
    m->frame_auc = r.frame_auc;
    m->frame_acc = r.frame_acc;
    m->video_auc = r.video_auc;
    m->loc_accuracy = r.loc_accuracy;
    m->samples = r.samples.size();
}

}  // namespace

extern "C" {

const char* dfl_last_error(void) { return g_error.c_str(); }

const char* dfl_status_name(dfl_status status) {
    switch (status) {
        case DFL_OK: return "ok";
        case DFL_ERR_INTERNAL: return "internal";
        default:
            if (status >= 1 && status <= 8) return dfl::to_string(static_cast<dfl::ErrorKind>(status));
            return "unknown";
    }
}

const char* dfl_version(void) { return "0.1.0"; }

void dfl_set_log(dfl_log_fn fn, void* user) {
    std::lock_guard lock(g_log_mu);
    g_log_fn = fn;
    g_log_user = user;
}

void dfl_dataset_spec_default(dfl_dataset_spec* spec) {
    if (!spec) return;
    const dfl::DatasetSpec d;
    *spec = {d.image_size, d.real_count, d.fake_a, d.fake_b, d.fake_c, d.frames_per_video, d.seed};
}

dfl_status dfl_generate_dataset(const dfl_dataset_spec* spec, const char* out_dir) {
    return guard([&] {
        need(spec, "spec");
        need(out_dir, "out_dir");
        dfl::DatasetSpec d;
        d.image_size = spec->image_size;
        d.real_count = spec->real_count;
        d.fake_a = spec->fake_a;
        d.fake_b = spec->fake_b;
        d.fake_c = spec->fake_c;
        d.frames_per_video = spec->frames_per_video;
        d.seed = spec->seed;
        d.validate();
        dfl::write_dataset(dfl::generate_dataset(d), d, out_dir);
    });
}

dfl_status dfl_dataset_info(const char* dir, size_t* count, size_t* real_count, size_t* image_size) {
    return guard([&] {
        need(dir, "dir");
        const auto samples = dfl::read_dataset(dir);
        std::size_t reals = 0;
        for (const auto& s : samples) reals += s.label == 0;
        if (count) *count = samples.size();
        if (real_count) *real_count = reals;
        if (image_size) *image_size = samples.empty() ? 0 : samples.front().size();
    });
}

dfl_status dfl_config_load(const char* path, dfl_config** out) {
    return guard([&] {
        need(out, "out");
        *out = nullptr;
        auto c = std::make_unique<dfl_config>();
        if (path) c->cfg = dfl::load_run_config(path);
        *out = c.release();
    });
}

dfl_status dfl_config_from_json(const char* json, dfl_config** out) {
    return guard([&] {
        need(json, "json");
        need(out, "out");
        *out = nullptr;
        auto c = std::make_unique<dfl_config>();
        c->cfg = dfl::config_from_json(json);
        *out = c.release();
    });
}

dfl_status dfl_config_set(dfl_config* cfg, const char* key, const char* value) {
    return guard([&] {
        need(cfg, "cfg");
        need(key, "key");
        need(value, "value");
        dfl::RunConfig c = cfg->cfg;
        const std::string k = key, v = value;
        if (k == "seed") {
            c.seed = parse_size(k, v);
            c.model.seed = c.seed;
        } else if (k == "mode") {
            c.mode = dfl::supervision_mode_from_string(v);
        } else if (k == "region") {
            c.region = dfl::reference_region_from_string(v);
        } else if (k == "out") {
            c.out_dir = v;
        } else if (k == "train_data") {
            c.train_data = v;
        } else if (k == "eval_data") {
            c.eval_data = v;
        } else if (k == "epochs") {
            c.epochs = static_cast<int>(parse_size(k, v));
        } else if (k == "threads") {
            c.threads = parse_size(k, v);
        } else if (k == "batch_size") {
            c.batch_size = parse_size(k, v);
        } else if (k == "lr") {
            c.lr = parse_double(k, v);
        } else {
            dfl::fail(dfl::ErrorKind::Config, "unknown config key '" + k + "'");
        }
        c.validate();
        cfg->cfg = std::move(c);
    });
}

dfl_status dfl_config_to_json(const dfl_config* cfg, char* buf, size_t cap, size_t* needed) {
    return guard([&] {
        need(cfg, "cfg");
        const std::string s = dfl::config_to_json(cfg->cfg);
        if (needed) *needed = s.size() + 1;
        if (buf && cap > s.size()) std::memcpy(buf, s.c_str(), s.size() + 1);
        else if (buf) dfl::fail(dfl::ErrorKind::InvalidArgument, "buffer too small for config JSON");
    });
}

void dfl_config_free(dfl_config* cfg) { delete cfg; }

dfl_status dfl_train(const dfl_config* cfg, const char* resume_from) {
    return guard([&] {
        need(cfg, "cfg");
        const dfl::RunConfig& c = cfg->cfg;
        if (c.train_data.empty()) dfl::fail(dfl::ErrorKind::Config, "train_data is not set");
        auto train = dfl::read_dataset(c.train_data);

        std::unique_ptr<dfl::Trainer> t;
        if (resume_from) {
            dfl::TrainState st = dfl::load_checkpoint(resume_from);
            st.config.out_dir = c.out_dir;
            st.config.threads = c.threads;
            st.config.train_data = c.train_data;
            st.config.eval_data = c.eval_data;
            st.config.epochs = c.epochs;
            st.config.validate();
            t = std::make_unique<dfl::Trainer>(std::move(st), std::move(train));
        } else {
            t = std::make_unique<dfl::Trainer>(c, std::move(train));
        }
        t->set_log(logger());
        t->run();

        const std::filesystem::path out = c.out_dir;
        t->save(out / "checkpoint");
        write_loss_csv(t->state().history, out / "loss.csv");
        log_line("checkpoint written to " + (out / "checkpoint").string());

        if (!c.eval_data.empty()) {
            const auto eval = dfl::read_dataset(c.eval_data);
            dfl::EvalOptions eo;
            eo.threads = c.threads;
            dfl::MetricsReport r = dfl::evaluate(t->model(), eval, eo);
            r.loss_history = t->epoch_losses();
            r.config_json = dfl::config_to_json(t->state().config);
            r.seed = t->state().config.seed;
            dfl::emit_report(r, out / "eval");
            log_line("eval: frame_auc " + std::to_string(r.frame_auc) + " frame_acc " + std::to_string(r.frame_acc) +
                     " video_auc " + std::to_string(r.video_auc) + " loc_accuracy " + std::to_string(r.loc_accuracy));
        }
    });
}

dfl_status dfl_evaluate(const char* checkpoint_dir, const char* data_dir, const char* out_dir, dfl_metrics* metrics) {
    return guard([&] {
        need(checkpoint_dir, "checkpoint_dir");
        need(data_dir, "data_dir");
        const dfl::TrainState st = dfl::load_checkpoint(checkpoint_dir);
        const dfl::TwoStreamModel model(st.config.model, st.params);
        const auto samples = dfl::read_dataset(data_dir);
        dfl::EvalOptions eo;
        eo.threads = st.config.threads;
        dfl::MetricsReport r = dfl::evaluate(model, samples, eo);
        r.loss_history = epoch_means(st.history);
        r.config_json = dfl::config_to_json(st.config);
        r.seed = st.config.seed;
        if (out_dir) dfl::emit_report(r, out_dir);
        fill_metrics(r, metrics);
    });
}

dfl_status dfl_ablate(const dfl_config* cfg, const char* csv_path, size_t* rows, size_t* failed) {
    return guard([&] {
        need(cfg, "cfg");
        const dfl::RunConfig& c = cfg->cfg;
        std::filesystem::path csv = csv_path ? std::filesystem::path(csv_path) : std::filesystem::path(c.out_dir) / "ablation.csv";
        if (csv.has_parent_path()) std::filesystem::create_directories(csv.parent_path());
        if (c.train_data.empty() || c.eval_data.empty())
            dfl::fail(dfl::ErrorKind::Config, "ablation needs both train_data and eval_data");
        const auto train = dfl::read_dataset(c.train_data);
        const auto eval = dfl::read_dataset(c.eval_data);
        const auto result = dfl::ablate(dfl::ablation_variants(c), train, eval, csv, logger());
        std::size_t bad = 0;
        for (const auto& r : result) bad += r.status != "ok";
        if (rows) *rows = result.size();
        if (failed) *failed = bad;
    });
}

dfl_status dfl_gradcheck(uint64_t seed, double tolerance, double* max_rel_error, size_t* checks, size_t* failures) {
    return guard([&] {
        const auto entries = dfl::gradcheck_suite(seed);
        double worst = 0.0;
        std::size_t bad = 0;
        for (const auto& e : entries) {
            const auto& r = e.result;
            const bool ok = r.max_rel_error < tolerance;
            bad += !ok;
            worst = std::max(worst, r.max_rel_error);
            char line[512];
            std::snprintf(line, sizeof line, "%-4s %-48s rel %.3e (coords %zu, kinks %zu, smooth %.3e)", ok ? "ok" : "FAIL",
                          e.name.c_str(), r.max_rel_error, r.coordinates, r.kinks_crossed, r.max_rel_error_smooth);
            log_line(line);
        }
        if (max_rel_error) *max_rel_error = worst;
        if (checks) *checks = entries.size();
        if (failures) *failures = bad;
    });
}

dfl_status dfl_model_load(const char* checkpoint_dir, dfl_model** out) {
    return guard([&] {
        need(checkpoint_dir, "checkpoint_dir");
        need(out, "out");
        *out = nullptr;
        dfl::TrainState st = dfl::load_checkpoint(checkpoint_dir);
        *out = new dfl_model{dfl::TwoStreamModel(st.config.model, std::move(st.params))};
    });
}

void dfl_model_free(dfl_model* model) { delete model; }

dfl_status dfl_model_shape(const dfl_model* model, size_t* image_size, size_t* grid) {
    return guard([&] {
        need(model, "model");
        if (image_size) *image_size = model->model.config().image_size;
        if (grid) *grid = model->model.config().grid;
    });
}

dfl_status dfl_model_predict(const dfl_model* model, const double* image, size_t image_len, double* probability,
                             double* map, size_t map_len) {
    return guard([&] {
        need(model, "model");
        const dfl::Prediction p = dfl::predict(model->model, image_tensor(model, image, image_len));
        if (probability) *probability = p.probability;
        if (map) {
            if (map_len < p.forgery_map.size())
                dfl::fail(dfl::ErrorKind::Shape, "map buffer holds " + std::to_string(map_len) + " values, need " +
                                                     std::to_string(p.forgery_map.size()));
            std::copy(p.forgery_map.vec().begin(), p.forgery_map.vec().end(), map);
        }
    });
}

dfl_status dfl_read_image(const char* path, double* buf, size_t cap, size_t* len) {
    return guard([&] {
        need(path, "path");
        const dfl::Tensor t = dfl::read_image_file(path);
        if (len) *len = t.size();
        if (buf) {
            if (cap < t.size())
                dfl::fail(dfl::ErrorKind::Shape, "image buffer holds " + std::to_string(cap) + " values, need " +
                                                     std::to_string(t.size()));
            std::copy(t.vec().begin(), t.vec().end(), buf);
        }
    });
}

dfl_status dfl_model_grad_cam(const dfl_model* model, const double* image, size_t image_len, const char* tap,
                              double* cam, size_t cam_len, size_t* h, size_t* w) {
    return guard([&] {
        need(model, "model");
        need(tap, "tap");
        const dfl::Tensor c = dfl::grad_cam(model->model, image_tensor(model, image, image_len), tap);
        if (h) *h = c.dim(0);
        if (w) *w = c.dim(1);
        if (cam) {
            if (cam_len < c.size())
                dfl::fail(dfl::ErrorKind::Shape, "cam buffer holds " + std::to_string(cam_len) + " values, need " +
                                                     std::to_string(c.size()));
            std::copy(c.vec().begin(), c.vec().end(), cam);
        }
    });
}

dfl_status dfl_write_pgm(const char* path, const double* map, size_t rows, size_t cols) {
    return guard([&] {
        need(path, "path");
        need(map, "map");
        dfl::write_pgm(path, dfl::Tensor({rows, cols}, std::vector<double>(map, map + rows * cols)));
    });
}

}  // extern "C"
