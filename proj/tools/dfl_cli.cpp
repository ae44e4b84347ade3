// Command-line front end. Talks to the library only through dfl.h.

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dfl/dfl.h"

namespace {

constexpr int kUsage = 64;

int report(dfl_status s, const char* what) {
    if (s != DFL_OK) std::fprintf(stderr, "dfl %s: %s error: %s\n", what, dfl_status_name(s), dfl_last_error());
    return static_cast<int>(s);
}

void print_line(const char* line, void*) {
    std::fprintf(stderr, "%s\n", line);
    std::fflush(stderr);
}

struct Overrides {
    std::string config;
    std::optional<unsigned long long> seed;
    std::string mode, region, out, data, eval_data;
    std::optional<int> epochs;
    std::optional<unsigned> threads;

    void add(CLI::App* app, bool with_data) {
        app->add_option("--config", config, "run config JSON file");
        app->add_option("--seed", seed, "run and model seed");
        app->add_option("--mode", mode, "supervision mode")->check(CLI::IsMember({"mask", "sspsl"}));
        app->add_option("--region", region, "SSPSL reference region")
            ->check(CLI::IsMember({"nose", "mouth", "eyes", "inner-face"}));
        app->add_option("--out", out, "output directory");
        app->add_option("--epochs", epochs, "training epochs");
        app->add_option("--threads", threads, "worker threads (0 = all cores)");
        if (with_data) {
            app->add_option("--data", data, "training dataset directory");
            app->add_option("--eval-data", eval_data, "evaluation dataset directory");
        }
    }

    dfl_status build(dfl_config** cfg) const {
        dfl_status s = dfl_config_load(config.empty() ? nullptr : config.c_str(), cfg);
        auto set = [&](const char* k, const std::string& v) {
            if (s == DFL_OK && !v.empty()) s = dfl_config_set(*cfg, k, v.c_str());
        };
        if (seed) set("seed", std::to_string(*seed));
        set("mode", mode);
        set("region", region);
        set("out", out);
        set("train_data", data);
        set("eval_data", eval_data);
        if (epochs) set("epochs", std::to_string(*epochs));
        if (threads) set("threads", std::to_string(*threads));
        return s;
    }
};

int run_predict(const std::string& ckpt, const std::string& image_path, const std::string& map_out,
                const std::string& cam_tap, const std::string& cam_out) {
    dfl_model* model = nullptr;
    dfl_status s = dfl_model_load(ckpt.c_str(), &model);
    if (s != DFL_OK) return report(s, "predict");
    size_t size = 0, grid = 0, len = 0;
    dfl_model_shape(model, &size, &grid);
    std::vector<double> image(3 * size * size), map(grid * grid);
    s = dfl_read_image(image_path.c_str(), image.data(), image.size(), &len);
    if (s == DFL_OK && len != image.size()) {
        std::fprintf(stderr, "dfl predict: shape error: %s holds %zu values, model expects 3x%zux%zu\n",
                     image_path.c_str(), len, size, size);
        dfl_model_free(model);
        return DFL_ERR_SHAPE;
    }
    double prob = 0;
    if (s == DFL_OK) s = dfl_model_predict(model, image.data(), image.size(), &prob, map.data(), map.size());
    if (s == DFL_OK) {
        std::printf("%.17g\n", prob);
        if (!map_out.empty()) s = dfl_write_pgm(map_out.c_str(), map.data(), grid, grid);
    }
    if (s == DFL_OK && !cam_out.empty()) {
        size_t h = 0, w = 0;
        s = dfl_model_grad_cam(model, image.data(), image.size(), cam_tap.c_str(), nullptr, 0, &h, &w);
        std::vector<double> cam(h * w);
        if (s == DFL_OK) s = dfl_model_grad_cam(model, image.data(), image.size(), cam_tap.c_str(), cam.data(), cam.size(), &h, &w);
        if (s == DFL_OK) s = dfl_write_pgm(cam_out.c_str(), cam.data(), h, w);
    }
    dfl_model_free(model);
    return report(s, "predict");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stream forgery detector: synthetic data, training, evaluation"};
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "suppress progress output");
    app.set_version_flag("--version", std::string(dfl_version()));

    dfl_dataset_spec spec;
    dfl_dataset_spec_default(&spec);
    std::string gen_out;
    auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--size", spec.image_size, "image side in pixels");
    gen->add_option("--real", spec.real_count, "real samples");
    gen->add_option("--fake-a", spec.fake_a, "family A (hard paste) fakes");
    gen->add_option("--fake-b", spec.fake_b, "family B (feathered) fakes");
    gen->add_option("--fake-c", spec.fake_c, "family C (gradient alpha) fakes");
    gen->add_option("--frames", spec.frames_per_video, "frames per video");
    gen->add_option("--seed", spec.seed, "generator seed");

    Overrides train_ov;
    std::string resume;
    auto* train = app.add_subcommand("train", "train a model; writes OUT/checkpoint and OUT/loss.csv");
    train_ov.add(train, true);
    train->add_option("--resume", resume, "continue from this checkpoint directory");

    std::string eval_ckpt, eval_data, eval_out;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
    eval->add_option("--data", eval_data, "dataset directory")->required();
    eval->add_option("--out", eval_out, "report directory");

    std::string pred_ckpt, pred_image, pred_map, pred_cam, pred_tap = "F_c'";
    auto* pred = app.add_subcommand("predict", "score one image; prints the fake probability");
    pred->add_option("--checkpoint", pred_ckpt, "checkpoint directory")->required();
    pred->add_option("--image", pred_image, "image TNSR file [3,S,S]")->required();
    pred->add_option("--map", pred_map, "write the forgery map as PGM");
    pred->add_option("--cam", pred_cam, "write a Grad-CAM PGM");
    pred->add_option("--cam-tap", pred_tap, "feature tap for Grad-CAM");

    Overrides abl_ov;
    std::string abl_csv;
    auto* abl = app.add_subcommand("ablate", "train and evaluate all ablation variants");
    abl_ov.add(abl, true);
    abl->add_option("--csv", abl_csv, "CSV path (default OUT/ablation.csv)");

    unsigned long long gc_seed = 1;
    double gc_tol = 1e-5;
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    gc->add_option("--seed", gc_seed, "seed for inputs and the micro model");
    gc->add_option("--tol", gc_tol, "maximum relative error");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kUsage;
    }
    if (!quiet) dfl_set_log(print_line, nullptr);

    if (*gen) return report(dfl_generate_dataset(&spec, gen_out.c_str()), "gen-data");

    if (*train) {
        dfl_config* cfg = nullptr;
        dfl_status s = train_ov.build(&cfg);
        if (s == DFL_OK) s = dfl_train(cfg, resume.empty() ? nullptr : resume.c_str());
        dfl_config_free(cfg);
        return report(s, "train");
    }

    if (*eval) {
        dfl_metrics m{};
        const dfl_status s = dfl_evaluate(eval_ckpt.c_str(), eval_data.c_str(), eval_out.empty() ? nullptr : eval_out.c_str(), &m);
        if (s == DFL_OK)
            std::printf("frame_auc %.6f\nframe_acc %.6f\nvideo_auc %.6f\nloc_accuracy %.6f\nsamples %zu\n", m.frame_auc,
                        m.frame_acc, m.video_auc, m.loc_accuracy, m.samples);
        return report(s, "eval");
    }

    if (*pred) return run_predict(pred_ckpt, pred_image, pred_map, pred_tap, pred_cam);

    if (*abl) {
        dfl_config* cfg = nullptr;
        dfl_status s = abl_ov.build(&cfg);
        size_t rows = 0, failed = 0;
        if (s == DFL_OK) {
            s = dfl_ablate(cfg, abl_csv.empty() ? nullptr : abl_csv.c_str(), &rows, &failed);
            if (s == DFL_OK) std::printf("%zu rows, %zu failed\n", rows, failed);
        }
        dfl_config_free(cfg);
        if (s == DFL_OK && failed > 0) return DFL_ERR_RUNTIME;
        return report(s, "ablate");
    }

    if (*gc) {
        double worst = 0;
        size_t n = 0, bad = 0;
        const dfl_status s = dfl_gradcheck(gc_seed, gc_tol, &worst, &n, &bad);
        if (s != DFL_OK) return report(s, "gradcheck");
        std::printf("%zu checks, %zu over %.1e, max relative error %.3e\n", n, bad, gc_tol, worst);
        return bad == 0 ? 0 : DFL_ERR_NUMERIC;
    }
    return kUsage;
}
