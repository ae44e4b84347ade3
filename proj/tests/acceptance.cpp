// Acceptance runner. Prints one PASS/FAIL line per criterion.
//   acceptance            all criteria
//   acceptance 1 4 9      a subset
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <set>
#include <string>
#include <vector>

#include "dfl/data.hpp"
#include "dfl/harness.hpp"
#include "dfl/model.hpp"
#include "dfl/rng.hpp"
#include "dfl/srm.hpp"
#include "dfl/supervision.hpp"
#include "oracles.hpp"

using namespace dfl;
using nn::cmce_step;
using nn::lfga_attention;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

void note(const std::string& s) {
    std::printf("  .. %s\n", s.c_str());
    std::fflush(stdout);
}

Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(s));
    for (auto& v : t.vec()) v = rng.uniform(lo, hi);
    return t;
}

std::vector<Sample> dataset(std::size_t size, std::size_t real, std::size_t a, std::size_t b, std::size_t c,
                            std::uint64_t seed) {
    DatasetSpec spec;
    spec.image_size = size;
    spec.real_count = real;
    spec.fake_a = a;
    spec.fake_b = b;
    spec.fake_c = c;
    spec.seed = seed;
    return generate_dataset(spec);
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// ---------------------------------------------------------------------------

Outcome gradient_check() {
    const auto t0 = Clock::now();
    const auto entries = gradcheck_suite(1);
    const double wall = seconds_since(t0);
    double worst = 0;
    std::string worst_name;
    std::size_t over = 0;
    for (const auto& e : entries) {
        if (e.result.max_rel_error >= 1e-5) {
            ++over;
            note(fmt("%s: rel %.3e (analytic %.6e, numeric %.6e at %s[%zu])", e.name.c_str(), e.result.max_rel_error,
                     e.result.analytic, e.result.numeric, e.result.worst_name.c_str(), e.result.worst_index));
        }
        if (e.result.max_rel_error > worst) {
            worst = e.result.max_rel_error;
            worst_name = e.name;
        }
    }
    return {over == 0 && wall < 120.0,
            fmt("%zu checks, %zu at or over 1e-5, max rel %.3e (%s), %.1f s of 120", entries.size(), over, worst,
                worst_name.c_str(), wall)};
}

Outcome oracle_equivalence() {
    Rng rng(2024);
    std::size_t sspsl_bad = 0, mask_bad = 0;
    double anchor_diff = 0, auc_diff = 0;
    const int cases = 200;
    for (int k = 0; k < cases; ++k) {
        const std::size_t c = 2 + rng.next() % 4, g = 2 + rng.next() % 4;
        std::vector<int> labels{0, 1};
        for (int b = 0; b < 3; ++b) labels.push_back(static_cast<int>(rng.next() % 2));
        std::vector<Tensor> feats;
        std::vector<GridRect> rects;
        for (std::size_t b = 0; b < labels.size(); ++b) {
            feats.push_back(random_tensor({c, g, g}, rng));
            const std::size_t r0 = rng.next() % g, c0 = rng.next() % g;
            rects.push_back({r0, c0, r0 + rng.next() % (g - r0), c0 + rng.next() % (g - c0)});
        }
        AnchorState anchors;
        const auto got = sspsl_labels(feats, labels, rects, anchors);
        const auto want = oracle::sspsl_oracle(feats, labels, rects);
        for (std::size_t b = 0; b < labels.size(); ++b) sspsl_bad += got.labels[b].values != want.labels[b];
        for (std::size_t i = 0; i < c; ++i)
            anchor_diff = std::max({anchor_diff, std::abs(got.real_anchor[i] - want.fr[i]),
                                    std::abs(got.fake_anchor[i] - want.fa[i])});
    }
    for (int k = 0; k < cases; ++k) {
        const std::size_t grid = 1 + rng.next() % 8;
        const std::size_t h = grid + rng.next() % 40, w = grid + rng.next() % 40;
        Tensor m = Tensor::zeros({h, w});
        const double density = rng.uniform(0.0, 0.05);
        for (auto& v : m.vec()) v = rng.bernoulli(density) ? 1.0 : 0.0;
        mask_bad += mask_to_patches(m, grid).values != oracle::scan_oracle(m, grid);
    }
    for (int k = 0; k < cases; ++k) {
        const std::size_t n = 2 + rng.next() % 80;
        const double levels = static_cast<double>(2 + rng.next() % 30);
        std::vector<double> s;
        std::vector<int> y;
        for (std::size_t i = 0; i < n; ++i) {
            y.push_back(i < 2 ? static_cast<int>(i) : static_cast<int>(rng.next() % 2));
            s.push_back(std::floor(rng.uniform(0, levels)) / levels);
        }
        auc_diff = std::max(auc_diff, std::abs(roc_auc(s, y) - oracle::pair_count_auc(s, y)));
    }
    return {sspsl_bad == 0 && mask_bad == 0 && auc_diff < 1e-12,
            fmt("%d cases each: sspsl label mismatches %zu (anchor diff %.1e), mask_to_patches mismatches %zu, "
                "roc_auc max diff %.1e",
                cases, sspsl_bad, anchor_diff, mask_bad, auc_diff)};
}

Outcome closed_form_losses() {
    const double ln2 = std::log(2.0);
    Tape t;
    const double cls_err = std::abs(loss_cls(t.constant(Tensor({1}, {0.0})), 1).value()[0] - ln2);
    double loc_err = 0;
    for (std::size_t g : {1, 2, 4, 8, 19}) {
        Rng rng(g);
        PatchLabelMap m = PatchLabelMap::zeros(g, g);
        for (auto& v : m.values) v = rng.bernoulli(0.5);
        const double K = static_cast<double>(g * g);
        loc_err = std::max(loc_err, std::abs(loss_loc(t.constant(Tensor::zeros({1, g, g})), m).value()[0] - K * ln2));
    }
    Rng rng(3);
    std::size_t additive_bad = 0;
    for (int k = 0; k < 1000; ++k) {
        const double a = rng.uniform(0, 10), b = rng.uniform(0, 50);
        additive_bad += loss_total(t.constant(Tensor({1}, {a})), t.constant(Tensor({1}, {b}))).value()[0] != a + b;
    }
    return {cls_err <= 1e-12 && loc_err <= 1e-9 && additive_bad == 0,
            fmt("|loss_cls - ln2| %.1e, max |loss_loc - K ln2| %.1e over K in {1,4,16,64,361}, "
                "additivity mismatches %zu of 1000",
                cls_err, loc_err, additive_bad)};
}

Outcome structural_invariants() {
    Rng rng(4);
    std::size_t swap_bad = 0, corr_bad = 0, rows_bad = 0, shape_bad = 0;
    double worst_row = 0;
    for (int k = 0; k < 200; ++k) {
        const std::size_t c = 1 + rng.next() % 6, h = 1 + rng.next() % 5, w = 1 + rng.next() % 5;
        const double mag = std::pow(10.0, rng.uniform(-3, 3));
        const Tensor a = random_tensor({c, h, w}, rng, -mag, mag), b = random_tensor({c, h, w}, rng, -mag, mag);
        Tape t;
        const auto ab = cmce_step(t.constant(a), t.constant(b));
        const auto ba = cmce_step(t.constant(b), t.constant(a));
        swap_bad += !bit_equal(ab.rgb.value(), ba.srm.value()) || !bit_equal(ab.srm.value(), ba.rgb.value()) ||
                    !bit_equal(ab.corr.value(), ba.corr.value());
        for (double v : ab.corr.value().vec()) corr_bad += !(v >= -1.0 && v <= 1.0);

        const auto att = lfga_attention(t.constant(random_tensor({c, h, w}, rng, -3, 3)),
                                        t.constant(random_tensor({c, c, 1, 1}, rng)));
        for (std::size_t i = 0; i < h * w; ++i) {
            double total = 0;
            for (std::size_t j = 0; j < h * w; ++j) total += att.value().at(i, j);
            worst_row = std::max(worst_row, std::abs(total - 1.0));
            rows_bad += std::abs(total - 1.0) > 1e-9;
        }
    }
    for (std::size_t grid : {2, 4, 8}) {
        ModelConfig mc;
        mc.image_size = 32;
        mc.grid = grid;
        const TwoStreamModel m(mc);
        const Prediction p = predict(m, random_tensor({3, 32, 32}, rng, 0, 1));
        shape_bad += p.forgery_map.shape() != Shape{grid, grid};
    }

    const auto t0 = Clock::now();
    const ModelConfig pc = ModelConfig::paper_scale();
    const TwoStreamModel paper(pc);
    const Prediction pp = predict(paper, random_tensor({3, pc.image_size, pc.image_size}, rng, 0, 1));
    const bool paper_ok = pc.grid == 19 && pc.bilinear_m == 2048 && pc.bilinear_n == 4096 &&
                          pp.forgery_map.shape() == Shape{19, 19} && std::isfinite(pp.probability);
    return {swap_bad == 0 && corr_bad == 0 && rows_bad == 0 && shape_bad == 0 && paper_ok,
            fmt("swap mismatches %zu, Corr out of range %zu, LFGA rows off %zu (worst %.1e), map shape mismatches %zu, "
                "paper-scale 19x19 m=2048 n=4096 forward %s (%.1f s, p=%.4f)",
                swap_bad, corr_bad, rows_bad, worst_row, shape_bad, paper_ok ? "ok" : "FAILED", seconds_since(t0),
                pp.probability)};
}

Outcome srm_frontend() {
    std::size_t nonzero = 0;
    for (double c : {0.0, 1.0 / 255, 0.25, 0.5, 0.73, 1.0}) {
        const Tensor r = srm::apply(Tensor::filled({3, 12, 12}, c));
        for (double v : r.vec()) nonzero += v != 0.0;
    }
    const auto& bank = srm::build_bank();
    double impulse = 0;
    for (double amp : {1.0, 1.0 / 255, 0.1, 0.6}) {
        Tensor img = Tensor::zeros({3, 11, 11});
        for (std::size_t ch = 0; ch < 3; ++ch) img.at(ch, 5, 5) = amp;
        const Tensor got = srm::apply(img), want = oracle::impulse_oracle(bank, 11, 5, 5, amp);
        for (std::size_t i = 0; i < got.size(); ++i) impulse = std::max(impulse, std::abs(got[i] - want[i]));
    }
    Rng rng(5);
    std::size_t out_of_bounds = 0;
    double peak = 0;
    for (int k = 0; k < 100; ++k) {
        Tensor img = random_tensor({3, 16, 16}, rng, 0, 1);
        // Half the images are binary noise, which drives the filters hardest.
        if (k % 2) for (auto& v : img.vec()) v = v < 0.5 ? 0.0 : 1.0;
        const Tensor r = srm::apply(img);
        for (double v : r.vec()) {
            peak = std::max(peak, std::abs(v));
            out_of_bounds += !(v >= -1.0 && v <= 1.0);
        }
    }
    return {nonzero == 0 && impulse < 1e-12 && out_of_bounds == 0,
            fmt("constant-image nonzeros %zu, impulse max diff %.1e, out-of-bound outputs %zu (peak |r|/T %.3f)",
                nonzero, impulse, out_of_bounds, peak)};
}

// ---------------------------------------------------------------------------
// Desk-scale learning runs. The mask-mode run is shared by criteria 6 and 7.

struct DeskRun {
    double frame_auc = 0, loc_accuracy = 0, wall = 0;
    std::size_t mask_reads = 0;
};

const std::vector<Sample>& desk_train() {
    static const auto d = dataset(64, 1000, 0, 1000, 0, 61);
    return d;
}
const std::vector<Sample>& desk_heldout() {
    static const auto d = dataset(64, 200, 0, 200, 0, 62);
    return d;
}

DeskRun desk_run(SupervisionMode mode) {
    RunConfig cfg;
    cfg.epochs = 15;
    cfg.seed = 1;
    cfg.model.seed = 1;
    cfg.mode = mode;
    const auto& train = desk_train();
    const auto& held = desk_heldout();
    MaskReadCounter::reset();
    const auto t0 = Clock::now();
    Trainer trainer(cfg, train);
    trainer.set_log([](const std::string& s) { note(s); });
    trainer.run();
    DeskRun r;
    r.mask_reads = MaskReadCounter::count();
    const TwoStreamModel model = trainer.model();
    const MetricsReport rep = evaluate(model, held, {0, mode == SupervisionMode::Mask});
    r.wall = seconds_since(t0);
    r.frame_auc = rep.frame_auc;
    r.loc_accuracy = rep.loc_accuracy;
    const auto losses = trainer.epoch_losses();
    note(fmt("%s: epoch loss %.4f -> %.4f, held-out AUC %.4f, %.0f s", to_string(mode).c_str(), losses.front(),
             losses.back(), rep.frame_auc, r.wall));
    return r;
}

const DeskRun& mask_run() {
    static const DeskRun r = desk_run(SupervisionMode::Mask);
    return r;
}

Outcome desk_learning() {
    const DeskRun& r = mask_run();
    return {r.frame_auc >= 0.95 && r.loc_accuracy >= 0.85 && r.wall <= 900.0,
            fmt("2000 family-B samples, 15 epochs: held-out frame AUC %.4f (>= 0.95), patch accuracy %.4f (>= 0.85), "
                "%.0f s (<= 900)",
                r.frame_auc, r.loc_accuracy, r.wall)};
}

Outcome desk_semi() {
    const DeskRun& m = mask_run();
    const DeskRun s = desk_run(SupervisionMode::Sspsl);
    const double gap = std::abs(s.frame_auc - m.frame_auc);
    return {gap <= 0.05 && s.mask_reads == 0,
            fmt("sspsl AUC %.4f vs mask %.4f, gap %.4f (<= 0.05), mask reads during sspsl training %zu", s.frame_auc,
                m.frame_auc, gap, s.mask_reads)};
}

Outcome cross_family() {
    const auto train = dataset(64, 300, 300, 0, 0, 81);
    const auto eval_b = dataset(64, 100, 0, 100, 0, 82);
    const auto eval_c = dataset(64, 100, 0, 0, 100, 83);
    RunConfig base;
    base.epochs = 15;
    const RunConfig rgb_only = ablation_variants(base).front().config;
    double full_sum = 0, rgb_sum = 0;
    std::string per_seed;
    for (std::uint64_t seed : {1, 2, 3}) {
        for (bool full : {true, false}) {
            RunConfig cfg = full ? base : rgb_only;
            cfg.seed = seed;
            cfg.model.seed = seed;
            Trainer t(cfg, train);
            t.run();
            const TwoStreamModel m = t.model();
            const double b = evaluate(m, eval_b, {0, false}).frame_auc;
            const double c = evaluate(m, eval_c, {0, false}).frame_auc;
            (full ? full_sum : rgb_sum) += b + c;
            note(fmt("seed %llu %s: AUC B %.4f, C %.4f", static_cast<unsigned long long>(seed),
                     full ? "full" : "rgb-only", b, c));
            per_seed += fmt(" %s%llu=%.3f/%.3f", full ? "full" : "rgb", static_cast<unsigned long long>(seed), b, c);
        }
    }
    const double full_mean = full_sum / 6, rgb_mean = rgb_sum / 6;
    return {full_mean >= rgb_mean,
            fmt("train A, eval B/C, 3 seeds: full mean %.4f vs rgb-only mean %.4f;%s", full_mean, rgb_mean,
                per_seed.c_str())};
}

Outcome persistence() {
    const auto data = dataset(64, 16, 0, 16, 0, 91);
    const fs::path root = fs::temp_directory_path() / fmt("dfl_acceptance_%d", static_cast<int>(::getpid()));
    fs::remove_all(root);
    std::size_t loss_bad = 0, state_bad = 0, byte_bad = 0;
    for (auto mode : {SupervisionMode::Mask, SupervisionMode::Sspsl}) {
        RunConfig cfg;
        cfg.mode = mode;
        cfg.epochs = 10;
        Trainer full(cfg, data);
        full.run_steps(10);
        Trainer first(cfg, data);
        first.run_steps(5);
        const fs::path a = root / (to_string(mode) + "_a"), b = root / (to_string(mode) + "_b");
        first.save(a);
        Trainer second(load_checkpoint(a), data);
        second.run_steps(5);
        const auto &hf = full.state().history, &hs = second.state().history;
        if (hf.size() != 10 || hs.size() != 10) ++loss_bad;
        else
            for (std::size_t i = 0; i < 10; ++i) loss_bad += hf[i].loss != hs[i].loss;
        const ParamStore &pf = full.state().params, &ps = second.state().params;
        for (const auto& n : pf.names())
            state_bad += !bit_equal(pf.at(n).value, ps.at(n).value) || !bit_equal(pf.at(n).m, ps.at(n).m) ||
                         !bit_equal(pf.at(n).v, ps.at(n).v);
        state_bad += full.state().rng_state != second.state().rng_state;

        save_checkpoint(load_checkpoint(a), b);
        for (const char* f : {"manifest.json", "params.tnsr", "optimizer.tnsr"})
            byte_bad += file_bytes(a / f).empty() || file_bytes(a / f) != file_bytes(b / f);
    }
    fs::remove_all(root);
    return {loss_bad == 0 && state_bad == 0 && byte_bad == 0,
            fmt("mask and sspsl: loss mismatches %zu of 20, state mismatches %zu, checkpoint files differing %zu of 6",
                loss_bad, state_bad, byte_bad)};
}

Outcome lr_schedule() {
    RunConfig cfg;
    cfg.model.image_size = 32;
    cfg.model.grid = 4;
    cfg.batch_size = 8;
    cfg.min_real = 2;
    cfg.min_fake = 2;
    cfg.epochs = 15;
    Trainer t(cfg, dataset(32, 8, 0, 8, 0, 101));
    t.run();
    std::size_t bad = 0;
    std::set<int> epochs;
    for (const auto& r : t.state().history) {
        epochs.insert(r.epoch);
        bad += r.lr != std::ldexp(5e-4, -(r.epoch / 5));
    }
    const double expect[] = {5e-4, 2.5e-4, 1.25e-4};
    for (int e = 0; e < 15; ++e) bad += lr_at_epoch(cfg, e) != expect[e / 5];
    return {bad == 0 && epochs.size() == 15,
            fmt("%zu steps over %zu epochs, lr mismatches %zu (5e-4 to epoch 4, 2.5e-4 to 9, 1.25e-4 to 14)",
                t.state().history.size(), epochs.size(), bad)};
}

}  // namespace

int main(int argc, char** argv) {
    struct Criterion {
        int id;
        const char* name;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> all{
        {1, "gradient check", gradient_check},
        {2, "oracle equivalence", oracle_equivalence},
        {3, "closed-form losses", closed_form_losses},
        {4, "structural invariants", structural_invariants},
        {5, "srm frontend", srm_frontend},
        {6, "desk-scale learning", desk_learning},
        {7, "semi-supervised analogue", desk_semi},
        {8, "cross-family direction", cross_family},
        {9, "determinism and persistence", persistence},
        {10, "lr schedule", lr_schedule},
    };
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) {
        char* end = nullptr;
        const long v = std::strtol(argv[i], &end, 10);
        if (*end != '\0' || v < 1 || v > 10) {
            std::fprintf(stderr, "usage: %s [criterion 1..10]...\n", argv[0]);
            return 64;
        }
        wanted.insert(static_cast<int>(v));
    }
    int failed = 0;
    for (const auto& c : all) {
        if (!wanted.empty() && !wanted.count(c.id)) continue;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("%s %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                    seconds_since(t0));
        std::fflush(stdout);
    }
    return failed ? 1 : 0;
}
