#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "dfl/error.hpp"
#include "dfl/harness.hpp"
#include "dfl/rng.hpp"

namespace dfl {

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    const std::size_t workers = std::min(threads, n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::size_t err_index = n;
    std::exception_ptr err;
    auto work = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                // keep the lowest failing index so the reported error is stable
                if (i < err_index) {
                    err_index = i;
                    err = std::current_exception();
                }
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

namespace {

void shuffle(std::vector<std::size_t>& v, std::uint64_t seed) {
    Rng r(seed);
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[r.next() % i]);
}

}  // namespace

std::vector<std::vector<std::size_t>> epoch_batches(const std::vector<int>& labels, const RunConfig& cfg, int epoch) {
    std::vector<std::size_t> reals, fakes;
    for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 0 ? reals : fakes).push_back(i);
    if (reals.size() < cfg.min_real || fakes.size() < cfg.min_fake || reals.empty() || fakes.empty())
        fail(ErrorKind::Config, "batch composition unsatisfiable: need at least " + std::to_string(std::max<std::size_t>(cfg.min_real, 1)) +
                                    " real and " + std::to_string(std::max<std::size_t>(cfg.min_fake, 1)) +
                                    " fake samples, dataset has " + std::to_string(reals.size()) + " real and " +
                                    std::to_string(fakes.size()) + " fake");
    require(cfg.min_real + cfg.min_fake <= cfg.batch_size, ErrorKind::Config,
            "batch composition unsatisfiable: batch_size smaller than min_real + min_fake");
    const std::size_t n = labels.size();
    const auto e = static_cast<std::uint64_t>(epoch);
    shuffle(reals, derive_seed({cfg.seed, 0xba7c, e, 0}));
    shuffle(fakes, derive_seed({cfg.seed, 0xba7c, e, 1}));

    const std::size_t nb = (n + cfg.batch_size - 1) / cfg.batch_size;
    const double real_frac = static_cast<double>(reals.size()) / static_cast<double>(n);
    std::vector<std::vector<std::size_t>> out(nb);
    std::size_t ri = 0, fi = 0;
    for (std::size_t b = 0; b < nb; ++b) {
        const std::size_t size = std::max(n / nb + (b < n % nb ? 1 : 0), cfg.min_real + cfg.min_fake);
        const auto want = static_cast<std::size_t>(std::llround(real_frac * static_cast<double>(size)));
        const std::size_t r = std::clamp(want, std::max<std::size_t>(cfg.min_real, 1), size - std::max<std::size_t>(cfg.min_fake, 1));
        // draws wrap around so a short class is revisited within the epoch
        for (std::size_t k = 0; k < r; ++k) out[b].push_back(reals[ri++ % reals.size()]);
        for (std::size_t k = r; k < size; ++k) out[b].push_back(fakes[fi++ % fakes.size()]);
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string rng_to_string(const std::mt19937_64& e) {
    std::ostringstream os;
    os << e;
    return os.str();
}

std::mt19937_64 rng_from_string(const std::string& s) {
    std::mt19937_64 e;
    std::istringstream is(s);
    is >> e;
    if (!is) fail(ErrorKind::Format, "checkpoint: malformed rng_state");
    return e;
}

}  // namespace

Trainer::Trainer(RunConfig cfg, std::vector<Sample> train) : train_(std::move(train)) {
    cfg.validate();
    state_.config = cfg;
    state_.params = TwoStreamModel(cfg.model).params();
    state_.rng_state = rng_to_string(std::mt19937_64(derive_seed({cfg.seed, 0xa06})));
    for (const Sample& s : train_) labels_.push_back(s.label);
    prepare_epoch();
}

Trainer::Trainer(TrainState state, std::vector<Sample> train) : state_(std::move(state)), train_(std::move(train)) {
    state_.config.validate();
    TwoStreamModel check(state_.config.model, state_.params);  // validates names and shapes
    (void)check;
    rng_from_string(state_.rng_state);
    for (const Sample& s : train_) labels_.push_back(s.label);
    prepare_epoch();
    require(done() || state_.batch_in_epoch < batches_.size(), ErrorKind::Config,
            "checkpoint position is past the end of the epoch for this dataset");
}

void Trainer::prepare_epoch() {
    if (batches_epoch_ == state_.epoch) return;
    batches_ = epoch_batches(labels_, state_.config, state_.epoch);
    batches_epoch_ = state_.epoch;
}

TwoStreamModel Trainer::model() const { return TwoStreamModel(state_.config.model, state_.params); }

StepRecord Trainer::step() {
    require(!done(), ErrorKind::Runtime, "train: all epochs are complete");
    prepare_epoch();
    const RunConfig& cfg = state_.config;
    const std::vector<std::size_t>& batch = batches_[state_.batch_in_epoch];
    const std::size_t n = batch.size();
    const double lr = lr_at_epoch(cfg, state_.epoch);
    const bool sspsl = cfg.mode == SupervisionMode::Sspsl;

    std::mt19937_64 rng = rng_from_string(state_.rng_state);
    std::vector<std::uint64_t> aug_seeds(n);
    for (auto& s : aug_seeds) s = rng();

    const TwoStreamModel model(cfg.model, state_.params);
    struct Slot {
        Tape tape;
        std::optional<ParamBinding> bound;
        std::optional<Sample> sample;
        ForwardResult fwd;
        double l_cls = 0.0, l_loc = 0.0;
    };
    std::vector<std::unique_ptr<Slot>> slots(n);
    for (auto& s : slots) s = std::make_unique<Slot>();

    parallel_for(n, cfg.threads, [&](std::size_t i) {
        Slot& s = *slots[i];
        s.sample = augment(train_[batch[i]], aug_seeds[i], cfg.augment, !sspsl);
        s.bound.emplace(s.tape, model.params());
        s.fwd = model.forward(s.tape, *s.bound, s.sample->image);
    });

    std::vector<PatchLabelMap> targets;
    if (sspsl) {
        std::vector<Tensor> feats;
        std::vector<int> labels;
        std::vector<GridRect> rects;
        for (const auto& s : slots) {
            feats.push_back(s->fwd.taps.at("F_l").value());
            labels.push_back(s->sample->label);
            rects.push_back(s->sample->label == 1
                                ? region_rect(cfg.region, s->sample->landmarks, cfg.model.grid, cfg.model.image_size)
                                : GridRect{0, 0, 0, 0});
        }
        targets = sspsl_labels(feats, labels, rects, state_.anchors).labels;
    } else {
        for (const auto& s : slots) targets.push_back(mask_to_patches(s->sample->mask(), cfg.model.grid));
    }

    parallel_for(n, cfg.threads, [&](std::size_t i) {
        Slot& s = *slots[i];
        const Var lc = loss_cls(s.fwd.cls_logit, s.sample->label);
        const Var ll = loss_loc(s.fwd.loc_logits, targets[i]);
        s.tape.backward(loss_total(lc, ll));
        s.l_cls = lc.value().item();
        s.l_loc = ll.value().item();
    });

    StepRecord rec;
    rec.step = state_.params.step() + 1;
    rec.epoch = state_.epoch;
    rec.lr = lr;
    const double inv = 1.0 / static_cast<double>(n);
    for (const auto& s : slots) {
        s->bound->accumulate_into(state_.params, inv);
        rec.loss_cls += s->l_cls;
        rec.loss_loc += s->l_loc;
        (s->sample->label == 0 ? rec.n_real : rec.n_fake) += 1;
    }
    rec.loss_cls *= inv;
    rec.loss_loc *= inv;
    rec.loss = rec.loss_cls + rec.loss_loc;
    require(std::isfinite(rec.loss), ErrorKind::Numeric, "train: non-finite loss at step " + std::to_string(rec.step));
    adam_step(state_.params, lr, cfg.adam);

    state_.rng_state = rng_to_string(rng);
    state_.history.push_back(rec);
    if (++state_.batch_in_epoch == batches_.size()) {
        if (log_) {
            const auto losses = epoch_losses();
            std::ostringstream os;
            os << "epoch " << state_.epoch + 1 << "/" << cfg.epochs << " lr " << lr << " mean loss " << losses.back();
            log_(os.str());
        }
        state_.batch_in_epoch = 0;
        ++state_.epoch;
    }
    return rec;
}

void Trainer::run_steps(std::size_t steps) {
    for (std::size_t i = 0; i < steps && !done(); ++i) step();
}

void Trainer::run() {
    while (!done()) step();
}

std::vector<double> Trainer::epoch_losses() const {
    std::vector<double> sums, counts;
    for (const auto& r : state_.history) {
        const auto e = static_cast<std::size_t>(r.epoch);
        if (sums.size() <= e) {
            sums.resize(e + 1, 0.0);
            counts.resize(e + 1, 0.0);
        }
        sums[e] += r.loss;
        counts[e] += 1.0;
    }
    for (std::size_t e = 0; e < sums.size(); ++e) sums[e] = counts[e] > 0 ? sums[e] / counts[e] : 0.0;
    return sums;
}

// ---------------------------------------------------------------------------

namespace {

double sigmoid_of(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

Prediction infer(const TwoStreamModel& model, const Tensor& image) {
    Tape tape;
    tape.set_check_finite(false);
    ParamBinding bound(tape, model.params(), false);
    const ForwardResult r = model.forward(tape, bound, image);
    Prediction p;
    p.probability = sigmoid_of(r.cls_logit.value().item());
    const std::size_t g = model.config().grid;
    p.forgery_map = r.loc_logits.value().reshaped({g, g});
    for (double& v : p.forgery_map.data()) v = sigmoid_of(v);
    return p;
}

}  // namespace

Prediction predict(const TwoStreamModel& model, const Tensor& image) {
    const std::size_t s = model.config().image_size;
    require(image.shape() == Shape{3, s, s}, ErrorKind::Shape,
            "predict: image " + shape_str(image.shape()) + " does not match the model input [3," + std::to_string(s) + "," +
                std::to_string(s) + "]");
    return infer(model, image);
}

MetricsReport evaluate(const TwoStreamModel& model, const std::vector<Sample>& samples, const EvalOptions& opts) {
    require(!samples.empty(), ErrorKind::InvalidArgument, "evaluate: empty dataset");
    const std::size_t s = model.config().image_size, g = model.config().grid;
    for (const Sample& smp : samples)
        require(smp.image.shape() == Shape{3, s, s}, ErrorKind::Config,
                "evaluate: sample '" + smp.id + "' image " + shape_str(smp.image.shape()) +
                    " does not match the model's " + std::to_string(s) + "px input");
    std::vector<SampleResult> results(samples.size());
    parallel_for(samples.size(), opts.threads, [&](std::size_t i) {
        const Sample& smp = samples[i];
        const Prediction p = infer(model, smp.image);
        SampleResult& r = results[i];
        r.id = smp.id;
        r.label = smp.label;
        r.video_id = smp.video_id;
        r.score = p.probability;
        r.forgery_map = p.forgery_map;
        if (opts.loc_accuracy && smp.has_mask()) {
            const PatchLabelMap truth = mask_to_patches(smp.mask(), g);
            std::size_t ok = 0;
            for (std::size_t k = 0; k < truth.values.size(); ++k) ok += (p.forgery_map[k] >= 0.5 ? 1 : 0) == truth.values[k];
            r.loc_accuracy = static_cast<double>(ok) / static_cast<double>(truth.values.size());
        }
    });
    return summarize(std::move(results));
}

}  // namespace dfl
