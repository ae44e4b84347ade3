#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dfl/data.hpp"
#include "dfl/gradcheck.hpp"
#include "dfl/metrics.hpp"
#include "dfl/model.hpp"
#include "dfl/optim.hpp"
#include "dfl/supervision.hpp"

namespace dfl {

enum class SupervisionMode { Mask, Sspsl };

std::string to_string(SupervisionMode m);
SupervisionMode supervision_mode_from_string(const std::string& s);

struct RunConfig {
    ModelConfig model;
    AdamConfig adam;
    double lr = 5e-4;
    int lr_halve_every = 5;  // epochs
    int epochs = 15;
    std::size_t batch_size = 16;
    std::size_t min_real = 4;
    std::size_t min_fake = 4;
    SupervisionMode mode = SupervisionMode::Mask;
    ReferenceRegion region = ReferenceRegion::Nose;
    AugmentOptions augment;
    std::string train_data;
    std::string eval_data;
    std::uint64_t seed = 1;
    std::string out_dir = "run";
    std::size_t threads = 0;  // 0 = hardware concurrency

    void validate() const;
};

std::string config_to_json(const RunConfig& cfg);
// Unknown keys and malformed values are Config errors. Missing keys keep
// their defaults.
RunConfig config_from_json(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

// lr0 * 0.5^floor(epoch / every).
double lr_at_epoch(const RunConfig& cfg, int epoch);

// Deterministic batches for one epoch: reals and fakes are shuffled
// separately from (seed, epoch) and dealt so every batch holds at least
// min_real reals and min_fake fakes. Throws a Config error if the dataset
// cannot satisfy the composition.
std::vector<std::vector<std::size_t>> epoch_batches(const std::vector<int>& labels, const RunConfig& cfg, int epoch);

struct StepRecord {
    std::uint64_t step = 0;
    int epoch = 0;
    double lr = 0.0;
    double loss = 0.0;  // batch mean of loss_cls + loss_loc
    double loss_cls = 0.0;
    double loss_loc = 0.0;
    std::size_t n_real = 0;
    std::size_t n_fake = 0;
};

inline constexpr int kCheckpointVersion = 1;

struct TrainState {
    RunConfig config;
    ParamStore params;  // values, Adam moments, step counter
    int epoch = 0;
    std::size_t batch_in_epoch = 0;
    std::string rng_state;
    AnchorState anchors;
    std::vector<StepRecord> history;
};

// manifest.json + params.tnsr + optimizer.tnsr in `dir`.
void save_checkpoint(const TrainState& state, const std::filesystem::path& dir);
TrainState load_checkpoint(const std::filesystem::path& dir);

using LogFn = std::function<void(const std::string&)>;

class Trainer {
public:
    Trainer(RunConfig cfg, std::vector<Sample> train);
    Trainer(TrainState state, std::vector<Sample> train);

    // One optimizer step on the next batch. Returns its record.
    StepRecord step();
    // Runs until `steps` more steps are done or training completes.
    void run_steps(std::size_t steps);
    // Runs to the configured number of epochs.
    void run();
    bool done() const { return state_.epoch >= state_.config.epochs; }

    std::size_t steps_per_epoch() const { return batches_.size(); }
    const TrainState& state() const { return state_; }
    TwoStreamModel model() const;
    void save(const std::filesystem::path& dir) const { save_checkpoint(state_, dir); }
    void set_log(LogFn log) { log_ = std::move(log); }

    // Mean step loss per completed or partial epoch.
    std::vector<double> epoch_losses() const;

private:
    void prepare_epoch();

    TrainState state_;
    std::vector<Sample> train_;
    std::vector<int> labels_;
    std::vector<std::vector<std::size_t>> batches_;
    int batches_epoch_ = -1;
    LogFn log_;
};

struct EvalOptions {
    std::size_t threads = 0;
    bool loc_accuracy = true;  // reads masks
};

MetricsReport evaluate(const TwoStreamModel& model, const std::vector<Sample>& samples, const EvalOptions& opts = {});

struct Prediction {
    double probability = 0.0;
    Tensor forgery_map;  // [Hp,Wp]
};

Prediction predict(const TwoStreamModel& model, const Tensor& image);

struct AblationRow {
    std::string name;
    double frame_auc = 0.0, frame_acc = 0.0, video_auc = 0.0;
    double wall_time = 0.0;  // seconds
    std::string status;      // "ok" or the error message
};

struct AblationVariant {
    std::string name;
    RunConfig config;
};

// Component variants (rgb-only .. full) followed by the four reference-region
// variants in sspsl mode.
std::vector<AblationVariant> ablation_variants(const RunConfig& base);

// Trains and evaluates each variant; a failing variant is recorded and the
// rest still run. Writes `csv` when non-empty.
std::vector<AblationRow> ablate(const std::vector<AblationVariant>& variants, const std::vector<Sample>& train,
                                const std::vector<Sample>& eval, const std::filesystem::path& csv, const LogFn& log = {});

struct GradCheckEntry {
    std::string name;
    GradCheckResult result;
};

// Finite-difference checks of every differentiable op and of the full
// training loss at the micro configuration.
std::vector<GradCheckEntry> gradcheck_suite(std::uint64_t seed);

// Runs fn(i) for i in [0, n) on up to `threads` workers (0 = hardware).
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace dfl
