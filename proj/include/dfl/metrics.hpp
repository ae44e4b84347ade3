#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dfl/model.hpp"
#include "dfl/tensor.hpp"

namespace dfl {

// Mann-Whitney U / (n_pos * n_neg) with average ranks for ties.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Fraction of samples with (score >= threshold) == label.
double accuracy(const std::vector<double>& scores, const std::vector<int>& labels, double threshold = 0.5);

// Per-video score = mean frame score, then roc_auc over videos.
double video_auc(const std::vector<double>& scores, const std::vector<int>& labels,
                 const std::vector<std::int64_t>& video_ids);

struct RocPoint {
    double fpr, tpr, threshold;
};

// One point per distinct score (predict fake iff score >= threshold), plus
// the (0,0) endpoint at +inf and the (1,1) endpoint at -inf.
std::vector<RocPoint> roc_curve(const std::vector<double>& scores, const std::vector<int>& labels);
double trapezoid_area(const std::vector<RocPoint>& roc);

// CAM from a feature map [C,h,w] and d(logit)/d(feature): channel weights are
// spatial means of the gradient, CAM = ReLU(sum_c w_c f_c) min-max normalized
// to [0,1]; all zeros when the map is flat.
Tensor cam_from_activations(const Tensor& feature, const Tensor& grad);

// Grad-CAM of the classification logit at a named forward tap.
Tensor grad_cam(const TwoStreamModel& model, const Tensor& image, const std::string& tap);

struct SampleResult {
    std::string id;
    int label = 0;
    std::int64_t video_id = 0;
    double score = 0.0;     // sigmoid(cls logit)
    Tensor forgery_map;     // [Hp,Wp] patch probabilities
    double loc_accuracy = -1.0;  // fraction of patches matching the mask, -1 if unknown
};

inline constexpr int kMetricsSchemaVersion = 1;

struct MetricsReport {
    double frame_auc = 0.0;
    double frame_acc = 0.0;
    double video_auc = 0.0;
    double loc_accuracy = -1.0;  // mean over samples that carry a mask
    std::vector<RocPoint> roc;
    std::vector<double> loss_history;
    std::vector<SampleResult> samples;
    std::string config_json;  // config echo
    std::uint64_t seed = 0;
};

// Frame/video metrics from per-sample results; maps are kept as given.
MetricsReport summarize(std::vector<SampleResult> samples);

struct ReportOptions {
    bool maps = true;  // maps/<id>.pgm
    bool svg = true;   // roc.svg
};

// Writes metrics.json, roc.csv, optional maps and roc.svg into `dir`.
void emit_report(const MetricsReport& report, const std::filesystem::path& dir, const ReportOptions& opts = {});
// Reads metrics.json back; per-sample maps are not restored.
MetricsReport read_report(const std::filesystem::path& dir);

// 8-bit binary PGM of a [h,w] map with values in [0,1].
void write_pgm(const std::filesystem::path& path, const Tensor& map);
Tensor read_pgm(const std::filesystem::path& path);

}  // namespace dfl
