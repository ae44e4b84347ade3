#include "dfl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "dfl/error.hpp"
#include "json.hpp"

namespace dfl {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check_inputs(const std::vector<double>& scores, const std::vector<int>& labels, const char* op) {
    require(scores.size() == labels.size(), ErrorKind::InvalidArgument,
            std::string(op) + ": scores and labels differ in length");
    for (int l : labels) require(l == 0 || l == 1, ErrorKind::InvalidArgument, std::string(op) + ": labels must be 0/1");
    for (double s : scores) require(std::isfinite(s), ErrorKind::Numeric, std::string(op) + ": non-finite score");
}

}  // namespace

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_inputs(scores, labels, "roc_auc");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum = 0.0;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double avg = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] == 1) {
                rank_sum += avg;
                ++pos;
            }
        i = j;
    }
    const std::size_t neg = n - pos;
    require(pos > 0 && neg > 0, ErrorKind::InvalidArgument, "roc_auc: both classes must be present");
    const double p = static_cast<double>(pos);
    return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

double accuracy(const std::vector<double>& scores, const std::vector<int>& labels, double threshold) {
    check_inputs(scores, labels, "accuracy");
    require(!scores.empty(), ErrorKind::InvalidArgument, "accuracy: empty input");
    std::size_t ok = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) ok += (scores[i] >= threshold ? 1 : 0) == labels[i];
    return static_cast<double>(ok) / static_cast<double>(scores.size());
}

double video_auc(const std::vector<double>& scores, const std::vector<int>& labels,
                 const std::vector<std::int64_t>& video_ids) {
    check_inputs(scores, labels, "video_auc");
    require(video_ids.size() == scores.size(), ErrorKind::InvalidArgument, "video_auc: video ids differ in length");
    struct Acc {
        double sum = 0.0;
        std::size_t n = 0;
        int label = -1;
    };
    std::map<std::int64_t, Acc> videos;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        Acc& a = videos[video_ids[i]];
        if (a.label >= 0 && a.label != labels[i])
            fail(ErrorKind::InvalidArgument, "video_auc: video " + std::to_string(video_ids[i]) + " has conflicting labels");
        a.label = labels[i];
        a.sum += scores[i];
        ++a.n;
    }
    std::vector<double> vs;
    std::vector<int> vl;
    for (const auto& [id, a] : videos) {
        vs.push_back(a.sum / static_cast<double>(a.n));
        vl.push_back(a.label);
    }
    return roc_auc(vs, vl);
}

std::vector<RocPoint> roc_curve(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_inputs(scores, labels, "roc_curve");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    const auto pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
    const auto neg = static_cast<double>(labels.size()) - pos;
    require(pos > 0 && neg > 0, ErrorKind::InvalidArgument, "roc_curve: both classes must be present");

    std::vector<RocPoint> out;
    out.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        const double t = scores[order[i]];
        while (i < order.size() && scores[order[i]] == t) {
            (labels[order[i]] == 1 ? tp : fp) += 1.0;
            ++i;
        }
        out.push_back({fp / neg, tp / pos, t});
    }
    out.push_back({1.0, 1.0, -std::numeric_limits<double>::infinity()});
    return out;
}

double trapezoid_area(const std::vector<RocPoint>& roc) {
    double a = 0.0;
    for (std::size_t i = 1; i < roc.size(); ++i)
        a += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) / 2.0;
    return a;
}

Tensor cam_from_activations(const Tensor& feature, const Tensor& grad) {
    require(feature.ndim() == 3, ErrorKind::Shape, "grad_cam: feature must be [C,h,w], got " + shape_str(feature.shape()));
    require(grad.shape() == feature.shape(), ErrorKind::Shape, "grad_cam: gradient shape differs from the feature");
    const std::size_t c = feature.dim(0), h = feature.dim(1), w = feature.dim(2), l = h * w;
    Tensor cam = Tensor::zeros({h, w});
    for (std::size_t ch = 0; ch < c; ++ch) {
        double wc = 0.0;
        for (std::size_t p = 0; p < l; ++p) wc += grad[ch * l + p];
        wc /= static_cast<double>(l);
        for (std::size_t p = 0; p < l; ++p) cam[p] += wc * feature[ch * l + p];
    }
    for (double& v : cam.data()) v = std::max(v, 0.0);
    const auto [lo, hi] = std::minmax_element(cam.data().begin(), cam.data().end());
    const double mn = *lo, mx = *hi;
    if (mx == mn) {
        cam.fill(0.0);
        return cam;
    }
    for (double& v : cam.data()) v = (v - mn) / (mx - mn);
    return cam;
}

Tensor grad_cam(const TwoStreamModel& model, const Tensor& image, const std::string& tap) {
    const auto names = model.tap_names();
    if (std::find(names.begin(), names.end(), tap) == names.end()) {
        std::string list;
        for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
        fail(ErrorKind::InvalidArgument, "grad_cam: unknown tap '" + tap + "'; valid taps: " + list);
    }
    Tape tape;
    ParamBinding bound(tape, model.params());
    ForwardResult r = model.forward(tape, bound, image);
    const Var f = r.taps.at(tap);
    require(f.shape().size() == 3, ErrorKind::Shape,
            "grad_cam: tap '" + tap + "' is not a [C,h,w] feature map (" + shape_str(f.shape()) + ")");
    tape.backward(r.cls_logit);
    return cam_from_activations(f.value(), tape.grad(f));
}

MetricsReport summarize(std::vector<SampleResult> samples) {
    require(!samples.empty(), ErrorKind::InvalidArgument, "summarize: no samples");
    std::vector<double> scores;
    std::vector<int> labels;
    std::vector<std::int64_t> videos;
    double loc = 0.0;
    std::size_t loc_n = 0;
    for (const auto& s : samples) {
        scores.push_back(s.score);
        labels.push_back(s.label);
        videos.push_back(s.video_id);
        if (s.loc_accuracy >= 0.0) {
            loc += s.loc_accuracy;
            ++loc_n;
        }
    }
    MetricsReport r;
    r.frame_auc = roc_auc(scores, labels);
    r.frame_acc = accuracy(scores, labels);
    r.video_auc = video_auc(scores, labels, videos);
    r.loc_accuracy = loc_n ? loc / static_cast<double>(loc_n) : -1.0;
    r.roc = roc_curve(scores, labels);
    r.samples = std::move(samples);
    return r;
}

// ---------------------------------------------------------------------------
// Files

void write_pgm(const fs::path& path, const Tensor& map) {
    require(map.ndim() == 2, ErrorKind::Shape, "write_pgm: expected [h,w], got " + shape_str(map.shape()));
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
    out << "P5\n" << map.dim(1) << ' ' << map.dim(0) << "\n255\n";
    for (double v : map.data()) out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
    if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

Tensor read_pgm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    std::string magic;
    std::size_t w = 0, h = 0;
    int maxv = 0;
    in >> magic >> w >> h >> maxv;
    if (magic != "P5" || !in || w == 0 || h == 0 || maxv != 255) fail(ErrorKind::Format, path.string() + ": not an 8-bit P5 PGM");
    in.get();
    Tensor t = Tensor::zeros({h, w});
    for (double& v : t.data()) {
        const int c = in.get();
        if (c == EOF) fail(ErrorKind::Format, path.string() + ": truncated pixel data");
        v = c / 255.0;
    }
    return t;
}

namespace {

json number(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

double number_from(const json& j) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        fail(ErrorKind::Format, "metrics.json: bad number '" + s + "'");
    }
    return j.get<double>();
}

std::string fmt(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

void write_svg(const fs::path& path, const std::vector<RocPoint>& roc, double auc) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"320\" height=\"320\" viewBox=\"-10 -10 320 320\">\n"
        << "<rect x=\"0\" y=\"0\" width=\"300\" height=\"300\" fill=\"white\" stroke=\"black\"/>\n"
        << "<line x1=\"0\" y1=\"300\" x2=\"300\" y2=\"0\" stroke=\"#bbb\" stroke-dasharray=\"4\"/>\n"
        << "<polyline fill=\"none\" stroke=\"#c33\" stroke-width=\"2\" points=\"";
    for (const auto& p : roc) out << p.fpr * 300.0 << ',' << (1.0 - p.tpr) * 300.0 << ' ';
    out << "\"/>\n<text x=\"150\" y=\"290\" font-size=\"14\">AUC " << auc << "</text>\n</svg>\n";
    if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace

void emit_report(const MetricsReport& report, const fs::path& dir, const ReportOptions& opts) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
    if (opts.maps) {
        fs::create_directories(dir / "maps", ec);
        if (ec) fail(ErrorKind::Io, "cannot create " + (dir / "maps").string() + ": " + ec.message());
    }

    json j;
    j["schema_version"] = kMetricsSchemaVersion;
    j["frame_auc"] = report.frame_auc;
    j["frame_acc"] = report.frame_acc;
    j["video_auc"] = report.video_auc;
    j["loc_accuracy"] = report.loc_accuracy;
    j["seed"] = report.seed;
    j["loss_history"] = report.loss_history;
    j["config"] = report.config_json.empty() ? json::object() : json::parse(report.config_json);
    json roc = json::array();
    for (const auto& p : report.roc) roc.push_back({{"fpr", p.fpr}, {"tpr", p.tpr}, {"threshold", number(p.threshold)}});
    j["roc"] = std::move(roc);
    json samples = json::array();
    for (const auto& s : report.samples) {
        json e{{"id", s.id}, {"label", s.label}, {"video_id", s.video_id}, {"score", s.score},
               {"loc_accuracy", s.loc_accuracy}};
        if (opts.maps && !s.forgery_map.empty()) {
            const std::string rel = "maps/" + s.id + ".pgm";
            write_pgm(dir / rel, s.forgery_map);
            e["map"] = rel;
        }
        samples.push_back(std::move(e));
    }
    j["samples"] = std::move(samples);

    const fs::path mp = dir / "metrics.json";
    std::ofstream out(mp);
    if (!out) fail(ErrorKind::Io, "cannot open " + mp.string() + " for writing");
    out << j.dump(1) << '\n';
    if (!out) fail(ErrorKind::Io, "write failed for " + mp.string());

    const fs::path cp = dir / "roc.csv";
    std::ofstream csv(cp);
    if (!csv) fail(ErrorKind::Io, "cannot open " + cp.string() + " for writing");
    csv << "fpr,tpr,threshold\n";
    for (const auto& p : report.roc) csv << fmt(p.fpr) << ',' << fmt(p.tpr) << ',' << fmt(p.threshold) << '\n';
    if (!csv) fail(ErrorKind::Io, "write failed for " + cp.string());

    if (opts.svg) write_svg(dir / "roc.svg", report.roc, report.frame_auc);
}

MetricsReport read_report(const fs::path& dir) {
    const fs::path mp = dir / "metrics.json";
    std::ifstream in(mp);
    if (!in) fail(ErrorKind::Io, "cannot open " + mp.string());
    MetricsReport r;
    try {
        const json j = json::parse(in);
        const int v = j.at("schema_version").get<int>();
        if (v != kMetricsSchemaVersion)
            fail(ErrorKind::Version, mp.string() + ": schema_version " + std::to_string(v) + " is not supported");
        r.frame_auc = j.at("frame_auc").get<double>();
        r.frame_acc = j.at("frame_acc").get<double>();
        r.video_auc = j.at("video_auc").get<double>();
        r.loc_accuracy = j.at("loc_accuracy").get<double>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.loss_history = j.at("loss_history").get<std::vector<double>>();
        r.config_json = j.at("config").dump();
        for (const auto& p : j.at("roc"))
            r.roc.push_back({p.at("fpr").get<double>(), p.at("tpr").get<double>(), number_from(p.at("threshold"))});
        for (const auto& e : j.at("samples")) {
            SampleResult s;
            s.id = e.at("id").get<std::string>();
            s.label = e.at("label").get<int>();
            s.video_id = e.at("video_id").get<std::int64_t>();
            s.score = e.at("score").get<double>();
            s.loc_accuracy = e.at("loc_accuracy").get<double>();
            r.samples.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::Format, mp.string() + ": " + e.what());
    }
    return r;
}

}  // namespace dfl
