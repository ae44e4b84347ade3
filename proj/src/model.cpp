#include "dfl/model.hpp"

#include <bit>
#include <cmath>
#include <random>

#include "dfl/error.hpp"
#include "dfl/srm.hpp"

namespace dfl {

std::string to_string(StreamMode m) {
    switch (m) {
        case StreamMode::Both: return "both";
        case StreamMode::Rgb: return "rgb";
        case StreamMode::Srm: return "srm";
    }
    return "both";
}

StreamMode stream_mode_from_string(const std::string& s) {
    if (s == "both") return StreamMode::Both;
    if (s == "rgb") return StreamMode::Rgb;
    if (s == "srm") return StreamMode::Srm;
    fail(ErrorKind::Config, "unknown stream mode '" + s + "' (expected both|rgb|srm)");
}

void ModelConfig::validate() const {
    auto bad = [](const std::string& m) { fail(ErrorKind::Config, "model config: " + m); };
    if (image_size == 0 || grid == 0) bad("image_size and grid must be positive");
    if (image_size % grid != 0)
        bad("image_size " + std::to_string(image_size) + " is not divisible by grid " + std::to_string(grid));
    const std::size_t down = image_size / grid;
    if (!std::has_single_bit(down) || down > 64)
        bad("image_size/grid must be a power of two no larger than 64, got " + std::to_string(down));
    for (auto w : entry_widths)
        if (w == 0) bad("entry widths must be positive");
    for (auto w : middle_widths)
        if (w == 0) bad("middle widths must be positive");
    if (exit_width == 0 || embed_dim == 0 || bilinear_m == 0 || bilinear_n == 0) bad("widths must be positive");
    if (n_cmce < 0 || n_cmce > 3) bad("n_cmce must be in [0,3]");
    if (n_lfga < 0 || n_lfga > 3) bad("n_lfga must be in [0,3]");
    if (use_cmce && streams != StreamMode::Both) bad("CMCE requires both streams");
}

std::array<int, 6> ModelConfig::block_strides() const {
    // Downsampling is assigned in the order entry1, entry2, middle1, entry3,
    // middle2, middle3.
    static constexpr std::array<int, 6> order{0, 1, 3, 2, 4, 5};
    std::array<int, 6> strides{1, 1, 1, 1, 1, 1};
    int halvings = std::countr_zero(image_size / grid);
    for (int i = 0; i < halvings; ++i) strides[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 2;
    return strides;
}

ModelConfig ModelConfig::micro() {
    ModelConfig c;
    c.image_size = 16;
    c.grid = 2;
    c.entry_widths = {3, 4, 4};
    c.middle_widths = {4, 4, 4};
    c.exit_width = 4;
    c.embed_dim = 3;
    c.bilinear_m = 3;
    c.bilinear_n = 4;
    return c;
}

ModelConfig ModelConfig::paper_scale() {
    ModelConfig c;
    c.image_size = 152;
    c.grid = 19;
    c.bilinear_m = 2048;
    c.bilinear_n = 4096;
    return c;
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
    return a.image_size == b.image_size && a.grid == b.grid && a.entry_widths == b.entry_widths &&
           a.middle_widths == b.middle_widths && a.exit_width == b.exit_width && a.embed_dim == b.embed_dim &&
           a.bilinear_m == b.bilinear_m && a.bilinear_n == b.bilinear_n && a.n_cmce == b.n_cmce &&
           a.n_lfga == b.n_lfga && a.streams == b.streams && a.use_cmce == b.use_cmce && a.use_lfga == b.use_lfga &&
           a.use_mpff == b.use_mpff && a.seed == b.seed;
}

// ---------------------------------------------------------------------------

namespace nn {

CmceOutput cmce_step(Var f_r, Var f_h) {
    require(f_r.shape() == f_h.shape(), ErrorKind::Shape,
            "cmce_step: stream shapes differ " + shape_str(f_r.shape()) + " vs " + shape_str(f_h.shape()));
    Var corr = cosine_per_position(f_r, f_h);
    Var r = relu(add(f_r, mul(f_h, corr)));
    Var h = relu(add(f_h, mul(f_r, corr)));
    return {r, h, corr};
}

Var cmce_fuse(Var f_r, Var f_h) {
    require(f_r.shape() == f_h.shape(), ErrorKind::Shape,
            "cmce_fuse: stream shapes differ " + shape_str(f_r.shape()) + " vs " + shape_str(f_h.shape()));
    return add(f_r, f_h);
}

Var lfga_attention(Var f_l, Var g_weight) {
    require(f_l.shape().size() == 3, ErrorKind::Shape, "lfga_attention: expected [C,H,W]");
    const Shape& s = f_l.shape();
    Var g = reshape(conv2d(f_l, g_weight, std::nullopt, 1, 0), {g_weight.shape()[0], s[1] * s[2]});
    return softmax_rows(matmul(transpose(g), g));
}

Var lfga_apply(Var f_c, Var att, Var h_weight) {
    require(f_c.shape().size() == 3, ErrorKind::Shape, "lfga_apply: expected [C,H,W]");
    const Shape& s = f_c.shape();
    const std::size_t l = s[1] * s[2];
    require(att.shape() == Shape{l, l}, ErrorKind::Shape,
            "lfga_apply: attention " + shape_str(att.shape()) + " does not match " + std::to_string(l) + " positions");
    Var h = reshape(conv2d(f_c, h_weight, std::nullopt, 1, 0), {s[0], l});
    Var mixed = reshape(matmul(h, transpose(att)), s);
    return relu(add(mixed, f_c));
}

Var patch_consistency(Var f_l, Var intermediate, const PatchEmbedding& theta, std::size_t embed_dim) {
    const Shape& ls = f_l.shape();
    const Shape& is = intermediate.shape();
    require(ls.size() == 3 && is.size() == 3, ErrorKind::Shape, "patch_consistency: expected [C,H,W] inputs");
    const std::size_t gh = ls[1], gw = ls[2];
    require(is[1] >= gh && is[2] >= gw, ErrorKind::Shape,
            "patch_consistency: intermediate " + shape_str(is) + " is smaller than the " + std::to_string(gh) + "x" +
                std::to_string(gw) + " grid");
    const std::size_t s = std::max((is[1] + gh - 1) / gh, (is[2] + gw - 1) / gw);
    Var padded = pad_bottom_right(intermediate, gh * s, gw * s);
    Var ep = conv2d(padded, theta.patch_w, theta.patch_b, 1, 0);
    Var ea = upsample_nearest(conv2d(f_l, theta.anchor_w, theta.anchor_b, 1, 0), s);
    Var dots = channel_sum(mul(ep, ea));
    Var t = tanh(scale(dots, 1.0 / static_cast<double>(embed_dim)));
    return space_to_depth(t, s);
}

Var mpff_loc(Var f_l, const std::vector<Var>& intermediates, const std::vector<PatchEmbedding>& thetas, Var head_w,
             Var head_b, std::size_t embed_dim) {
    require(intermediates.size() == thetas.size(), ErrorKind::InvalidArgument,
            "mpff_loc: one embedding per intermediate required");
    std::vector<Var> parts{f_l};
    for (std::size_t i = 0; i < intermediates.size(); ++i)
        parts.push_back(patch_consistency(f_l, intermediates[i], thetas[i], embed_dim));
    return conv2d(concat_channels(parts), head_w, head_b, 1, 0);
}

Var bilinear_fuse(Var f_c, const std::vector<Var>& shallow, const BilinearParams& params) {
    const Shape& cs = f_c.shape();
    require(cs.size() == 3, ErrorKind::Shape, "bilinear_fuse: expected [C,H,W]");
    const std::size_t h = cs[1], w = cs[2], l = h * w;
    Var f_s = f_c;
    if (!shallow.empty()) {
        std::vector<Var> pooled;
        for (const Var& s : shallow) pooled.push_back(avg_pool(s, h, w));
        f_s = concat_channels(pooled);
    }
    const std::size_t c_s = f_s.shape()[0];
    const std::size_t n = params.p.shape()[0];
    const std::size_t m = params.p.shape()[1];
    require(params.u.shape() == Shape{c_s, m}, ErrorKind::Shape,
            "bilinear_fuse: U must be [" + std::to_string(c_s) + "," + std::to_string(m) + "]");
    require(params.v.shape() == Shape{cs[0], m}, ErrorKind::Shape,
            "bilinear_fuse: V must be [" + std::to_string(cs[0]) + "," + std::to_string(m) + "]");
    require(params.bias.shape() == Shape{n, h, w}, ErrorKind::Shape, "bilinear_fuse: bias map shape mismatch");
    Var us = matmul(transpose(params.u), reshape(f_s, {c_s, l}));
    Var vc = matmul(transpose(params.v), reshape(f_c, {cs[0], l}));
    Var z = matmul(params.p, mul(us, vc));
    return add(reshape(z, {n, h, w}), params.bias);
}

Var classification_head(Var features, Var w, Var b) {
    const Shape& fs = features.shape();
    require(fs.size() == 3, ErrorKind::Shape, "classification_head: expected [C,H,W]");
    Var pooled = reshape(avg_pool(features, 1, 1), {fs[0], 1});
    return reshape(add(matmul(w, pooled), reshape(b, {1, 1})), {1});
}

}  // namespace nn

// ---------------------------------------------------------------------------

namespace {

std::size_t spatial_after(std::size_t size, int stride) { return stride == 2 ? (size + 1) / 2 : size; }

struct Layout {
    std::array<std::size_t, 6> sizes;  // spatial extent after each block
    std::vector<std::size_t> inter_channels;
    std::vector<std::size_t> inter_sizes;
};

Layout layout_of(const ModelConfig& cfg) {
    Layout lay{};
    auto strides = cfg.block_strides();
    std::size_t s = cfg.image_size;
    for (std::size_t i = 0; i < 6; ++i) {
        s = spatial_after(s, strides[i]);
        lay.sizes[i] = s;
    }
    lay.inter_channels = {cfg.entry_widths[0], cfg.entry_widths[2]};
    lay.inter_sizes = {lay.sizes[0], lay.sizes[2]};
    return lay;
}

bool has_rgb(const ModelConfig& c) { return c.streams != StreamMode::Srm; }
bool has_srm(const ModelConfig& c) { return c.streams != StreamMode::Rgb; }

std::string entry_name(const char* stream, std::size_t k) { return std::string(stream) + ".entry" + std::to_string(k + 1); }
std::string mid_name(const char* branch, std::size_t k) { return std::string(branch) + ".mid" + std::to_string(k + 1); }

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

// Standard deviation for a weight: fan-in He scaling for layers followed by
// ReLU, fan-in LeCun scaling for linear maps; zero for biases and the bias map.
double init_std(const std::string& name, const Shape& shape) {
    auto ends_with = [&name](const char* suf) {
        const std::string s(suf);
        return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    if (ends_with(".b") || name == "mpff_cls.B") return 0.0;
    if (name == "mpff_cls.U" || name == "mpff_cls.V") return std::sqrt(1.0 / static_cast<double>(shape[0]));
    if (name == "mpff_cls.P" || name == "cls_head.w") return std::sqrt(1.0 / static_cast<double>(shape[1]));
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    const bool relu_layer = name.find(".entry") != std::string::npos || name.find(".mid") != std::string::npos ||
                            name.rfind("cls.exit", 0) == 0;
    return std::sqrt((relu_layer ? 2.0 : 1.0) / static_cast<double>(fan_in));
}

}  // namespace

std::map<std::string, Shape> TwoStreamModel::parameter_shapes(const ModelConfig& cfg) {
    cfg.validate();
    std::map<std::string, Shape> out;
    auto conv = [&out](const std::string& name, std::size_t co, std::size_t ci, std::size_t k, bool bias = true) {
        out[name + ".w"] = {co, ci, k, k};
        if (bias) out[name + ".b"] = {co};
    };
    for (std::size_t k = 0; k < 3; ++k) {
        const std::size_t ci = k == 0 ? 3 : cfg.entry_widths[k - 1];
        if (has_rgb(cfg)) conv(entry_name("rgb", k), cfg.entry_widths[k], ci, 3);
        if (has_srm(cfg)) conv(entry_name("srm", k), cfg.entry_widths[k], ci, 3);
    }
    for (std::size_t k = 0; k < 3; ++k) {
        const std::size_t ci = k == 0 ? cfg.entry_widths[2] : cfg.middle_widths[k - 1];
        conv(mid_name("loc", k), cfg.middle_widths[k], ci, 3);
        conv(mid_name("cls", k), cfg.middle_widths[k], ci, 3);
        if (cfg.use_lfga && static_cast<int>(k) < cfg.n_lfga) {
            const std::size_t c = cfg.middle_widths[k];
            out["lfga" + std::to_string(k + 1) + ".g"] = {c, c, 1, 1};
            out["lfga" + std::to_string(k + 1) + ".h"] = {c, c, 1, 1};
        }
    }
    conv("cls.exit", cfg.exit_width, cfg.middle_widths[2], 3);
    const std::size_t c_l = cfg.middle_widths[2];
    if (cfg.use_mpff) {
        const Layout lay = layout_of(cfg);
        std::size_t head_in = c_l;
        for (std::size_t i = 0; i < lay.inter_channels.size(); ++i) {
            const std::string t = "mpff_loc.theta" + std::to_string(i + 1);
            conv(t + ".patch", cfg.embed_dim, lay.inter_channels[i], 1);
            conv(t + ".anchor", cfg.embed_dim, c_l, 1);
            const std::size_t s = (lay.inter_sizes[i] + cfg.grid - 1) / cfg.grid;
            head_in += s * s;
        }
        conv("loc_head", 1, head_in, 1);
        std::size_t c_s = 0;
        for (auto c : lay.inter_channels) c_s += c;
        out["mpff_cls.U"] = {c_s, cfg.bilinear_m};
        out["mpff_cls.V"] = {cfg.exit_width, cfg.bilinear_m};
        out["mpff_cls.P"] = {cfg.bilinear_n, cfg.bilinear_m};
        out["mpff_cls.B"] = {cfg.bilinear_n, cfg.grid, cfg.grid};
        out["cls_head.w"] = {1, cfg.bilinear_n};
    } else {
        conv("loc_head", 1, c_l, 1);
        out["cls_head.w"] = {1, cfg.exit_width};
    }
    out["cls_head.b"] = {1};
    return out;
}

TwoStreamModel::TwoStreamModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    for (const auto& [name, shape] : parameter_shapes(cfg_)) {
        std::mt19937_64 rng(cfg_.seed ^ fnv1a(name));
        const double sd = init_std(name, shape);
        Tensor t = Tensor::zeros(shape);
        if (sd > 0.0) {
            std::normal_distribution<double> dist(0.0, sd);
            for (double& v : t.data()) v = dist(rng);
        }
        params_.add(name, std::move(t));
    }
}

TwoStreamModel::TwoStreamModel(ModelConfig cfg, ParamStore params) : cfg_(std::move(cfg)), params_(std::move(params)) {
    const auto shapes = parameter_shapes(cfg_);
    require(shapes.size() == params_.size(), ErrorKind::Config,
            "parameter set has " + std::to_string(params_.size()) + " tensors, config expects " +
                std::to_string(shapes.size()));
    for (const auto& [name, shape] : shapes) {
        require(params_.contains(name), ErrorKind::Config, "missing parameter '" + name + "'");
        require(params_.at(name).value.shape() == shape, ErrorKind::Config,
                "parameter '" + name + "' has shape " + shape_str(params_.at(name).value.shape()) + ", expected " +
                    shape_str(shape));
    }
}

std::vector<std::string> TwoStreamModel::tap_names() const {
    std::vector<std::string> names{"entry1", "F", "F_l", "F_c", "F_c*", "cls_exit"};
    if (cfg_.use_mpff) names.push_back("F_c'");
    return names;
}

ForwardResult TwoStreamModel::forward(Tape& tape, const ParamBinding& p, const Tensor& image) const {
    require(image.shape() == Shape{3, cfg_.image_size, cfg_.image_size}, ErrorKind::Shape,
            "forward: expected image [3," + std::to_string(cfg_.image_size) + "," + std::to_string(cfg_.image_size) +
                "], got " + shape_str(image.shape()));
    ForwardResult res;
    const auto strides = cfg_.block_strides();
    auto block = [&p](Var x, const std::string& name, int stride) {
        return relu(conv2d(x, p[name + ".w"], p[name + ".b"], stride, 1));
    };

    Var r, h;
    if (has_rgb(cfg_)) r = tape.constant(image);
    if (has_srm(cfg_)) h = tape.constant(srm::apply(image));

    std::vector<Var> intermediates;
    Var fused;
    for (std::size_t k = 0; k < 3; ++k) {
        const int st = strides[k];
        if (r.valid()) r = block(r, entry_name("rgb", k), st);
        if (h.valid()) h = block(h, entry_name("srm", k), st);
        if (cfg_.use_cmce && static_cast<int>(k) < cfg_.n_cmce) {
            auto out = nn::cmce_step(r, h);
            r = out.rgb;
            h = out.srm;
            res.taps["corr" + std::to_string(k + 1)] = out.corr;
        }
        if (r.valid() && h.valid())
            fused = nn::cmce_fuse(r, h);
        else
            fused = r.valid() ? r : h;
        if (k == 0) {
            intermediates.push_back(fused);
            res.taps["entry1"] = fused;
        }
    }
    intermediates.push_back(fused);
    res.taps["F"] = fused;

    Var loc = fused, cls = fused;
    for (std::size_t k = 0; k < 3; ++k) {
        const int st = strides[k + 3];
        loc = block(loc, mid_name("loc", k), st);
        cls = block(cls, mid_name("cls", k), st);
        if (cfg_.use_lfga && static_cast<int>(k) < cfg_.n_lfga) {
            const std::string n = "lfga" + std::to_string(k + 1);
            Var att = nn::lfga_attention(loc, p[n + ".g"]);
            res.taps["att" + std::to_string(k + 1)] = att;
            if (k == 0) res.taps["F_c"] = cls;
            cls = nn::lfga_apply(cls, att, p[n + ".h"]);
        } else if (k == 0) {
            res.taps["F_c"] = cls;
        }
    }
    res.taps["F_l"] = loc;
    res.taps["F_c*"] = cls;

    Var exit = block(cls, "cls.exit", 1);
    res.taps["cls_exit"] = exit;
    if (cfg_.use_mpff) {
        std::vector<nn::PatchEmbedding> thetas;
        for (std::size_t i = 0; i < intermediates.size(); ++i) {
            const std::string t = "mpff_loc.theta" + std::to_string(i + 1);
            thetas.push_back({p[t + ".patch.w"], p[t + ".patch.b"], p[t + ".anchor.w"], p[t + ".anchor.b"]});
        }
        res.loc_logits = nn::mpff_loc(loc, intermediates, thetas, p["loc_head.w"], p["loc_head.b"], cfg_.embed_dim);
        nn::BilinearParams bp{p["mpff_cls.P"], p["mpff_cls.U"], p["mpff_cls.V"], p["mpff_cls.B"]};
        Var fused_cls = nn::bilinear_fuse(exit, intermediates, bp);
        res.taps["F_c'"] = fused_cls;
        res.cls_logit = nn::classification_head(fused_cls, p["cls_head.w"], p["cls_head.b"]);
    } else {
        res.loc_logits = conv2d(loc, p["loc_head.w"], p["loc_head.b"], 1, 0);
        res.cls_logit = nn::classification_head(exit, p["cls_head.w"], p["cls_head.b"]);
    }
    res.taps["loc_logits"] = res.loc_logits;
    return res;
}

}  // namespace dfl
