#include <cmath>

#include "dfl/data.hpp"
#include "dfl/error.hpp"
#include "dfl/harness.hpp"
#include "dfl/rng.hpp"

namespace dfl {

namespace {

Tensor random_tensor(Shape shape, Rng& r, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data()) v = r.uniform(lo, hi);
    return t;
}

// Values bounded away from zero so kinks stay out of reach of the step.
Tensor away_from_zero(Shape shape, Rng& r) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data()) v = (r.bernoulli(0.5) ? 1.0 : -1.0) * r.uniform(0.1, 1.0);
    return t;
}

class Suite {
public:
    explicit Suite(std::uint64_t seed) : rng_(seed) {}

    // Checks d/dx of <op(x), R> for a fixed random R.
    void op(const std::string& name, const Tensor& x, const std::function<Var(Tape&, Var)>& fn) {
        Tape probe;
        const Shape out = fn(probe, probe.constant(x)).shape();
        const Tensor weights = random_tensor(out, rng_);
        ScalarFn f = [&](Tape& t, Var v) { return sum(mul(fn(t, v), t.constant(weights))); };
        entries_.push_back({name + tag_, finite_diff_check(f, x)});
    }

    void set_tag(std::string tag) { tag_ = std::move(tag); }
    void add(std::string name, GradCheckResult r) { entries_.push_back({std::move(name), r}); }

    Rng& rng() { return rng_; }
    std::vector<GradCheckEntry> take() { return std::move(entries_); }

private:
    Rng rng_;
    std::vector<GradCheckEntry> entries_;
    std::string tag_;
};

}  // namespace

std::vector<GradCheckEntry> gradcheck_suite(std::uint64_t seed) {
    Suite s(seed);
    Rng& r = s.rng();

    struct Dims {
        std::size_t c, h, w;
    };
    // Three shape variants per op.
    const Dims variants[3] = {{3, 4, 4}, {2, 5, 3}, {4, 3, 6}};
    for (std::size_t k = 0; k < 3; ++k) {
        const auto [C, H, W] = variants[k];
        s.set_tag(" #" + std::to_string(k + 1));
        const Tensor img = random_tensor({C, H + 2, W + 2}, r);
        const Tensor w33 = random_tensor({C + 1, C, 3, 3}, r);
        const Tensor w11 = random_tensor({C + 1, C, 1, 1}, r);
        const Tensor bias = random_tensor({C + 1}, r);
        s.op("conv2d/input s1p1", img, [&](Tape& t, Var x) { return conv2d(x, t.constant(w33), t.constant(bias), 1, 1); });
        s.op("conv2d/input s2p1", img, [&](Tape& t, Var x) { return conv2d(x, t.constant(w33), t.constant(bias), 2, 1); });
        s.op("conv2d/input 1x1", img, [&](Tape& t, Var x) { return conv2d(x, t.constant(w11), std::nullopt, 1, 0); });
        s.op("conv2d/weight", w33, [&](Tape& t, Var w) { return conv2d(t.constant(img), w, std::nullopt, 2, 1); });
        s.op("conv2d/bias", bias, [&](Tape& t, Var b) { return conv2d(t.constant(img), t.constant(w33), b, 1, 1); });
        const Tensor batch = random_tensor({2, C, H + 1, W}, r);
        s.op("conv2d/batched", batch, [&](Tape& t, Var x) { return conv2d(x, t.constant(w33), t.constant(bias), 1, 1); });

        const Tensor a = random_tensor({H, C + 1}, r), b = random_tensor({C + 1, W}, r);
        s.op("matmul/lhs", a, [&](Tape& t, Var x) { return matmul(x, t.constant(b)); });
        s.op("matmul/rhs", b, [&](Tape& t, Var x) { return matmul(t.constant(a), x); });
        s.op("transpose", a, [](Tape&, Var x) { return transpose(x); });
        s.op("softmax_rows", random_tensor({H, W + 1}, r, -3.0, 3.0), [](Tape&, Var x) { return softmax_rows(x); });

        const Tensor chw = away_from_zero({C, H, W}, r);
        s.op("relu", chw, [](Tape&, Var x) { return relu(x); });
        s.op("tanh", chw, [](Tape&, Var x) { return tanh(x); });
        s.op("sigmoid", chw, [](Tape&, Var x) { return sigmoid(x); });
        s.op("scale", chw, [](Tape&, Var x) { return scale(x, -1.7); });
        s.op("clamp", chw, [](Tape&, Var x) { return clamp(x, -0.5, 0.55); });

        const Tensor other = random_tensor({C, H, W}, r);
        const Tensor map = random_tensor({1, H, W}, r);
        s.op("add", chw, [&](Tape& t, Var x) { return add(x, t.constant(other)); });
        s.op("add/broadcast map", map, [&](Tape& t, Var m) { return add(t.constant(other), m); });
        s.op("add/broadcast lhs", map, [&](Tape& t, Var m) { return add(m, t.constant(other)); });
        s.op("mul", chw, [&](Tape& t, Var x) { return mul(x, t.constant(other)); });
        s.op("mul/broadcast map", map, [&](Tape& t, Var m) { return mul(t.constant(other), m); });
        s.op("mul/broadcast feature", other, [&](Tape& t, Var x) { return mul(t.constant(map), x); });

        const Tensor vec = random_tensor({C}, r);
        s.op("cosine/lhs", chw, [&](Tape& t, Var x) { return cosine_per_position(x, t.constant(other)); });
        s.op("cosine/rhs", other, [&](Tape& t, Var x) { return cosine_per_position(t.constant(chw), x); });
        s.op("cosine/vector", vec, [&](Tape& t, Var v) { return cosine_per_position(t.constant(chw), v); });

        const Tensor odd = random_tensor({C, H + 1, W + 3}, r);
        s.op("avg_pool", odd, [&](Tape&, Var x) { return avg_pool(x, 2, W / 2 + 1); });
        s.op("avg_pool/global", odd, [&](Tape&, Var x) { return avg_pool(x, 1, 1); });
        s.op("concat_channels", chw, [&](Tape& t, Var x) { return concat_channels({t.constant(other), x, x}); });
        s.op("slice_channels", chw, [&](Tape&, Var x) { return slice_channels(x, 1, C - 1); });
        s.op("reshape", chw, [&](Tape&, Var x) { return reshape(x, {C * H, W}); });
        s.op("sum", chw, [&](Tape&, Var x) { return sum(x); });
        s.op("mean", chw, [&](Tape&, Var x) { return mean(x); });
        s.op("pad_bottom_right", odd, [&](Tape&, Var x) { return pad_bottom_right(x, H + 3, W + 4); });
        s.op("upsample_nearest", odd, [&](Tape&, Var x) { return upsample_nearest(x, 2); });
        s.op("channel_sum", odd, [&](Tape&, Var x) { return channel_sum(x); });
        s.op("space_to_depth", random_tensor({1, 2 * H, 2 * W}, r), [&](Tape&, Var x) { return space_to_depth(x, 2); });
        Tensor targets = Tensor::zeros({1, H, W});
        for (std::size_t i = 0; i < targets.size(); i += 2) targets[i] = 1.0;
        s.op("bce_with_logits_sum", random_tensor({1, H, W}, r, -4.0, 4.0),
             [&](Tape&, Var x) { return bce_with_logits_sum(x, targets); });

        // Composite modules.
        const Tensor fr = random_tensor({C, H, W}, r), fh = random_tensor({C, H, W}, r);
        s.op("cmce/rgb", fr, [&](Tape& t, Var x) { return nn::cmce_step(x, t.constant(fh)).rgb; });
        s.op("cmce/srm", fh, [&](Tape& t, Var x) { return nn::cmce_step(t.constant(fr), x).srm; });
        const Tensor g = random_tensor({C, C, 1, 1}, r), h = random_tensor({C, C, 1, 1}, r);
        s.op("lfga/attention", fr, [&](Tape& t, Var x) { return nn::lfga_attention(x, t.constant(g)); });
        s.op("lfga/g", g, [&](Tape& t, Var w) { return nn::lfga_attention(t.constant(fr), w); });
        s.op("lfga/apply", fh, [&](Tape& t, Var x) {
            return nn::lfga_apply(x, nn::lfga_attention(t.constant(fr), t.constant(g)), t.constant(h));
        });
        s.op("lfga/h", h, [&](Tape& t, Var w) {
            return nn::lfga_apply(t.constant(fh), nn::lfga_attention(t.constant(fr), t.constant(g)), w);
        });

        const Tensor fl = random_tensor({C, 2, 2}, r), inter = random_tensor({2, H + 1, W + 1}, r);
        const Tensor pw = random_tensor({4, 2, 1, 1}, r), pb = random_tensor({4}, r);
        const Tensor aw = random_tensor({4, C, 1, 1}, r), ab = random_tensor({4}, r);
        auto theta = [&](Tape& t) {
            return nn::PatchEmbedding{t.constant(pw), t.constant(pb), t.constant(aw), t.constant(ab)};
        };
        s.op("patch_consistency/intermediate", inter, [&](Tape& t, Var x) {
            return nn::patch_consistency(t.constant(fl), x, theta(t), 4);
        });
        s.op("patch_consistency/f_l", fl, [&](Tape& t, Var x) {
            return nn::patch_consistency(x, t.constant(inter), theta(t), 4);
        });
        s.op("patch_consistency/theta", pw, [&](Tape& t, Var w) {
            auto th = theta(t);
            th.patch_w = w;
            return nn::patch_consistency(t.constant(fl), t.constant(inter), th, 4);
        });

        const Tensor fc = random_tensor({C, 2, 2}, r), sh = random_tensor({2, H + 1, W + 1}, r);
        const Tensor P = random_tensor({4, 3}, r), U = random_tensor({2, 3}, r), V = random_tensor({C, 3}, r);
        const Tensor B = random_tensor({4, 2, 2}, r);
        auto bil = [&](Tape& t) { return nn::BilinearParams{t.constant(P), t.constant(U), t.constant(V), t.constant(B)}; };
        s.op("bilinear/f_c", fc, [&](Tape& t, Var x) { return nn::bilinear_fuse(x, {t.constant(sh)}, bil(t)); });
        s.op("bilinear/shallow", sh, [&](Tape& t, Var x) { return nn::bilinear_fuse(t.constant(fc), {x}, bil(t)); });
        s.op("bilinear/U", U, [&](Tape& t, Var u) {
            auto p = bil(t);
            p.u = u;
            return nn::bilinear_fuse(t.constant(fc), {t.constant(sh)}, p);
        });
        s.op("bilinear/P", P, [&](Tape& t, Var x) {
            auto p = bil(t);
            p.p = x;
            return nn::bilinear_fuse(t.constant(fc), {t.constant(sh)}, p);
        });
        const Tensor hw = random_tensor({1, C}, r), hb = random_tensor({1}, r);
        s.op("classification_head", fc, [&](Tape& t, Var x) {
            return nn::classification_head(x, t.constant(hw), t.constant(hb));
        });
    }
    s.set_tag("");

    // Full training loss at the micro configuration, over every parameter.
    ModelConfig mc = ModelConfig::micro();
    mc.seed = seed;
    TwoStreamModel model(mc);
    // Zero-initialized biases put dead receptive fields exactly on ReLU
    // kinks; check at a generic point instead.
    for (auto& [name, p] : model.params())
        if (p.value.ndim() == 1 || name == "mpff_cls.B")
            for (double& v : p.value.data()) v = r.uniform(-0.1, 0.1);
    DatasetSpec spec;
    spec.image_size = mc.image_size;
    spec.real_count = 1;
    spec.fake_b = 1;
    spec.seed = seed;
    const auto data = generate_dataset(spec);
    for (const Sample& smp : data) {
        const PatchLabelMap labels = mask_to_patches(smp.mask(), mc.grid);
        StoreLossFn loss = [&](Tape& t, const ParamBinding& p) {
            ForwardResult fr = model.forward(t, p, smp.image);
            return loss_total(loss_cls(fr.cls_logit, smp.label), loss_loc(fr.loc_logits, labels));
        };
        s.add(std::string("model/total loss (") + (smp.label ? "fake" : "real") + ")",
              finite_diff_check(loss, model.params()));
    }
    return s.take();
}

}  // namespace dfl
