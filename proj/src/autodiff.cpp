#include "dfl/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "dfl/error.hpp"
#include "kernels.hpp"

namespace dfl {

const Tensor& Var::value() const {
    require(valid(), ErrorKind::InvalidArgument, "use of an unbound Var");
    return tape->value(id);
}

Tape::Tape() {
#ifdef NDEBUG
    check_finite_ = false;
#else
    check_finite_ = true;
#endif
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward, const char* op_name) {
    bool rg = false;
    for (const Var& v : inputs) {
        require(v.tape == this, ErrorKind::InvalidArgument, std::string(op_name) + ": input recorded on another tape");
        rg = rg || requires_grad(v.id);
    }
    if (check_finite_) value.check_finite(op_name);
    Node n;
    n.value = std::move(value);
    n.requires_grad = rg;
    n.is_leaf = false;
    n.op = op_name;
    if (rg) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Tensor& Tape::grad_buffer(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
    return n.grad;
}

Tensor Tape::grad(Var v) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    if (n.grad.empty()) return Tensor::zeros(n.value.shape());
    return n.grad;
}

void Tape::backward(Var loss) {
    require(loss.tape == this, ErrorKind::InvalidArgument, "backward: loss recorded on another tape");
    Node& ln = nodes_[static_cast<std::size_t>(loss.id)];
    require(ln.value.size() == 1, ErrorKind::Shape,
            "backward requires a scalar loss, got shape " + shape_str(ln.value.shape()));
    for (Node& n : nodes_)
        if (!n.is_leaf) n.grad = Tensor();
    for (Node& n : nodes_)
        if (n.is_leaf && n.requires_grad && n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
    if (!ln.requires_grad) return;
    grad_buffer(loss.id)[0] += 1.0;
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.is_leaf || !n.backward || n.grad.empty()) continue;
        n.backward(*this, n.grad);
    }
}

void Tape::zero_grad() {
    for (Node& n : nodes_) n.grad = Tensor();
}

// ---------------------------------------------------------------------------

namespace {

std::string sh(const Var& v) { return shape_str(v.shape()); }

void require_chw(const Var& v, const char* op) {
    require(v.shape().size() == 3, ErrorKind::Shape, std::string(op) + ": expected [C,H,W], got " + sh(v));
}

}  // namespace

Var conv2d(Var input, Var weight, std::optional<Var> bias, int stride, int padding) {
    Tape& t = *input.tape;
    const Shape& ws = weight.shape();
    require(ws.size() == 4, ErrorKind::Shape, "conv2d: weight must be [Co,Ci,kh,kw], got " + sh(weight));
    require(stride > 0, ErrorKind::InvalidArgument, "conv2d: stride must be positive");
    require(padding >= 0, ErrorKind::InvalidArgument, "conv2d: padding must be non-negative");
    const Shape& is = input.shape();
    require(is.size() == 3 || is.size() == 4, ErrorKind::Shape,
            "conv2d: input must be [C,H,W] or [B,C,H,W], got " + sh(input));
    const bool batched = is.size() == 4;
    const std::size_t nb = batched ? is[0] : 1;
    const std::size_t c = is[batched ? 1 : 0], h = is[batched ? 2 : 1], w = is[batched ? 3 : 2];
    const std::size_t co = ws[0], kh = ws[2], kw = ws[3];
    require(ws[1] == c, ErrorKind::Shape,
            "conv2d: weight expects " + std::to_string(ws[1]) + " input channels, input has " + std::to_string(c));
    if (bias)
        require(bias->shape() == Shape{co}, ErrorKind::Shape,
                "conv2d: bias must be [" + std::to_string(co) + "], got " + sh(*bias));
    const std::size_t p = static_cast<std::size_t>(padding), s = static_cast<std::size_t>(stride);
    require(kh <= h + 2 * p && kw <= w + 2 * p, ErrorKind::Shape,
            "conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) + " larger than padded input " +
                std::to_string(h + 2 * p) + "x" + std::to_string(w + 2 * p));
    const std::size_t oh = (h + 2 * p - kh) / s + 1, ow = (w + 2 * p - kw) / s + 1;
    require(oh > 0 && ow > 0, ErrorKind::Shape, "conv2d: zero-size output");

    const std::size_t kdim = c * kh * kw, l = oh * ow;
    const bool pointwise = kh == 1 && kw == 1 && s == 1 && p == 0;
    Shape out_shape = batched ? Shape{nb, co, oh, ow} : Shape{co, oh, ow};
    Tensor out = Tensor::zeros(out_shape);
    const Tensor& x = input.value();
    const Tensor& wt = weight.value();
    std::vector<double> cols(pointwise ? 0 : kdim * l);
    for (std::size_t b = 0; b < nb; ++b) {
        const double* xin = x.ptr() + b * c * h * w;
        double* o = out.ptr() + b * co * l;
        const double* src = xin;
        if (!pointwise) {
            kernels::im2col(xin, c, h, w, kh, kw, s, p, oh, ow, cols.data());
            src = cols.data();
        }
        if (bias)
            for (std::size_t k = 0; k < co; ++k) std::fill(o + k * l, o + (k + 1) * l, bias->value()[k]);
        kernels::gemm_nn(co, l, kdim, wt.ptr(), src, o);
    }

    std::vector<Var> ins{input, weight};
    if (bias) ins.push_back(*bias);
    auto bw = [input, weight, bias, nb, c, h, w, co, kh, kw, s, p, oh, ow, kdim, l, pointwise](Tape& tp,
                                                                                           const Tensor& g) {
        const Tensor& x = tp.value(input.id);
        const Tensor& wt = tp.value(weight.id);
        const bool gi = tp.requires_grad(input.id), gw = tp.requires_grad(weight.id);
        std::vector<double> cols(pointwise ? 0 : kdim * l);
        std::vector<double> dcols(gi && !pointwise ? kdim * l : 0);
        for (std::size_t b = 0; b < nb; ++b) {
            const double* gb = g.ptr() + b * co * l;
            const double* xin = x.ptr() + b * c * h * w;
            if (gw) {
                const double* src = xin;
                if (!pointwise) {
                    kernels::im2col(xin, c, h, w, kh, kw, s, p, oh, ow, cols.data());
                    src = cols.data();
                }
                kernels::gemm_nt(co, kdim, l, gb, src, tp.grad_buffer(weight.id).ptr());
            }
            if (gi) {
                double* dx = tp.grad_buffer(input.id).ptr() + b * c * h * w;
                if (pointwise) {
                    kernels::gemm_tn(kdim, l, co, wt.ptr(), gb, dx);
                } else {
                    std::fill(dcols.begin(), dcols.end(), 0.0);
                    kernels::gemm_tn(kdim, l, co, wt.ptr(), gb, dcols.data());
                    kernels::col2im(dcols.data(), c, h, w, kh, kw, s, p, oh, ow, dx);
                }
            }
            if (bias && tp.requires_grad(bias->id)) {
                double* db = tp.grad_buffer(bias->id).ptr();
                for (std::size_t k = 0; k < co; ++k) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < l; ++i) acc += gb[k * l + i];
                    db[k] += acc;
                }
            }
        }
    };
    return t.record(std::move(out), ins, bw, "conv2d");
}

Var matmul(Var a, Var b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    require(as.size() == 2 && bs.size() == 2, ErrorKind::Shape, "matmul: operands must be 2-D, got " + sh(a) + " and " + sh(b));
    require(as[1] == bs[0], ErrorKind::Shape, "matmul: inner dimension mismatch " + sh(a) + " x " + sh(b));
    const std::size_t m = as[0], k = as[1], n = bs[1];
    Tensor out = Tensor::zeros({m, n});
    kernels::gemm_nn(m, n, k, a.value().ptr(), b.value().ptr(), out.ptr());
    auto bw = [a, b, m, k, n](Tape& tp, const Tensor& g) {
        if (tp.requires_grad(a.id)) kernels::gemm_nt(m, k, n, g.ptr(), tp.value(b.id).ptr(), tp.grad_buffer(a.id).ptr());
        if (tp.requires_grad(b.id)) kernels::gemm_tn(k, n, m, tp.value(a.id).ptr(), g.ptr(), tp.grad_buffer(b.id).ptr());
    };
    return a.tape->record(std::move(out), {a, b}, bw, "matmul");
}

Var transpose(Var a) {
    const Shape& as = a.shape();
    require(as.size() == 2, ErrorKind::Shape, "transpose: operand must be 2-D, got " + sh(a));
    const std::size_t r = as[0], c = as[1];
    Tensor out = Tensor::zeros({c, r});
    kernels::transpose(r, c, a.value().ptr(), out.ptr());
    auto bw = [a, r, c](Tape& tp, const Tensor& g) {
        double* d = tp.grad_buffer(a.id).ptr();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) d[i * c + j] += g[j * r + i];
    };
    return a.tape->record(std::move(out), {a}, bw, "transpose");
}

Var softmax_rows(Var x) {
    const Shape& xs = x.shape();
    require(xs.size() == 2, ErrorKind::Shape, "softmax_rows: expected [R,C], got " + sh(x));
    x.value().check_finite("softmax_rows input");
    const std::size_t r = xs[0], c = xs[1];
    Tensor out = Tensor::zeros(xs);
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = xv.ptr() + i * c;
        double* o = out.ptr() + i * c;
        const double mx = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            o[j] = std::exp(row[j] - mx);
            z += o[j];
        }
        for (std::size_t j = 0; j < c; ++j) o[j] /= z;
    }
    Tensor saved = out;
    auto bw = [x, r, c, saved = std::move(saved)](Tape& tp, const Tensor& g) {
        double* d = tp.grad_buffer(x.id).ptr();
        for (std::size_t i = 0; i < r; ++i) {
            const double* y = saved.ptr() + i * c;
            const double* gr = g.ptr() + i * c;
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += gr[j] * y[j];
            for (std::size_t j = 0; j < c; ++j) d[i * c + j] += y[j] * (gr[j] - dot);
        }
    };
    return x.tape->record(std::move(out), {x}, bw, "softmax_rows");
}

namespace {

template <typename F, typename D>
Var unary(Var x, F f, D dfdx_from_xy, const char* name) {
    const Tensor& xv = x.value();
    Tensor out = Tensor::zeros(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    Tensor saved = out;
    auto bw = [x, dfdx_from_xy, saved = std::move(saved)](Tape& tp, const Tensor& g) {
        const Tensor& xv = tp.value(x.id);
        double* d = tp.grad_buffer(x.id).ptr();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * dfdx_from_xy(xv[i], saved[i]);
    };
    return x.tape->record(std::move(out), {x}, bw, name);
}

}  // namespace

Var relu(Var x) {
    return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
                 [](double v, double) { return v > 0.0 ? 1.0 : 0.0; }, "relu");
}

Var tanh(Var x) {
    return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; }, "tanh");
}

Var sigmoid(Var x) {
    return unary(
        x,
        [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
        [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

Var scale(Var x, double factor) {
    return unary(x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; }, "scale");
}

Var clamp(Var x, double lo, double hi) {
    require(lo <= hi, ErrorKind::InvalidArgument, "clamp: lo > hi");
    return unary(x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
                 [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; }, "clamp");
}

namespace {

// Returns true when `b` is a [1,H,W] map to broadcast over [C,H,W] `a`.
bool broadcast_map(const Shape& a, const Shape& b, const char* op) {
    if (a == b) return false;
    if (a.size() == 3 && b.size() == 3 && b[0] == 1 && a[1] == b[1] && a[2] == b[2]) return true;
    fail(ErrorKind::Shape, std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b) +
                               " (only equal shapes or a [1,H,W] map over [C,H,W] are supported)");
}

template <bool Mul>
Var binary(Var a, Var b, const char* name) {
    if (a.shape() != b.shape() && a.shape().size() == 3 && a.shape()[0] == 1) std::swap(a, b);
    const bool bc = broadcast_map(a.shape(), b.shape(), name);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::size_t plane = bc ? bv.size() : av.size();
    Tensor out = Tensor::zeros(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double bi = bv[bc ? i % plane : i];
        out[i] = Mul ? av[i] * bi : av[i] + bi;
    }
    auto bw = [a, b, bc, plane](Tape& tp, const Tensor& g) {
        const Tensor& av = tp.value(a.id);
        const Tensor& bv = tp.value(b.id);
        if (tp.requires_grad(a.id)) {
            double* d = tp.grad_buffer(a.id).ptr();
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += Mul ? g[i] * bv[bc ? i % plane : i] : g[i];
        }
        if (tp.requires_grad(b.id)) {
            double* d = tp.grad_buffer(b.id).ptr();
            for (std::size_t i = 0; i < g.size(); ++i) d[bc ? i % plane : i] += Mul ? g[i] * av[i] : g[i];
        }
    };
    return a.tape->record(std::move(out), {a, b}, bw, name);
}

}  // namespace

Var add(Var a, Var b) { return binary<false>(a, b, "add"); }
Var mul(Var a, Var b) { return binary<true>(a, b, "mul"); }

Var cosine_per_position(Var a, Var b) {
    require_chw(a, "cosine_per_position");
    const Shape& as = a.shape();
    const std::size_t c = as[0], l = as[1] * as[2];
    const bool vec = b.shape().size() == 1;
    if (vec)
        require(b.shape()[0] == c, ErrorKind::Shape, "cosine_per_position: anchor length " + sh(b) + " vs channels " + std::to_string(c));
    else
        require(b.shape() == as, ErrorKind::Shape, "cosine_per_position: shape mismatch " + sh(a) + " vs " + sh(b));
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    auto bidx = [vec, l](std::size_t ch, std::size_t i) { return vec ? ch : ch * l + i; };

    Tensor out = Tensor::zeros({1, as[1], as[2]});
    std::vector<double> dots(l), na(l), nb(l);
    for (std::size_t i = 0; i < l; ++i) {
        double d = 0.0, sa = 0.0, sb = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double x = av[ch * l + i], y = bv[bidx(ch, i)];
            d += x * y;
            sa += x * x;
            sb += y * y;
        }
        dots[i] = d;
        na[i] = std::sqrt(sa);
        nb[i] = std::sqrt(sb);
        out[i] = d / (na[i] * nb[i] + kCosineEps);
    }
    auto bw = [a, b, c, l, vec, bidx, dots = std::move(dots), na = std::move(na), nb = std::move(nb)](Tape& tp,
                                                                                                   const Tensor& g) {
        const Tensor& av = tp.value(a.id);
        const Tensor& bv = tp.value(b.id);
        const bool ga = tp.requires_grad(a.id), gb = tp.requires_grad(b.id);
        double* da = ga ? tp.grad_buffer(a.id).ptr() : nullptr;
        double* db = gb ? tp.grad_buffer(b.id).ptr() : nullptr;
        for (std::size_t i = 0; i < l; ++i) {
            const double den = na[i] * nb[i] + kCosineEps;
            const double gi = g[i];
            // d/da of s/den = b/den - s/den^2 * nb * a/|a|
            const double ka = na[i] > 0.0 ? dots[i] * nb[i] / (den * den * na[i]) : 0.0;
            const double kb = nb[i] > 0.0 ? dots[i] * na[i] / (den * den * nb[i]) : 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double x = av[ch * l + i], y = bv[bidx(ch, i)];
                if (ga) da[ch * l + i] += gi * (y / den - ka * x);
                if (gb) db[bidx(ch, i)] += gi * (x / den - kb * y);
            }
        }
        (void)vec;
    };
    return a.tape->record(std::move(out), {a, b}, bw, "cosine_per_position");
}

namespace {

struct Window {
    std::size_t begin, end;
};

Window adaptive_window(std::size_t o, std::size_t in, std::size_t out) {
    return {(o * in) / out, ((o + 1) * in + out - 1) / out};
}

}  // namespace

Var avg_pool(Var x, std::size_t out_h, std::size_t out_w) {
    require_chw(x, "avg_pool");
    const Shape& xs = x.shape();
    require(out_h > 0 && out_w > 0, ErrorKind::Shape, "avg_pool: zero output extent");
    require(xs[1] >= out_h && xs[2] >= out_w, ErrorKind::Shape,
            "avg_pool: output " + std::to_string(out_h) + "x" + std::to_string(out_w) + " larger than input " + sh(x));
    const std::size_t c = xs[0], h = xs[1], w = xs[2];
    Tensor out = Tensor::zeros({c, out_h, out_w});
    const Tensor& xv = x.value();
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            const Window wy = adaptive_window(oy, h, out_h);
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                const Window wx = adaptive_window(ox, w, out_w);
                double acc = 0.0;
                for (std::size_t y = wy.begin; y < wy.end; ++y)
                    for (std::size_t xx = wx.begin; xx < wx.end; ++xx) acc += xv.at(ch, y, xx);
                out.at(ch, oy, ox) = acc / static_cast<double>((wy.end - wy.begin) * (wx.end - wx.begin));
            }
        }
    auto bw = [x, c, h, w, out_h, out_w](Tape& tp, const Tensor& g) {
        Tensor& d = tp.grad_buffer(x.id);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t oy = 0; oy < out_h; ++oy) {
                const Window wy = adaptive_window(oy, h, out_h);
                for (std::size_t ox = 0; ox < out_w; ++ox) {
                    const Window wx = adaptive_window(ox, w, out_w);
                    const double share =
                        g.at(ch, oy, ox) / static_cast<double>((wy.end - wy.begin) * (wx.end - wx.begin));
                    for (std::size_t y = wy.begin; y < wy.end; ++y)
                        for (std::size_t xx = wx.begin; xx < wx.end; ++xx) d.at(ch, y, xx) += share;
                }
            }
    };
    return x.tape->record(std::move(out), {x}, bw, "avg_pool");
}

Var concat_channels(const std::vector<Var>& xs) {
    require(!xs.empty(), ErrorKind::InvalidArgument, "concat_channels: empty input list");
    for (const Var& v : xs) require_chw(v, "concat_channels");
    const std::size_t h = xs[0].shape()[1], w = xs[0].shape()[2];
    std::size_t total = 0;
    for (const Var& v : xs) {
        require(v.shape()[1] == h && v.shape()[2] == w, ErrorKind::Shape,
                "concat_channels: spatial mismatch " + sh(xs[0]) + " vs " + sh(v));
        total += v.shape()[0];
    }
    Tensor out = Tensor::zeros({total, h, w});
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const Var& v : xs) {
        offsets.push_back(off);
        std::copy(v.value().ptr(), v.value().ptr() + v.value().size(), out.ptr() + off);
        off += v.value().size();
    }
    auto bw = [xs, offsets](Tape& tp, const Tensor& g) {
        for (std::size_t k = 0; k < xs.size(); ++k) {
            if (!tp.requires_grad(xs[k].id)) continue;
            Tensor& d = tp.grad_buffer(xs[k].id);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[offsets[k] + i];
        }
    };
    return xs[0].tape->record(std::move(out), xs, bw, "concat_channels");
}

Var slice_channels(Var x, std::size_t begin, std::size_t count) {
    require_chw(x, "slice_channels");
    const Shape& xs = x.shape();
    require(count > 0 && begin + count <= xs[0], ErrorKind::Shape, "slice_channels: range out of bounds for " + sh(x));
    const std::size_t plane = xs[1] * xs[2];
    Tensor out = Tensor::zeros({count, xs[1], xs[2]});
    std::copy(x.value().ptr() + begin * plane, x.value().ptr() + (begin + count) * plane, out.ptr());
    auto bw = [x, begin, plane](Tape& tp, const Tensor& g) {
        double* d = tp.grad_buffer(x.id).ptr() + begin * plane;
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    };
    return x.tape->record(std::move(out), {x}, bw, "slice_channels");
}

Var reshape(Var x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    auto bw = [x](Tape& tp, const Tensor& g) {
        double* d = tp.grad_buffer(x.id).ptr();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    };
    return x.tape->record(std::move(out), {x}, bw, "reshape");
}

Var sum(Var x) {
    double acc = 0.0;
    for (double v : x.value().data()) acc += v;
    auto bw = [x](Tape& tp, const Tensor& g) {
        Tensor& d = tp.grad_buffer(x.id);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[0];
    };
    return x.tape->record(Tensor::scalar(acc), {x}, bw, "sum");
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var pad_bottom_right(Var x, std::size_t out_h, std::size_t out_w) {
    require_chw(x, "pad_bottom_right");
    const Shape& xs = x.shape();
    require(out_h >= xs[1] && out_w >= xs[2], ErrorKind::Shape, "pad_bottom_right: target smaller than input " + sh(x));
    const std::size_t c = xs[0], h = xs[1], w = xs[2];
    if (out_h == h && out_w == w) return x;
    Tensor out = Tensor::zeros({c, out_h, out_w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) out.at(ch, y, xx) = x.value().at(ch, y, xx);
    auto bw = [x, c, h, w](Tape& tp, const Tensor& g) {
        Tensor& d = tp.grad_buffer(x.id);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t xx = 0; xx < w; ++xx) d.at(ch, y, xx) += g.at(ch, y, xx);
    };
    return x.tape->record(std::move(out), {x}, bw, "pad_bottom_right");
}

Var upsample_nearest(Var x, std::size_t factor) {
    require_chw(x, "upsample_nearest");
    require(factor > 0, ErrorKind::InvalidArgument, "upsample_nearest: factor must be positive");
    if (factor == 1) return x;
    const Shape& xs = x.shape();
    const std::size_t c = xs[0], h = xs[1], w = xs[2];
    Tensor out = Tensor::zeros({c, h * factor, w * factor});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h * factor; ++y)
            for (std::size_t xx = 0; xx < w * factor; ++xx) out.at(ch, y, xx) = x.value().at(ch, y / factor, xx / factor);
    auto bw = [x, c, h, w, factor](Tape& tp, const Tensor& g) {
        Tensor& d = tp.grad_buffer(x.id);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < h * factor; ++y)
                for (std::size_t xx = 0; xx < w * factor; ++xx) d.at(ch, y / factor, xx / factor) += g.at(ch, y, xx);
    };
    return x.tape->record(std::move(out), {x}, bw, "upsample_nearest");
}

Var channel_sum(Var x) {
    require_chw(x, "channel_sum");
    const Shape& xs = x.shape();
    const std::size_t c = xs[0], l = xs[1] * xs[2];
    Tensor out = Tensor::zeros({1, xs[1], xs[2]});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < l; ++i) out[i] += x.value()[ch * l + i];
    auto bw = [x, c, l](Tape& tp, const Tensor& g) {
        double* d = tp.grad_buffer(x.id).ptr();
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < l; ++i) d[ch * l + i] += g[i];
    };
    return x.tape->record(std::move(out), {x}, bw, "channel_sum");
}

Var space_to_depth(Var x, std::size_t block) {
    require_chw(x, "space_to_depth");
    const Shape& xs = x.shape();
    require(xs[0] == 1, ErrorKind::Shape, "space_to_depth: expected a single-channel map, got " + sh(x));
    require(block > 0 && xs[1] % block == 0 && xs[2] % block == 0, ErrorKind::Shape,
            "space_to_depth: extents of " + sh(x) + " not divisible by " + std::to_string(block));
    const std::size_t gh = xs[1] / block, gw = xs[2] / block;
    Tensor out = Tensor::zeros({block * block, gh, gw});
    auto src_index = [&xs, block](std::size_t j, std::size_t gy, std::size_t gx) {
        return (gy * block + j / block) * xs[2] + gx * block + j % block;
    };
    for (std::size_t j = 0; j < block * block; ++j)
        for (std::size_t gy = 0; gy < gh; ++gy)
            for (std::size_t gx = 0; gx < gw; ++gx) out.at(j, gy, gx) = x.value()[src_index(j, gy, gx)];
    auto bw = [x, block, gh, gw, src_index](Tape& tp, const Tensor& g) {
        double* d = tp.grad_buffer(x.id).ptr();
        for (std::size_t j = 0; j < block * block; ++j)
            for (std::size_t gy = 0; gy < gh; ++gy)
                for (std::size_t gx = 0; gx < gw; ++gx) d[src_index(j, gy, gx)] += g.at(j, gy, gx);
    };
    return x.tape->record(std::move(out), {x}, bw, "space_to_depth");
}

Var bce_with_logits_sum(Var logits, const Tensor& targets) {
    require(logits.shape() == targets.shape(), ErrorKind::Shape,
            "bce_with_logits_sum: logits " + sh(logits) + " vs targets " + shape_str(targets.shape()));
    const Tensor& z = logits.value();
    double acc = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double v = z[i];
        acc += std::max(v, 0.0) - v * targets[i] + std::log1p(std::exp(-std::abs(v)));
    }
    auto bw = [logits, targets](Tape& tp, const Tensor& g) {
        const Tensor& z = tp.value(logits.id);
        double* d = tp.grad_buffer(logits.id).ptr();
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double v = z[i];
            const double p = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
            d[i] += g[0] * (p - targets[i]);
        }
    };
    return logits.tape->record(Tensor::scalar(acc), {logits}, bw, "bce_with_logits_sum");
}

Var detach(Var x) { return x.tape->constant(x.value()); }

}  // namespace dfl
