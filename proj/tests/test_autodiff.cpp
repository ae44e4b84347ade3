#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>

#include "dfl/autodiff.hpp"
#include "dfl/error.hpp"
#include "dfl/gradcheck.hpp"
#include "dfl/optim.hpp"
#include "dfl/rng.hpp"
#include "dfl/tnsr.hpp"

using namespace dfl;

namespace {

Tensor random(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(s));
    for (auto& v : t.vec()) v = rng.uniform(lo, hi);
    return t;
}

// Direct loops over batch, output channel, output row/col, input channel, kernel row/col.
Tensor conv_reference(const Tensor& x, const Tensor& w, const Tensor* b, int stride, int pad) {
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const std::size_t Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
    Tensor y = Tensor::zeros({Co, Ho, Wo});
    for (std::size_t o = 0; o < Co; ++o)
        for (std::size_t i = 0; i < Ho; ++i)
            for (std::size_t j = 0; j < Wo; ++j) {
                double acc = b ? (*b)[o] : 0.0;
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t u = 0; u < kh; ++u)
                        for (std::size_t v = 0; v < kw; ++v) {
                            const long yy = static_cast<long>(i * stride + u) - pad;
                            const long xx = static_cast<long>(j * stride + v) - pad;
                            if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
                            acc += x.at(c, yy, xx) * w[((o * C + c) * kh + u) * kw + v];
                        }
                y.at(o, i, j) = acc;
            }
    return y;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("conv2d identity and averaging") {
    Tape t;
    Tensor x({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto y = conv2d(t.constant(x), t.constant(Tensor({1, 1, 1, 1}, {1.0})), std::nullopt, 1, 0);
    CHECK(y.value() == x);

    auto c = conv2d(t.constant(Tensor::filled({1, 5, 5}, 5.0)), t.constant(Tensor::filled({1, 1, 3, 3}, 1.0 / 9)),
                    std::nullopt, 1, 0);
    CHECK(c.value().shape() == Shape{1, 3, 3});
    for (double v : c.value().vec()) CHECK(v == doctest::Approx(5.0).epsilon(1e-14));
}

TEST_CASE("conv2d matches the nested-loop reference on 100 random cases") {
    Rng rng(11);
    double worst = 0;
    for (int k = 0; k < 100; ++k) {
        const std::size_t C = 1 + rng.next() % 3, Co = 1 + rng.next() % 3;
        const std::size_t ks = 1 + 2 * (rng.next() % 2);
        const std::size_t H = ks + rng.next() % 5, W = ks + rng.next() % 5;
        const int stride = 1 + static_cast<int>(rng.next() % 2), pad = static_cast<int>(rng.next() % 2);
        Tensor x = random({C, H, W}, rng), w = random({Co, C, ks, ks}, rng), b = random({Co}, rng);
        const bool with_bias = rng.next() % 2;
        Tape t;
        auto y = conv2d(t.constant(x), t.constant(w), with_bias ? std::optional<Var>(t.constant(b)) : std::nullopt, stride, pad);
        worst = std::max(worst, max_abs_diff(y.value(), conv_reference(x, w, with_bias ? &b : nullptr, stride, pad)));
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("conv2d on a batch equals per-sample convolution") {
    Rng rng(4);
    Tensor xb = random({2, 1, 4, 4}, rng), w = random({2, 1, 3, 3}, rng);
    Tape t;
    auto y = conv2d(t.constant(xb), t.constant(w), std::nullopt, 1, 1);
    REQUIRE(y.value().shape() == Shape{2, 2, 4, 4});
    for (std::size_t n = 0; n < 2; ++n) {
        Tensor xn({1, 4, 4}, std::vector<double>(xb.vec().begin() + n * 16, xb.vec().begin() + (n + 1) * 16));
        Tensor ref = conv_reference(xn, w, nullptr, 1, 1);
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.value()[n * 32 + i] == doctest::Approx(ref[i]).epsilon(1e-13));
    }
}

TEST_CASE("conv2d rejects mismatched channels") {
    Tape t;
    CHECK_THROWS_AS(conv2d(t.constant(Tensor::zeros({2, 4, 4})), t.constant(Tensor::zeros({1, 3, 3, 3})), std::nullopt, 1, 0),
                    Error);
}

TEST_CASE("matmul") {
    Tape t;
    auto y = matmul(t.constant(Tensor({2, 2}, {1, 2, 3, 4})), t.constant(Tensor({2, 1}, {0, 1})));
    CHECK(y.value() == Tensor({2, 1}, {2, 4}));

    Rng rng(2);
    Tensor a = random({3, 3}, rng);
    auto id = matmul(t.constant(a), t.constant(Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1})));
    CHECK(id.value() == a);

    const std::size_t k = 7;
    auto ones = matmul(t.constant(Tensor::filled({1, k}, 1.0)), t.constant(Tensor::filled({k, 1}, 1.0)));
    CHECK(ones.value() == Tensor({1, 1}, {7.0}));
}

TEST_CASE("softmax rows") {
    Tape t;
    auto a = softmax_rows(t.constant(Tensor({2, 2}, {0, 0, std::log(2.0), 0})));
    CHECK(a.value()[0] == 0.5);
    CHECK(a.value()[1] == 0.5);
    CHECK(a.value()[2] == doctest::Approx(2.0 / 3).epsilon(1e-15));
    CHECK(a.value()[3] == doctest::Approx(1.0 / 3).epsilon(1e-15));

    Rng rng(3);
    for (int k = 0; k < 200; ++k) {
        const std::size_t r = 1 + rng.next() % 5, c = 1 + rng.next() % 9;
        auto s = softmax_rows(t.constant(random({r, c}, rng, -50, 50)));
        for (std::size_t i = 0; i < r; ++i) {
            double total = 0;
            for (std::size_t j = 0; j < c; ++j) total += s.value().at(i, j);
            CHECK(std::abs(total - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("elementwise ops") {
    Tape t;
    CHECK(relu(t.constant(Tensor({1}, {-3.0}))).value()[0] == 0.0);
    CHECK(dfl::tanh(t.constant(Tensor({1}, {1.0}))).value()[0] == doctest::Approx(0.7615941559557649).epsilon(1e-15));
    CHECK(sigmoid(t.constant(Tensor({1}, {0.0}))).value()[0] == 0.5);
    CHECK(scale(t.constant(Tensor({2}, {1.5, -2})), 2.0).value() == Tensor({2}, {3.0, -4.0}));

    Rng rng(5);
    Tensor x = random({3, 2, 4}, rng);
    CHECK(mul(t.constant(x), t.constant(Tensor::filled({1, 2, 4}, 1.0))).value() == x);
    CHECK(mul(t.constant(Tensor::filled({1, 2, 4}, 1.0)), t.constant(x)).value() == x);
    Tensor y = random({3, 2, 4}, rng);
    auto s = add(t.constant(x), t.constant(y));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(s.value()[i] == x[i] + y[i]);
}

TEST_CASE("cosine per position") {
    Tape t;
    auto same = cosine_per_position(t.constant(Tensor({2, 1, 1}, {3, -4})), t.constant(Tensor({2, 1, 1}, {3, -4})));
    CHECK(std::abs(same.value()[0] - 1.0) < 1e-9);
    // eps in the denominator: identical unit vectors give 1/(1 + 1e-8).
    auto unit = cosine_per_position(t.constant(Tensor({2, 1, 1}, {0.6, 0.8})), t.constant(Tensor({2, 1, 1}, {0.6, 0.8})));
    CHECK(unit.value()[0] == doctest::Approx(1.0 / (1.0 + 1e-8)).epsilon(1e-15));
    auto orth = cosine_per_position(t.constant(Tensor({2, 1, 1}, {1, 0})), t.constant(Tensor({2, 1, 1}, {0, 1})));
    CHECK(orth.value()[0] == 0.0);
    auto v = cosine_per_position(t.constant(Tensor({2, 1, 1}, {1, 2})), t.constant(Tensor({2, 1, 1}, {2, 1})));
    CHECK(v.value()[0] == doctest::Approx(4.0 / (5.0 + 1e-8)).epsilon(1e-15));
    CHECK(std::abs(v.value()[0] - 0.8) < 1e-8);

    // A [C] vector is compared against every position.
    Tensor a({2, 1, 2}, {1, 0, 0, 1});
    auto bv = cosine_per_position(t.constant(a), t.constant(Tensor({2}, {1, 0})));
    CHECK(bv.value().shape() == Shape{1, 1, 2});
    CHECK(bv.value()[0] == doctest::Approx(1.0 / (1.0 + 1e-8)).epsilon(1e-15));
    CHECK(bv.value()[1] == 0.0);

    Rng rng(6);
    for (int k = 0; k < 200; ++k) {
        const double mag = std::pow(10.0, rng.uniform(-6, 6));
        auto c = cosine_per_position(t.constant(random({4, 3, 3}, rng, -mag, mag)), t.constant(random({4, 3, 3}, rng, -mag, mag)));
        for (double x : c.value().vec()) CHECK((x >= -1 - 1e-9 && x <= 1 + 1e-9));
    }
}

TEST_CASE("avg_pool") {
    Tape t;
    auto p = avg_pool(t.constant(Tensor({1, 2, 2}, {1, 2, 3, 4})), 1, 1);
    CHECK(p.value() == Tensor({1, 1, 1}, {2.5}));
    auto c = avg_pool(t.constant(Tensor::filled({2, 6, 6}, 1.25)), 3, 2);
    for (double v : c.value().vec()) CHECK(v == doctest::Approx(1.25).epsilon(1e-15));
    Rng rng(1);
    Tensor x = random({2, 3, 5}, rng);
    CHECK(avg_pool(t.constant(x), 3, 5).value() == x);
}

TEST_CASE("concat and slice channels") {
    Tape t;
    Tensor a({1, 2, 2}, {1, 2, 3, 4}), b({2, 2, 2}, {5, 6, 7, 8, 9, 10, 11, 12});
    CHECK(concat_channels({t.constant(a)}).value() == a);
    auto c = concat_channels({t.constant(a), t.constant(b)});
    CHECK(c.value() == Tensor({3, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12}));
    CHECK(slice_channels(c, 0, 1).value() == a);
    CHECK(slice_channels(c, 1, 2).value() == b);
}

TEST_CASE("backward basics") {
    Rng rng(8);
    Tape t;
    Tensor x0 = random({2, 3, 2}, rng);
    auto x = t.leaf(x0, true);
    t.backward(sum(x));
    const Tensor g = t.grad(x);
    for (double v : g.vec()) CHECK(v == 1.0);

    Tape t2;
    auto y = t2.leaf(Tensor({2}, {1, -2}), true);
    auto l = sum(mul(y, y));
    t2.backward(l);
    CHECK(t2.grad(y) == Tensor({2}, {2, -4}));
    t2.backward(l);
    CHECK(t2.grad(y) == Tensor({2}, {4, -8}));
    t2.zero_grad();
    t2.backward(l);
    CHECK(t2.grad(y) == Tensor({2}, {2, -4}));
}

TEST_CASE("backward needs a scalar") {
    Tape t;
    auto x = t.leaf(Tensor::zeros({2}), true);
    CHECK_THROWS_AS(t.backward(x), Error);
}

TEST_CASE("non-finite values are caught on the tape") {
    CHECK_THROWS_AS(Tensor({1}, {std::numeric_limits<double>::infinity()}), Error);
    Tape t;
    auto x = t.leaf(Tensor({1}, {1e200}), true);
    CHECK_THROWS_AS(sum(mul(x, x)), Error);
}

TEST_CASE("tape replay is deterministic") {
    Rng rng(9);
    Tensor x = random({2, 6, 6}, rng), w = random({3, 2, 3, 3}, rng);
    auto run = [&] {
        Tape t;
        auto a = t.leaf(x, true);
        auto y = relu(conv2d(a, t.leaf(w, true), std::nullopt, 2, 1));
        auto l = sum(mul(y, y));
        t.backward(l);
        return std::make_pair(l.value(), t.grad(a));
    };
    auto [l1, g1] = run();
    auto [l2, g2] = run();
    CHECK(bit_equal(l1, l2));
    CHECK(bit_equal(g1, g2));
}

TEST_CASE("adam") {
    SUBCASE("zero gradient leaves parameters unchanged") {
        ParamStore s;
        s.add("w", Tensor({3}, {1, -2, 3}));
        s.accumulate_grad("w", Tensor::zeros({3}));
        adam_step(s, 1e-3);
        CHECK(s.value("w") == Tensor({3}, {1, -2, 3}));
    }
    SUBCASE("first step moves by lr / (1 + eps)") {
        ParamStore s;
        s.add("w", Tensor({1}, {0.25}));
        s.accumulate_grad("w", Tensor({1}, {1.0}));
        const double lr = 5e-4;
        adam_step(s, lr);
        // m_hat = 1, v_hat = 1, step = lr * 1 / (sqrt(1) + 1e-8)
        CHECK(std::abs(s.value("w")[0] - (0.25 - lr / (1 + 1e-8))) < 1e-12);
        CHECK(s.step() == 1);
    }
    SUBCASE("equal gradients and states update identically") {
        ParamStore s;
        s.add("a", Tensor({2}, {0.5, 0.1}));
        s.add("b", Tensor({2}, {0.5, 0.1}));
        for (int k = 0; k < 5; ++k) {
            s.accumulate_grad("a", Tensor({2}, {0.3 * k, -1.0}));
            s.accumulate_grad("b", Tensor({2}, {0.3 * k, -1.0}));
            adam_step(s, 1e-2);
        }
        CHECK(bit_equal(s.value("a"), s.value("b")));
    }
    SUBCASE("missing gradient is an error") {
        ParamStore s;
        s.add("a", Tensor({1}, {0.0}));
        CHECK_THROWS_AS(adam_step(s, 1e-3), Error);
    }
}

TEST_CASE("finite_diff_check") {
    Rng rng(12);
    Tensor x = random({3, 4}, rng);
    auto sq = finite_diff_check([](Tape&, Var v) { return sum(mul(v, v)); }, x);
    CHECK(sq.max_rel_error < 1e-9);
    auto flat = finite_diff_check([](Tape& t, Var) { return sum(t.constant(Tensor::filled({2}, 3.0))); }, x);
    CHECK(flat.max_rel_error == 0.0);
    CHECK(flat.analytic == 0.0);
    CHECK(flat.numeric == 0.0);
}

TEST_CASE("every op passes the gradient check on random shapes") {
    Rng rng(21);
    struct Case {
        const char* name;
        Shape shape;
        ScalarFn fn;
    };
    // Weights are constants so only the input path is checked here; the
    // library suite covers parameter paths too.
    std::vector<Case> cases;
    for (Shape s : {Shape{2, 4, 4}, Shape{3, 5, 3}, Shape{4, 6, 5}}) {
        Tensor r = random(s, rng), r2 = random(s, rng);
        Tensor w = random({2, s[0], 3, 3}, rng);
        Tensor rs = random({s[0], s[1] * s[2]}, rng);
        cases.push_back({"conv2d", s, [=](Tape& t, Var x) { return sum(mul(conv2d(x, t.constant(w), std::nullopt, 2, 1),
                                                                          t.constant(Tensor::filled({1, (s[1] + 1) / 2, (s[2] + 1) / 2}, 0.7)))); }});
        cases.push_back({"tanh", s, [=](Tape& t, Var x) { return sum(mul(dfl::tanh(x), t.constant(r))); }});
        cases.push_back({"sigmoid", s, [=](Tape& t, Var x) { return sum(mul(sigmoid(x), t.constant(r))); }});
        cases.push_back({"mul", s, [=](Tape& t, Var x) { return sum(mul(mul(x, x), t.constant(r))); }});
        cases.push_back({"cosine", s, [=](Tape& t, Var x) { return sum(cosine_per_position(x, t.constant(r2))); }});
        cases.push_back({"avg_pool", s, [=](Tape& t, Var x) {
                             auto p = avg_pool(x, 2, 2);
                             return sum(mul(p, t.constant(Tensor::filled(p.shape(), 0.3))));
                         }});
        cases.push_back({"softmax", s, [=](Tape& t, Var x) {
                             Var m = reshape(x, {s[0], s[1] * s[2]});
                             return sum(mul(softmax_rows(m), t.constant(rs)));
                         }});
    }
    for (auto& c : cases) {
        Tensor x = random(c.shape, rng);
        auto r = finite_diff_check(c.fn, x);
        INFO(std::string(c.name) << " " << shape_str(c.shape));
        CHECK(r.max_rel_error < 1e-5);
    }
}

TEST_CASE("tnsr round trip and truncation") {
    Rng rng(13);
    Tensor x = random({2, 3, 4}, rng);
    auto bytes = tnsr::encode(x);
    CHECK(bit_equal(tnsr::decode(bytes.data(), bytes.size(), "mem"), x));
    for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{12}, bytes.size() - 1})
        CHECK_THROWS_AS(tnsr::decode(bytes.data(), cut, "mem"), Error);
    Tensor u({3}, {0, 17, 255});
    auto ub = tnsr::encode(u, tnsr::DType::U8);
    CHECK(tnsr::decode(ub.data(), ub.size(), "mem") == u);
    CHECK_THROWS_AS(tnsr::encode(Tensor({1}, {0.5}), tnsr::DType::U8), Error);
    bytes[4] = 9;  // version
    CHECK_THROWS_AS(tnsr::decode(bytes.data(), bytes.size(), "mem"), Error);
}
