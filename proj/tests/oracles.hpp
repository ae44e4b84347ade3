#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dfl/srm.hpp"
#include "dfl/supervision.hpp"

namespace dfl::oracle {

// Scans every set pixel and marks the patch it falls in.
inline std::vector<std::uint8_t> scan_oracle(const Tensor& mask, std::size_t grid) {
    const std::size_t h = mask.dim(0), w = mask.dim(1);
    const std::size_t ph = (h + grid - 1) / grid, pw = (w + grid - 1) / grid;
    std::vector<std::uint8_t> out(grid * grid, 0);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            if (mask.at(y, x) != 0.0) out[(y / ph) * grid + x / pw] = 1;
    return out;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return d / (std::sqrt(na) * std::sqrt(nb) + 1e-8);
}

inline std::vector<double> at(const Tensor& f, std::size_t i, std::size_t j) {
    std::vector<double> v(f.dim(0));
    for (std::size_t c = 0; c < v.size(); ++c) v[c] = f.at(c, i, j);
    return v;
}

struct OracleOut {
    std::vector<std::vector<std::uint8_t>> labels;
    std::vector<double> fr, fa;
};

// Batch anchors as plain means, then a cosine comparison per position.
inline OracleOut sspsl_oracle(const std::vector<Tensor>& feats, const std::vector<int>& labels, const std::vector<GridRect>& rects) {
    const std::size_t c = feats[0].dim(0), h = feats[0].dim(1), w = feats[0].dim(2);
    std::vector<double> fr(c, 0.0), fa(c, 0.0);
    double nr = 0, na = 0;
    for (std::size_t b = 0; b < feats.size(); ++b)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                const auto v = at(feats[b], i, j);
                if (labels[b] == 0) {
                    for (std::size_t k = 0; k < c; ++k) fr[k] += v[k];
                    nr += 1;
                } else if (rects[b].contains(i, j)) {
                    for (std::size_t k = 0; k < c; ++k) fa[k] += v[k];
                    na += 1;
                }
            }
    for (auto& x : fr) x /= nr;
    for (auto& x : fa) x /= na;
    OracleOut out{{}, fr, fa};
    for (std::size_t b = 0; b < feats.size(); ++b) {
        std::vector<std::uint8_t> m(h * w, 0);
        if (labels[b] == 1)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j) {
                    const auto v = at(feats[b], i, j);
                    m[i * w + j] = cosine(v, fr) - cosine(v, fa) >= 0 ? 0 : 1;
                }
        out.labels.push_back(m);
    }
    return out;
}

// Fraction of (positive, negative) pairs ordered correctly, ties counting half.
inline double pair_count_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double good = 0, pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] == 1 && y[j] == 0) {
                pairs += 1;
                good += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
            }
    return good / pairs;
}

// Expected response to an impulse of `amp` (0..1 scale) at (cy, cx) in every
// channel: the flipped kernel scaled to 0..255, divided by q, clamped, / T.
inline Tensor impulse_oracle(const srm::FilterBank& bank, std::size_t s, std::size_t cy, std::size_t cx, double amp) {
    Tensor out = Tensor::zeros({3, s, s});
    for (std::size_t k = 0; k < 3; ++k) {
        const auto& K = bank.kernels[k];
        const long r = static_cast<long>(K.size / 2);
        for (long dy = -r; dy <= r; ++dy)
            for (long dx = -r; dx <= r; ++dx) {
                // Cross-correlation: output at (cy - dy, cx - dx) sees the impulse at kernel offset (dy, dx).
                const long y = static_cast<long>(cy) - dy, x = static_cast<long>(cx) - dx;
                const double c = K.coefficients[static_cast<std::size_t>((dy + r) * static_cast<long>(K.size) + dx + r)];
                const double v = std::clamp(255.0 * amp * c / K.q, -bank.truncation, bank.truncation) / bank.truncation;
                out.at(k, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = v;
            }
    }
    return out;
}

}  // namespace dfl::oracle
