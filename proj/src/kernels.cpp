#include "kernels.hpp"

#include <vector>

namespace dfl::kernels {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    std::vector<double> bt(k * n);
    transpose(n, k, b, bt.data());
    gemm_nn(m, n, k, a, bt.data(), c);
}

void transpose(std::size_t rows, std::size_t cols, const double* src, double* dst) {
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

void im2col(const double* in, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow, double* cols) {
    const std::size_t l = oh * ow;
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* plane = in + ch * h * w;
        for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
                double* row = cols + ((ch * kh + ky) * kw + kx) * l;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                    double* out = row + oy * ow;
                    if (iy < 0 || iy >= static_cast<long>(h)) {
                        for (std::size_t ox = 0; ox < ow; ++ox) out[ox] = 0.0;
                        continue;
                    }
                    const double* src = plane + static_cast<std::size_t>(iy) * w;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                        out[ox] = (ix < 0 || ix >= static_cast<long>(w)) ? 0.0 : src[ix];
                    }
                }
            }
        }
    }
}

void col2im(const double* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow, double* in_grad) {
    const std::size_t l = oh * ow;
    for (std::size_t ch = 0; ch < c; ++ch) {
        double* plane = in_grad + ch * h * w;
        for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
                const double* row = cols + ((ch * kh + ky) * kw + kx) * l;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                    double* dst = plane + static_cast<std::size_t>(iy) * w;
                    const double* src = row + oy * ow;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                        if (ix >= 0 && ix < static_cast<long>(w)) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace dfl::kernels
