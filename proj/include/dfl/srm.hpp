#pragma once

#include <array>
#include <string>
#include <vector>

#include "dfl/tensor.hpp"

namespace dfl::srm {

struct Kernel {
    std::string name;
    std::size_t size;                 // square, odd
    double q;                         // residual normalizer
    std::vector<double> coefficients; // row-major, sums to zero
};

// Fixed high-pass bank: 3x3 first-order (q=2), 3x3 second-order (q=4) and
// the 5x5 KV kernel (q=12), truncation T=2. Mirrors data/srm_kernels.json.
struct FilterBank {
    std::array<Kernel, 3> kernels;
    double truncation = 2.0;
};

const FilterBank& build_bank();

// Clamp to [-T, T].
Tensor truncate(const Tensor& x, double threshold);

// [3,H,W] image in [0,1] -> [3,H,W] residuals in [-1,1]. Each kernel is
// applied per channel on the 0..255 scale with edge-replicated borders,
// divided by q, averaged over the input channels, truncated to [-T,T] and
// divided by T.
Tensor apply(const Tensor& image, const FilterBank& bank = build_bank());

}  // namespace dfl::srm
