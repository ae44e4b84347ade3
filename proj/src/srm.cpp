#include "dfl/srm.hpp"

#include <algorithm>

#include "dfl/error.hpp"

namespace dfl::srm {

const FilterBank& build_bank() {
    static const FilterBank bank{
        {{
            {"first_order", 3, 2.0, {0, 0, 0, 1, -2, 1, 0, 0, 0}},
            {"second_order", 3, 4.0, {-1, 2, -1, 2, -4, 2, -1, 2, -1}},
            {"kv", 5, 12.0, {-1, 2,  -2, 2,  -1,  //
                             2,  -6, 8,  -6, 2,   //
                             -2, 8,  -12, 8, -2,  //
                             2,  -6, 8,  -6, 2,   //
                             -1, 2,  -2, 2,  -1}},
        }},
        2.0,
    };
    return bank;
}

Tensor truncate(const Tensor& x, double threshold) {
    require(threshold > 0.0, ErrorKind::InvalidArgument, "truncate: threshold must be positive");
    Tensor out = x;
    for (double& v : out.data()) v = std::clamp(v, -threshold, threshold);
    return out;
}

Tensor apply(const Tensor& image, const FilterBank& bank) {
    require(image.ndim() == 3 && image.dim(0) == 3, ErrorKind::Shape,
            "apply_srm: expected a [3,H,W] image, got " + shape_str(image.shape()));
    const std::size_t h = image.dim(1), w = image.dim(2);
    Tensor out = Tensor::zeros({bank.kernels.size(), h, w});
    for (std::size_t k = 0; k < bank.kernels.size(); ++k) {
        const Kernel& kern = bank.kernels[k];
        const long r = static_cast<long>(kern.size / 2);
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (std::size_t c = 0; c < 3; ++c) {
                    const double center = image.at(c, y, x) * 255.0;
                    double res = 0.0;
                    // Written against the center value: the coefficients sum to
                    // zero, so a flat neighbourhood yields exactly 0.
                    for (long dy = -r; dy <= r; ++dy) {
                        const auto sy = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(y) + dy, 0, static_cast<long>(h) - 1));
                        for (long dx = -r; dx <= r; ++dx) {
                            const auto sx = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(x) + dx, 0, static_cast<long>(w) - 1));
                            const double coef = kern.coefficients[static_cast<std::size_t>((dy + r) * static_cast<long>(kern.size) + dx + r)];
                            if (coef != 0.0) res += coef * (image.at(c, sy, sx) * 255.0 - center);
                        }
                    }
                    acc += res / kern.q;
                }
                out.at(k, y, x) = std::clamp(acc / 3.0, -bank.truncation, bank.truncation) / bank.truncation;
            }
        }
    }
    return out;
}

}  // namespace dfl::srm
