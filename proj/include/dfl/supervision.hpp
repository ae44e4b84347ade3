#pragma once

#include <array>
#include <string>
#include <vector>

#include "dfl/autodiff.hpp"
#include "dfl/tensor.hpp"

namespace dfl {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

// Two eyes, nose, two mouth corners, in pixel coordinates.
struct Landmarks {
    Point left_eye, right_eye, nose, mouth_left, mouth_right;

    std::array<Point, 5> points() const { return {left_eye, right_eye, nose, mouth_left, mouth_right}; }
    static Landmarks from_points(const std::array<Point, 5>& p) { return {p[0], p[1], p[2], p[3], p[4]}; }
};

enum class LabelSource { MaskDerived, Pseudo, RealAllZero };

struct PatchLabelMap {
    std::size_t rows = 0, cols = 0;
    std::vector<std::uint8_t> values;  // row-major, each 0 or 1
    LabelSource source = LabelSource::RealAllZero;

    std::uint8_t at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
    std::size_t positives() const;
    // [1,rows,cols] tensor of 0/1 targets.
    Tensor as_tensor() const;
    static PatchLabelMap zeros(std::size_t rows, std::size_t cols);
};

// Inclusive patch-grid rectangle.
struct GridRect {
    std::size_t row0, col0, row1, col1;
    bool contains(std::size_t r, std::size_t c) const { return r >= row0 && r <= row1 && c >= col0 && c <= col1; }
};

enum class ReferenceRegion { Nose, Mouth, Eyes, InnerFace };

std::string to_string(ReferenceRegion r);
ReferenceRegion reference_region_from_string(const std::string& s);

inline constexpr double kRectHalfWidthScale = 1.5;

// Box of half-width 1.5 * (inter-eye distance)/2 around the nose, clipped to
// the image and mapped to every grid cell it overlaps; at least one cell.
GridRect nose_rect(const Landmarks& lm, std::size_t grid, std::size_t image_size);

// Same sizing rule around other reference regions. Nose delegates to nose_rect.
GridRect region_rect(ReferenceRegion region, const Landmarks& lm, std::size_t grid, std::size_t image_size);

// Patch k is positive iff any mask pixel inside it is set. Masks whose size is
// not a multiple of the grid are zero-padded on the bottom/right.
PatchLabelMap mask_to_patches(const Tensor& mask, std::size_t grid);

struct AnchorState {
    std::vector<double> real;  // f_r
    std::vector<double> fake;  // f_a
    bool real_init = false;
    bool fake_init = false;
    double momentum = 0.9;

    // anchor <- momentum * anchor + (1 - momentum) * batch, or the batch
    // anchor itself on first use.
    void fold(std::vector<double>& anchor, bool& init, const std::vector<double>& batch) const;
};

struct SspslResult {
    std::vector<PatchLabelMap> labels;  // one per sample; real samples get all zeros
    std::vector<double> real_anchor;    // anchors actually compared against
    std::vector<double> fake_anchor;
};

// Pseudo patch labels. `features` holds one detached [C,Hp,Wp] map per sample;
// `rects[i]` is only read for fakes. Batch anchors are used whenever the
// batch contains the class, the EMA anchor otherwise. M_ij = 0 iff
// cos(f_ij, f_r) - cos(f_ij, f_a) >= 0.
SspslResult sspsl_labels(const std::vector<Tensor>& features, const std::vector<int>& labels,
                         const std::vector<GridRect>& rects, AnchorState& anchors);

// Binary cross-entropy on sigmoid(logit), stable logit form.
Var loss_cls(Var logit, int label);
// Sum over patches of per-patch BCE.
Var loss_loc(Var loc_logits, const PatchLabelMap& labels);
Var loss_total(Var l_cls, Var l_loc);

}  // namespace dfl
