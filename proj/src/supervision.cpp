#include "dfl/supervision.hpp"

#include <algorithm>
#include <cmath>

#include "dfl/error.hpp"

namespace dfl {

std::size_t PatchLabelMap::positives() const {
    std::size_t n = 0;
    for (auto v : values) n += v;
    return n;
}

Tensor PatchLabelMap::as_tensor() const {
    Tensor t = Tensor::zeros({1, rows, cols});
    for (std::size_t i = 0; i < values.size(); ++i) t[i] = values[i];
    return t;
}

PatchLabelMap PatchLabelMap::zeros(std::size_t rows, std::size_t cols) {
    PatchLabelMap m;
    m.rows = rows;
    m.cols = cols;
    m.values.assign(rows * cols, 0);
    m.source = LabelSource::RealAllZero;
    return m;
}

std::string to_string(ReferenceRegion r) {
    switch (r) {
        case ReferenceRegion::Nose: return "nose";
        case ReferenceRegion::Mouth: return "mouth";
        case ReferenceRegion::Eyes: return "eyes";
        case ReferenceRegion::InnerFace: return "inner-face";
    }
    return "nose";
}

ReferenceRegion reference_region_from_string(const std::string& s) {
    if (s == "nose") return ReferenceRegion::Nose;
    if (s == "mouth") return ReferenceRegion::Mouth;
    if (s == "eyes") return ReferenceRegion::Eyes;
    if (s == "inner-face") return ReferenceRegion::InnerFace;
    fail(ErrorKind::Config, "unknown reference region '" + s + "' (expected nose|mouth|eyes|inner-face)");
}

namespace {

void require_inside(const Point& p, std::size_t image_size, const char* what) {
    const auto s = static_cast<double>(image_size);
    if (!(p.x >= 0.0 && p.x < s && p.y >= 0.0 && p.y < s))
        fail(ErrorKind::InvalidArgument, std::string(what) + " landmark (" + std::to_string(p.x) + "," +
                                             std::to_string(p.y) + ") lies outside the " + std::to_string(image_size) +
                                             "px image");
}

struct Span {
    std::size_t first, last;
};

// Cells of size `cell` overlapped by [lo, hi] (clipped to [0, extent]); a
// degenerate interval maps to the cell containing `anchor`.
Span cells_overlapped(double lo, double hi, double anchor, double extent, double cell, std::size_t grid) {
    lo = std::clamp(lo, 0.0, extent);
    hi = std::clamp(hi, 0.0, extent);
    const auto clamp_cell = [grid](double v) {
        return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(grid - 1)));
    };
    if (hi <= lo) {
        const std::size_t c = clamp_cell(std::floor(anchor / cell));
        return {c, c};
    }
    std::size_t first = clamp_cell(std::floor(lo / cell));
    std::size_t last = clamp_cell(std::ceil(hi / cell) - 1.0);
    if (last < first) last = first;
    return {first, last};
}

GridRect rect_from_box(double x0, double y0, double x1, double y1, const Point& anchor, std::size_t grid,
                       std::size_t image_size) {
    require(grid > 0 && image_size >= grid, ErrorKind::InvalidArgument, "region rect: invalid grid/image size");
    const auto s = static_cast<double>(image_size);
    const double cell = s / static_cast<double>(grid);
    const Span cols = cells_overlapped(x0, x1, anchor.x, s, cell, grid);
    const Span rows = cells_overlapped(y0, y1, anchor.y, s, cell, grid);
    return {rows.first, cols.first, rows.last, cols.last};
}

double half_width(const Landmarks& lm) {
    const double ied = std::hypot(lm.right_eye.x - lm.left_eye.x, lm.right_eye.y - lm.left_eye.y);
    return kRectHalfWidthScale * ied / 2.0;
}

}  // namespace

GridRect nose_rect(const Landmarks& lm, std::size_t grid, std::size_t image_size) {
    require_inside(lm.nose, image_size, "nose");
    const double hw = half_width(lm);
    const Point& n = lm.nose;
    return rect_from_box(n.x - hw, n.y - hw, n.x + hw, n.y + hw, n, grid, image_size);
}

GridRect region_rect(ReferenceRegion region, const Landmarks& lm, std::size_t grid, std::size_t image_size) {
    const double hw = half_width(lm);
    switch (region) {
        case ReferenceRegion::Nose:
            return nose_rect(lm, grid, image_size);
        case ReferenceRegion::Mouth: {
            require_inside(lm.mouth_left, image_size, "mouth");
            require_inside(lm.mouth_right, image_size, "mouth");
            const Point c{(lm.mouth_left.x + lm.mouth_right.x) / 2.0, (lm.mouth_left.y + lm.mouth_right.y) / 2.0};
            return rect_from_box(c.x - hw, c.y - hw, c.x + hw, c.y + hw, c, grid, image_size);
        }
        case ReferenceRegion::Eyes: {
            require_inside(lm.left_eye, image_size, "eye");
            require_inside(lm.right_eye, image_size, "eye");
            const Point c{(lm.left_eye.x + lm.right_eye.x) / 2.0, (lm.left_eye.y + lm.right_eye.y) / 2.0};
            const double x0 = std::min(lm.left_eye.x, lm.right_eye.x) - hw / 2.0;
            const double x1 = std::max(lm.left_eye.x, lm.right_eye.x) + hw / 2.0;
            return rect_from_box(x0, c.y - hw / 2.0, x1, c.y + hw / 2.0, c, grid, image_size);
        }
        case ReferenceRegion::InnerFace: {
            double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
            for (const Point& p : lm.points()) {
                require_inside(p, image_size, "face");
                x0 = std::min(x0, p.x);
                y0 = std::min(y0, p.y);
                x1 = std::max(x1, p.x);
                y1 = std::max(y1, p.y);
            }
            return rect_from_box(x0 - hw / 2.0, y0 - hw / 2.0, x1 + hw / 2.0, y1 + hw / 2.0, lm.nose, grid,
                                 image_size);
        }
    }
    return nose_rect(lm, grid, image_size);
}

PatchLabelMap mask_to_patches(const Tensor& mask, std::size_t grid) {
    require(grid > 0, ErrorKind::InvalidArgument, "mask_to_patches: grid must be positive");
    require(mask.ndim() == 2, ErrorKind::Shape, "mask_to_patches: expected [H,W] mask, got " + shape_str(mask.shape()));
    const std::size_t h = mask.dim(0), w = mask.dim(1);
    require(h >= grid && w >= grid, ErrorKind::Shape, "mask_to_patches: mask smaller than the grid");
    const std::size_t ph = (h + grid - 1) / grid, pw = (w + grid - 1) / grid;
    PatchLabelMap out = PatchLabelMap::zeros(grid, grid);
    out.source = LabelSource::MaskDerived;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double v = mask.at(y, x);
            require(v == 0.0 || v == 1.0, ErrorKind::InvalidArgument, "mask_to_patches: mask is not binary");
            if (v > 0.0) out.values[(y / ph) * grid + x / pw] = 1;
        }
    return out;
}

void AnchorState::fold(std::vector<double>& anchor, bool& init, const std::vector<double>& batch) const {
    if (!init) {
        anchor = batch;
        init = true;
        return;
    }
    for (std::size_t i = 0; i < anchor.size(); ++i) anchor[i] = momentum * anchor[i] + (1.0 - momentum) * batch[i];
}

namespace {

double cosine(const double* a, std::size_t stride, const std::vector<double>& b) {
    double d = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t c = 0; c < b.size(); ++c) {
        const double x = a[c * stride];
        d += x * b[c];
        na += x * x;
        nb += b[c] * b[c];
    }
    return d / (std::sqrt(na) * std::sqrt(nb) + kCosineEps);
}

}  // namespace

SspslResult sspsl_labels(const std::vector<Tensor>& features, const std::vector<int>& labels,
                         const std::vector<GridRect>& rects, AnchorState& anchors) {
    require(features.size() == labels.size() && rects.size() == labels.size(), ErrorKind::InvalidArgument,
            "sspsl_labels: features, labels and rects must have equal length");
    require(!features.empty(), ErrorKind::InvalidArgument, "sspsl_labels: empty batch");
    const Shape& fs = features[0].shape();
    require(fs.size() == 3, ErrorKind::Shape, "sspsl_labels: features must be [C,Hp,Wp]");
    const std::size_t c = fs[0], rows = fs[1], cols = fs[2], l = rows * cols;

    std::vector<double> real_sum(c, 0.0), fake_sum(c, 0.0);
    std::size_t real_n = 0, fake_n = 0;
    for (std::size_t i = 0; i < features.size(); ++i) {
        require(features[i].shape() == fs, ErrorKind::Shape, "sspsl_labels: feature shapes differ within the batch");
        const Tensor& f = features[i];
        if (labels[i] == 0) {
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t p = 0; p < l; ++p) real_sum[ch] += f[ch * l + p];
            real_n += l;
        } else {
            const GridRect& r = rects[i];
            require(r.row1 < rows && r.col1 < cols && r.row0 <= r.row1 && r.col0 <= r.col1, ErrorKind::InvalidArgument,
                    "sspsl_labels: reference rect outside the feature grid");
            for (std::size_t y = r.row0; y <= r.row1; ++y)
                for (std::size_t x = r.col0; x <= r.col1; ++x) {
                    for (std::size_t ch = 0; ch < c; ++ch) fake_sum[ch] += f[ch * l + y * cols + x];
                    ++fake_n;
                }
        }
    }

    SspslResult res;
    if (real_n > 0) {
        for (auto& v : real_sum) v /= static_cast<double>(real_n);
        anchors.fold(anchors.real, anchors.real_init, real_sum);
        res.real_anchor = real_sum;
    } else {
        require(anchors.real_init, ErrorKind::Runtime,
                "sspsl_labels: batch has no real sample and no real anchor is initialized; the sampler must mix classes");
        res.real_anchor = anchors.real;
    }
    if (fake_n > 0) {
        for (auto& v : fake_sum) v /= static_cast<double>(fake_n);
        anchors.fold(anchors.fake, anchors.fake_init, fake_sum);
        res.fake_anchor = fake_sum;
    } else if (anchors.fake_init) {
        res.fake_anchor = anchors.fake;
    }

    for (std::size_t i = 0; i < features.size(); ++i) {
        PatchLabelMap m = PatchLabelMap::zeros(rows, cols);
        if (labels[i] != 0) {
            m.source = LabelSource::Pseudo;
            const Tensor& f = features[i];
            for (std::size_t p = 0; p < l; ++p) {
                const double s_fr = cosine(f.ptr() + p, l, res.real_anchor);
                const double s_ff = cosine(f.ptr() + p, l, res.fake_anchor);
                m.values[p] = (s_fr - s_ff >= 0.0) ? 0 : 1;
            }
        }
        res.labels.push_back(std::move(m));
    }
    return res;
}

Var loss_cls(Var logit, int label) {
    require(logit.value().size() == 1, ErrorKind::Shape, "loss_cls: logit must be a scalar");
    require(label == 0 || label == 1, ErrorKind::InvalidArgument, "loss_cls: label must be 0 or 1");
    return bce_with_logits_sum(logit, Tensor(logit.shape(), {static_cast<double>(label)}));
}

Var loss_loc(Var loc_logits, const PatchLabelMap& labels) {
    require(loc_logits.shape() == Shape{1, labels.rows, labels.cols}, ErrorKind::Shape,
            "loss_loc: logits " + shape_str(loc_logits.shape()) + " vs label grid " + std::to_string(labels.rows) + "x" +
                std::to_string(labels.cols));
    return bce_with_logits_sum(loc_logits, labels.as_tensor());
}

Var loss_total(Var l_cls, Var l_loc) { return add(l_cls, l_loc); }

}  // namespace dfl
