#include "dfl/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dfl/error.hpp"
#include "dfl/rng.hpp"

namespace dfl {

namespace {
std::atomic<std::size_t> g_mask_reads{0};
}

std::size_t MaskReadCounter::count() { return g_mask_reads.load(); }
void MaskReadCounter::reset() { g_mask_reads.store(0); }

const Tensor& Sample::mask() const {
    g_mask_reads.fetch_add(1);
    return mask_;
}

std::string to_string(Family f) {
    switch (f) {
        case Family::None: return "none";
        case Family::APaste: return "A_paste";
        case Family::BFeather: return "B_feather";
        case Family::CGradient: return "C_gradient";
    }
    return "none";
}

Family family_from_string(const std::string& s) {
    if (s == "none") return Family::None;
    if (s == "A_paste" || s == "A") return Family::APaste;
    if (s == "B_feather" || s == "B") return Family::BFeather;
    if (s == "C_gradient" || s == "C") return Family::CGradient;
    fail(ErrorKind::Format, "unknown forgery family '" + s + "'");
}

void Sample::validate() const {
    auto bad = [this](const std::string& m) { fail(ErrorKind::Format, "sample '" + id + "': " + m); };
    if (image.ndim() != 3 || image.dim(0) != 3 || image.dim(1) != image.dim(2)) bad("image must be [3,S,S]");
    const std::size_t s = image.dim(1);
    for (double v : image.data())
        if (!(v >= 0.0 && v <= 1.0)) bad("image value outside [0,1]");
    if (label != 0 && label != 1) bad("label must be 0 or 1");
    if (mask_.shape() != Shape{s, s}) bad("mask must be [S,S]");
    std::size_t set = 0;
    for (double v : mask_.data()) {
        if (v != 0.0 && v != 1.0) bad("mask is not binary");
        set += v > 0.0;
    }
    if (label == 0 && set != 0) bad("real sample carries a non-empty mask");
    if (label == 1 && set == 0) bad("fake sample has an empty mask");
    if ((label == 0) != (family == Family::None)) bad("family does not match label");
    for (const Point& p : landmarks.points())
        if (!(p.x >= 0.0 && p.x < static_cast<double>(s) && p.y >= 0.0 && p.y < static_cast<double>(s)))
            bad("landmark outside the image");
}

void DatasetSpec::validate() const {
    require(image_size >= 16, ErrorKind::Config, "dataset spec: image_size must be at least 16");
    require(frames_per_video > 0, ErrorKind::Config, "dataset spec: frames_per_video must be positive");
}

// ---------------------------------------------------------------------------
// Rendering

Identity Identity::sample(std::uint64_t seed, std::size_t image_size) {
    Rng r(seed);
    const auto s = static_cast<double>(image_size);
    Identity id{};
    id.seed = seed;
    id.cx = s / 2.0 + r.uniform(-0.04, 0.04) * s;
    id.cy = s / 2.0 + r.uniform(-0.03, 0.03) * s;
    id.ax = r.uniform(0.26, 0.32) * s;
    id.ay = r.uniform(0.34, 0.40) * s;
    const double base = r.uniform(0.55, 0.85);
    id.skin[0] = base;
    id.skin[1] = base * r.uniform(0.68, 0.80);
    id.skin[2] = base * r.uniform(0.52, 0.66);
    for (int c = 0; c < 3; ++c) {
        id.bg[c] = r.uniform(0.05, 0.95);
        id.bg2[c] = r.uniform(0.05, 0.95);
    }
    id.bg_fx = r.uniform(0.5, 2.0);
    id.bg_fy = r.uniform(0.5, 2.0);
    id.bg_phase = r.uniform(0.0, 2.0 * std::numbers::pi);
    id.tex_fx = r.uniform(2.0, 6.0);
    id.tex_fy = r.uniform(2.0, 6.0);
    id.tex_amp = r.uniform(0.01, 0.04);
    id.eye_dx = r.uniform(0.38, 0.46) * id.ax;
    id.eye_dy = r.uniform(0.22, 0.30) * id.ay;
    id.eye_r = r.uniform(0.06, 0.08) * s;
    id.nose_dy = r.uniform(0.02, 0.10) * id.ay;
    id.nose_r = r.uniform(0.04, 0.06) * s;
    id.mouth_dx = r.uniform(0.30, 0.40) * id.ax;
    id.mouth_dy = r.uniform(0.45, 0.55) * id.ay;
    id.noise = r.uniform(0.006, 0.012);
    return id;
}

namespace {

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

double blob(double dx, double dy, double rx, double ry) {
    const double d2 = (dx / rx) * (dx / rx) + (dy / ry) * (dy / ry);
    return d2 < 1.0 ? 1.0 - d2 : 0.0;
}

double bilinear(const Tensor& img, std::size_t c, double fx, double fy) {
    const std::size_t h = img.dim(1), w = img.dim(2);
    fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
    fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
    const auto x0 = static_cast<std::size_t>(std::floor(fx));
    const auto y0 = static_cast<std::size_t>(std::floor(fy));
    const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    const double tx = fx - static_cast<double>(x0), ty = fy - static_cast<double>(y0);
    const double top = img.at(c, y0, x0) * (1.0 - tx) + img.at(c, y0, x1) * tx;
    const double bot = img.at(c, y1, x0) * (1.0 - tx) + img.at(c, y1, x1) * tx;
    return top * (1.0 - ty) + bot * ty;
}

}  // namespace

Sample gen_real(const Identity& idn, std::uint64_t frame_seed, std::size_t image_size, std::int64_t video_id) {
    Rng r(frame_seed);
    const auto s = static_cast<double>(image_size);
    const double jx = r.uniform(-1.0, 1.0), jy = r.uniform(-1.0, 1.0);
    const double bright = r.uniform(-0.02, 0.02);
    const double cx = idn.cx + jx, cy = idn.cy + jy;

    Sample out;
    out.label = 0;
    out.family = Family::None;
    out.video_id = video_id;
    out.identity = idn.seed;
    out.landmarks.left_eye = {cx - idn.eye_dx, cy - idn.eye_dy};
    out.landmarks.right_eye = {cx + idn.eye_dx, cy - idn.eye_dy};
    out.landmarks.nose = {cx, cy + idn.nose_dy};
    out.landmarks.mouth_left = {cx - idn.mouth_dx, cy + idn.mouth_dy};
    out.landmarks.mouth_right = {cx + idn.mouth_dx, cy + idn.mouth_dy};

    const double two_pi = 2.0 * std::numbers::pi;
    Tensor img = Tensor::zeros({3, image_size, image_size});
    for (std::size_t y = 0; y < image_size; ++y) {
        for (std::size_t x = 0; x < image_size; ++x) {
            const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
            const double u = px / s, v = py / s;
            const double t = 0.5 + 0.5 * std::sin(two_pi * (idn.bg_fx * u + idn.bg_fy * v) + idn.bg_phase);
            double col[3];
            for (int c = 0; c < 3; ++c) col[c] = idn.bg[c] * (1.0 - t) + idn.bg2[c] * t;

            const double ex = (px - cx) / idn.ax, ey = (py - cy) / idn.ay;
            const double e = std::sqrt(ex * ex + ey * ey);
            const double face = std::clamp((1.0 - e) * std::min(idn.ax, idn.ay) + 0.5, 0.0, 1.0);
            if (face > 0.0) {
                const double tex = 1.0 + idn.tex_amp * std::sin(two_pi * idn.tex_fx * u) * std::cos(two_pi * idn.tex_fy * v);
                const double shade = 1.0 - 0.15 * e * e;
                double skin[3];
                for (int c = 0; c < 3; ++c) skin[c] = idn.skin[c] * tex * shade;
                const double eyes = std::max(blob(px - out.landmarks.left_eye.x, py - out.landmarks.left_eye.y, idn.eye_r, idn.eye_r * 0.7),
                                             blob(px - out.landmarks.right_eye.x, py - out.landmarks.right_eye.y, idn.eye_r, idn.eye_r * 0.7));
                for (int c = 0; c < 3; ++c) skin[c] = skin[c] * (1.0 - 0.85 * eyes) + 0.12 * 0.85 * eyes;
                const double nose = blob(px - out.landmarks.nose.x, py - out.landmarks.nose.y, idn.nose_r, idn.nose_r * 1.4);
                for (double& c : skin) c *= 1.0 - 0.25 * nose;
                const double mouth = blob(px - cx, py - (cy + idn.mouth_dy), idn.mouth_dx, idn.mouth_dx * 0.3);
                static constexpr double lip[3] = {0.45, 0.15, 0.15};
                for (int c = 0; c < 3; ++c) skin[c] = skin[c] * (1.0 - 0.8 * mouth) + lip[c] * 0.8 * mouth;
                for (int c = 0; c < 3; ++c) col[c] = col[c] * (1.0 - face) + skin[c] * face;
            }
            for (int c = 0; c < 3; ++c)
                img.at(static_cast<std::size_t>(c), y, x) = quantize(col[c] + bright + r.normal(0.0, idn.noise));
        }
    }
    out.image = std::move(img);
    out.set_mask(Tensor::zeros({image_size, image_size}));
    return out;
}

Sample gen_real(std::uint64_t seed, const DatasetSpec& spec) {
    return gen_real(Identity::sample(seed, spec.image_size), derive_seed({seed, 0}), spec.image_size,
                    static_cast<std::int64_t>(seed & 0x7fffffff));
}

ForgeryRegion choose_region(const Landmarks& lm, std::uint64_t seed, std::size_t image_size) {
    Rng r(seed);
    const auto s = static_cast<double>(image_size);
    const double ied = std::hypot(lm.right_eye.x - lm.left_eye.x, lm.right_eye.y - lm.left_eye.y);
    ForgeryRegion reg{};
    if (r.bernoulli(0.6)) {
        // inner face: eyes down to the mouth
        reg.x0 = std::min(lm.left_eye.x, lm.mouth_left.x) - r.uniform(0.1, 0.3) * ied;
        reg.x1 = std::max(lm.right_eye.x, lm.mouth_right.x) + r.uniform(0.1, 0.3) * ied;
        reg.y0 = std::min(lm.left_eye.y, lm.right_eye.y) - r.uniform(0.1, 0.25) * ied;
        reg.y1 = std::max(lm.mouth_left.y, lm.mouth_right.y) + r.uniform(0.05, 0.2) * ied;
    } else {
        // nose and mouth
        reg.x0 = lm.mouth_left.x - r.uniform(0.05, 0.2) * ied;
        reg.x1 = lm.mouth_right.x + r.uniform(0.05, 0.2) * ied;
        reg.y0 = lm.nose.y - r.uniform(0.25, 0.4) * ied;
        reg.y1 = std::max(lm.mouth_left.y, lm.mouth_right.y) + r.uniform(0.05, 0.2) * ied;
    }
    reg.x0 = std::clamp(std::floor(reg.x0), 1.0, s - 2.0);
    reg.y0 = std::clamp(std::floor(reg.y0), 1.0, s - 2.0);
    reg.x1 = std::clamp(std::ceil(reg.x1), reg.x0 + 1.0, s - 1.0);
    reg.y1 = std::clamp(std::ceil(reg.y1), reg.y0 + 1.0, s - 1.0);
    return reg;
}

Tensor forgery_alpha(Family family, const ForgeryRegion& reg, std::size_t image_size) {
    Tensor alpha = Tensor::zeros({1, image_size, image_size});
    constexpr double sigma = 2.0;
    for (std::size_t y = 0; y < image_size; ++y) {
        for (std::size_t x = 0; x < image_size; ++x) {
            const double px = static_cast<double>(x), py = static_cast<double>(y);
            double a = 0.0;
            switch (family) {
                case Family::None:
                    break;
                case Family::APaste:
                    a = (px >= reg.x0 && px < reg.x1 && py >= reg.y0 && py < reg.y1) ? 1.0 : 0.0;
                    break;
                case Family::BFeather: {
                    const double dx = std::max({reg.x0 - px, 0.0, px - (reg.x1 - 1.0)});
                    const double dy = std::max({reg.y0 - py, 0.0, py - (reg.y1 - 1.0)});
                    const double d = std::hypot(dx, dy);
                    a = d <= 3.0 * sigma ? std::exp(-d * d / (2.0 * sigma * sigma)) : 0.0;
                    break;
                }
                case Family::CGradient: {
                    const double cx = (reg.x0 + reg.x1) / 2.0, cy = (reg.y0 + reg.y1) / 2.0;
                    const double ax = (reg.x1 - reg.x0) / 2.0, ay = (reg.y1 - reg.y0) / 2.0;
                    const double ex = (px + 0.5 - cx) / ax, ey = (py + 0.5 - cy) / ay;
                    const double rr = std::sqrt(ex * ex + ey * ey);
                    a = std::clamp(2.0 * (1.0 - rr), 0.0, 1.0);
                    break;
                }
            }
            alpha.at(0, y, x) = a;
        }
    }
    return alpha;
}

Sample forge(const Sample& target, const Sample& donor, Family family, std::uint64_t seed) {
    require(target.label == 0 && donor.label == 0, ErrorKind::InvalidArgument, "forge: target and donor must be real");
    require(family != Family::None, ErrorKind::InvalidArgument, "forge: a forgery family is required");
    require(target.identity != donor.identity, ErrorKind::InvalidArgument,
            "forge: target and donor share identity seed " + std::to_string(target.identity) + " (degenerate forgery)");
    require(target.image.shape() == donor.image.shape(), ErrorKind::Shape, "forge: image sizes differ");
    const std::size_t s = target.size();
    Rng r(seed);
    const ForgeryRegion reg = choose_region(target.landmarks, derive_seed({seed, 1}), s);
    const Tensor alpha = forgery_alpha(family, reg, s);
    const double zoom = r.uniform(0.85, 0.95);

    Tensor out = target.image;
    Tensor mask = Tensor::zeros({s, s});
    const Point tn = target.landmarks.nose, dn = donor.landmarks.nose;
    for (std::size_t y = 0; y < s; ++y) {
        for (std::size_t x = 0; x < s; ++x) {
            const double a = alpha.at(0, y, x);
            if (a <= 0.0) continue;
            mask.at(y, x) = 1.0;
            // donor content aligned on the nose, slightly resampled
            const double fx = dn.x - 0.5 + (static_cast<double>(x) + 0.5 - tn.x) * zoom;
            const double fy = dn.y - 0.5 + (static_cast<double>(y) + 0.5 - tn.y) * zoom;
            for (std::size_t c = 0; c < 3; ++c)
                out.at(c, y, x) = a * bilinear(donor.image, c, fx, fy) + (1.0 - a) * target.image.at(c, y, x);
        }
    }
    if (family == Family::CGradient) {
        const Tensor blended = out;
        for (std::size_t y = 0; y < s; ++y)
            for (std::size_t x = 0; x < s; ++x) {
                if (mask.at(y, x) == 0.0) continue;
                for (std::size_t c = 0; c < 3; ++c) {
                    double acc = 0.0;
                    int n = 0;
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
                            if (yy < 0 || xx < 0 || yy >= static_cast<long>(s) || xx >= static_cast<long>(s)) continue;
                            acc += blended.at(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
                            ++n;
                        }
                    out.at(c, y, x) = acc / n;
                }
            }
    }
    for (double& v : out.data()) v = quantize(v);

    Sample f;
    f.image = std::move(out);
    f.set_mask(std::move(mask));
    f.label = 1;
    f.family = family;
    f.landmarks = target.landmarks;
    f.video_id = target.video_id;
    f.identity = target.identity;
    f.id = target.id;
    return f;
}

// ---------------------------------------------------------------------------
// Augmentation

Sample hflip(const Sample& s) {
    Sample out = s;
    const std::size_t n = s.size();
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x) out.image.at(c, y, x) = s.image.at(c, y, n - 1 - x);
    if (s.has_mask()) {
        const Tensor& m = s.mask_uncounted();
        Tensor fm = m;
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x) fm.at(y, x) = m.at(y, n - 1 - x);
        out.set_mask(std::move(fm));
    }
    const auto w = static_cast<double>(n);
    auto flip = [w](Point p) { return Point{w - p.x, p.y}; };
    // left/right swap keeps "left" meaning image-left
    out.landmarks.left_eye = flip(s.landmarks.right_eye);
    out.landmarks.right_eye = flip(s.landmarks.left_eye);
    out.landmarks.nose = flip(s.landmarks.nose);
    out.landmarks.mouth_left = flip(s.landmarks.mouth_right);
    out.landmarks.mouth_right = flip(s.landmarks.mouth_left);
    return out;
}

Sample crop_resize(const Sample& s, double x0, double y0, double side, bool keep_mask) {
    const std::size_t n = s.size();
    const auto w = static_cast<double>(n);
    require(side > 0.0 && x0 >= 0.0 && y0 >= 0.0 && x0 + side <= w + 1e-9 && y0 + side <= w + 1e-9,
            ErrorKind::InvalidArgument, "crop_resize: crop box outside the image");
    const double k = side / w;
    Sample out = s;
    const Tensor* mask = keep_mask && s.has_mask() ? &s.mask() : nullptr;
    Tensor om = mask ? Tensor::zeros({n, n}) : Tensor();
    for (std::size_t y = 0; y < n; ++y) {
        const double v = y0 + (static_cast<double>(y) + 0.5) * k;
        for (std::size_t x = 0; x < n; ++x) {
            const double u = x0 + (static_cast<double>(x) + 0.5) * k;
            for (std::size_t c = 0; c < 3; ++c) out.image.at(c, y, x) = bilinear(s.image, c, u - 0.5, v - 0.5);
            if (mask) {
                const auto mx = std::min(static_cast<std::size_t>(u), n - 1);
                const auto my = std::min(static_cast<std::size_t>(v), n - 1);
                om.at(y, x) = mask->at(my, mx);
            }
        }
    }
    out.set_mask(std::move(om));
    auto map = [&](Point p) {
        return Point{std::clamp((p.x - x0) / k, 0.0, std::nextafter(w, 0.0)),
                     std::clamp((p.y - y0) / k, 0.0, std::nextafter(w, 0.0))};
    };
    out.landmarks.left_eye = map(s.landmarks.left_eye);
    out.landmarks.right_eye = map(s.landmarks.right_eye);
    out.landmarks.nose = map(s.landmarks.nose);
    out.landmarks.mouth_left = map(s.landmarks.mouth_left);
    out.landmarks.mouth_right = map(s.landmarks.mouth_right);
    return out;
}

Sample augment(const Sample& s, std::uint64_t seed, const AugmentOptions& opts, bool keep_mask) {
    Rng r(seed);
    // Draw every random quantity up front so toggles do not shift the stream.
    const bool do_flip = r.bernoulli(0.5);
    const double area = r.uniform(0.8, 1.0);
    const double cx = r.uniform(0.0, 1.0), cy = r.uniform(0.0, 1.0);
    const double contrast = r.uniform(0.8, 1.2);
    const double sigma = r.uniform(0.0, 1.0);

    Sample out = s;
    if (!keep_mask) out.set_mask(Tensor());
    if (opts.flip && do_flip) out = hflip(out);
    if (opts.crop) {
        const auto w = static_cast<double>(s.size());
        const double side = std::sqrt(area) * w;
        out = crop_resize(out, cx * (w - side), cy * (w - side), side, keep_mask);
    }
    if (opts.contrast) {
        double mean = 0.0;
        for (double v : out.image.data()) mean += v;
        mean /= static_cast<double>(out.image.size());
        for (double& v : out.image.data()) v = std::clamp((v - mean) * contrast + mean, 0.0, 1.0);
    }
    if (opts.blur && sigma > 0.05) {
        const int rad = static_cast<int>(std::ceil(3.0 * sigma));
        std::vector<double> k(static_cast<std::size_t>(2 * rad + 1));
        double z = 0.0;
        for (int i = -rad; i <= rad; ++i) z += k[static_cast<std::size_t>(i + rad)] = std::exp(-i * i / (2.0 * sigma * sigma));
        for (double& v : k) v /= z;
        const std::size_t n = s.size();
        const long last = static_cast<long>(n) - 1;
        for (int pass = 0; pass < 2; ++pass) {
            const Tensor src = out.image;
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t y = 0; y < n; ++y)
                    for (std::size_t x = 0; x < n; ++x) {
                        double acc = 0.0;
                        for (int i = -rad; i <= rad; ++i) {
                            const long yy = pass == 0 ? static_cast<long>(y) : std::clamp<long>(static_cast<long>(y) + i, 0, last);
                            const long xx = pass == 0 ? std::clamp<long>(static_cast<long>(x) + i, 0, last) : static_cast<long>(x);
                            acc += k[static_cast<std::size_t>(i + rad)] * src.at(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
                        }
                        out.image.at(c, y, x) = acc;
                    }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

std::vector<Sample> generate_dataset(const DatasetSpec& spec) {
    spec.validate();
    const std::size_t s = spec.image_size, fpv = spec.frames_per_video;
    std::vector<Sample> out;
    out.reserve(spec.total());
    std::int64_t video = 0;
    char buf[64];

    for (std::size_t i = 0; i < spec.real_count; ++i) {
        const std::size_t v = i / fpv, f = i % fpv;
        const Identity idn = Identity::sample(derive_seed({spec.seed, 1, v}), s);
        Sample smp = gen_real(idn, derive_seed({spec.seed, 2, v, f}), s, video + static_cast<std::int64_t>(v));
        std::snprintf(buf, sizeof buf, "real_%06zu", i);
        smp.id = buf;
        out.push_back(std::move(smp));
    }
    video += static_cast<std::int64_t>((spec.real_count + fpv - 1) / fpv);

    const std::pair<Family, std::size_t> fams[] = {
        {Family::APaste, spec.fake_a}, {Family::BFeather, spec.fake_b}, {Family::CGradient, spec.fake_c}};
    for (const auto& [fam, count] : fams) {
        const auto fk = static_cast<std::uint64_t>(fam);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t v = i / fpv, f = i % fpv;
            const Identity target_id = Identity::sample(derive_seed({spec.seed, 10 + fk, v}), s);
            const Identity donor_id = Identity::sample(derive_seed({spec.seed, 20 + fk, v}), s);
            const auto vid = video + static_cast<std::int64_t>(v);
            Sample target = gen_real(target_id, derive_seed({spec.seed, 30 + fk, v, f}), s, vid);
            Sample donor = gen_real(donor_id, derive_seed({spec.seed, 40 + fk, v, f}), s, -1);
            Sample fake = forge(target, donor, fam, derive_seed({spec.seed, 50 + fk, v}));
            std::snprintf(buf, sizeof buf, "fake%c_%06zu", "NABC"[fk], i);
            fake.id = buf;
            out.push_back(std::move(fake));
        }
        video += static_cast<std::int64_t>((count + fpv - 1) / fpv);
    }
    return out;
}

}  // namespace dfl
