#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dfl/data.hpp"
#include "dfl/error.hpp"
#include "dfl/rng.hpp"
#include "dfl/supervision.hpp"
#include "dfl/tnsr.hpp"

using namespace dfl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("dfl_test_data_" + name);
    fs::remove_all(p);
    return p;
}

std::vector<std::uint8_t> bytes(const fs::path& p) { return tnsr::read_bytes(p); }

Sample real_for(std::uint64_t seed, std::size_t size = 64) {
    DatasetSpec spec;
    spec.image_size = size;
    return gen_real(seed, spec);
}

std::size_t set_pixels(const Tensor& m) {
    std::size_t n = 0;
    for (double v : m.vec()) n += v != 0.0;
    return n;
}

// Pixels where a forward difference of alpha is non-zero.
std::size_t gradient_pixels(const Tensor& alpha) {
    const std::size_t n = alpha.dim(1);
    std::size_t count = 0;
    for (std::size_t y = 0; y + 1 < n; ++y)
        for (std::size_t x = 0; x + 1 < n; ++x) {
            const double a = alpha.at(0, y, x);
            if (alpha.at(0, y, x + 1) != a || alpha.at(0, y + 1, x) != a) ++count;
        }
    return count;
}

double luminance(const Tensor& img, std::size_t y, std::size_t x) {
    return (img.at(0, y, x) + img.at(1, y, x) + img.at(2, y, x)) / 3.0;
}

// Five image statistics around the mask boundary.
std::array<double, 5> probe_features(const Sample& s) {
    const Tensor& m = s.mask_uncounted();
    const std::size_t n = s.size();
    double edge = 0, inner = 0, outer = 0, all = 0, area = 0;
    double ne = 0, ni = 0, no = 0;
    for (std::size_t y = 1; y + 1 < n; ++y)
        for (std::size_t x = 1; x + 1 < n; ++x) {
            const double gx = luminance(s.image, y, x + 1) - luminance(s.image, y, x - 1);
            const double gy = luminance(s.image, y + 1, x) - luminance(s.image, y - 1, x);
            const double g = std::hypot(gx, gy);
            all += g;
            area += m.at(y, x);
            const bool in = m.at(y, x) != 0.0;
            const bool border = m.at(y, x + 1) != m.at(y, x) || m.at(y + 1, x) != m.at(y, x) ||
                                m.at(y, x - 1) != m.at(y, x) || m.at(y - 1, x) != m.at(y, x);
            if (border) {
                edge += g;
                ++ne;
            } else if (in) {
                inner += g;
                ++ni;
            } else {
                outer += g;
                ++no;
            }
        }
    const double nn = static_cast<double>((n - 2) * (n - 2));
    return {edge / std::max(ne, 1.0), inner / std::max(ni, 1.0), outer / std::max(no, 1.0), area / nn,
            (edge / std::max(ne, 1.0)) / (all / nn + 1e-12)};
}

}  // namespace

TEST_CASE("real samples") {
    const Sample a = real_for(5), b = real_for(5);
    CHECK(a.label == 0);
    CHECK(a.family == Family::None);
    CHECK(a.mask_uncounted().shape() == Shape{64, 64});
    CHECK(set_pixels(a.mask_uncounted()) == 0);
    CHECK(bit_equal(a.image, b.image));
    CHECK(a.id == b.id);
    a.validate();
    for (double v : a.image.vec()) CHECK(std::round(v * 255) / 255 == v);
}

TEST_CASE("landmarks lie inside the face ellipse") {
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        const std::size_t size = seed % 2 ? 64 : 48;
        const Identity id = Identity::sample(seed, size);
        const Sample s = gen_real(id, derive_seed({seed, 9}), size, 0);
        for (const Point& p : s.landmarks.points()) {
            // Frame jitter shifts the face by at most one pixel.
            const double dx = std::max(0.0, std::abs(p.x - id.cx) - 1.0), dy = std::max(0.0, std::abs(p.y - id.cy) - 1.0);
            CHECK(dx * dx / (id.ax * id.ax) + dy * dy / (id.ay * id.ay) < 1.0);
        }
    }
}

TEST_CASE("family A mask is exactly the pasted rectangle") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const Sample t = real_for(seed), d = real_for(seed + 1000);
        const std::uint64_t fs = derive_seed({seed, 77});
        const Sample f = forge(t, d, Family::APaste, fs);
        const ForgeryRegion r = choose_region(t.landmarks, derive_seed({fs, 1}), t.size());
        const Tensor& m = f.mask_uncounted();
        for (std::size_t y = 0; y < t.size(); ++y)
            for (std::size_t x = 0; x < t.size(); ++x) {
                const bool in = x >= r.x0 && x < r.x1 && y >= r.y0 && y < r.y1;
                CHECK(m.at(y, x) == (in ? 1.0 : 0.0));
            }
        CHECK(f.label == 1);
        CHECK(f.family == Family::APaste);
        CHECK(f.video_id == t.video_id);
        f.validate();
    }
}

TEST_CASE("forge rejects degenerate inputs") {
    const Sample t = real_for(1), d = real_for(2);
    CHECK_THROWS_AS(forge(t, t, Family::BFeather, 1), Error);
    CHECK_THROWS_AS(forge(t, d, Family::None, 1), Error);
    const Sample f = forge(t, d, Family::BFeather, 1);
    CHECK_THROWS_AS(forge(f, d, Family::BFeather, 2), Error);
}

TEST_CASE("family B feathering has more gradient pixels than A's step edge") {
    for (std::uint64_t seed = 1; seed <= 30; ++seed) {
        const Sample t = real_for(seed);
        const ForgeryRegion r = choose_region(t.landmarks, seed, t.size());
        const Tensor a = forgery_alpha(Family::APaste, r, t.size());
        const Tensor b = forgery_alpha(Family::BFeather, r, t.size());
        CHECK(gradient_pixels(b) > gradient_pixels(a));
        for (double v : b.vec()) CHECK((v >= 0.0 && v <= 1.0));
    }
}

TEST_CASE("every generated fake has a positive patch at the default grid") {
    DatasetSpec spec;
    spec.real_count = 30;
    spec.fake_a = 30;
    spec.fake_b = 30;
    spec.fake_c = 30;
    const auto samples = generate_dataset(spec);
    CHECK(samples.size() == spec.total());
    std::size_t fakes = 0;
    for (const auto& s : samples) {
        s.validate();
        if (s.label == 0) {
            CHECK(set_pixels(s.mask_uncounted()) == 0);
            continue;
        }
        ++fakes;
        CHECK(mask_to_patches(s.mask_uncounted(), 8).positives() >= 1);
    }
    CHECK(fakes == 90);
}

TEST_CASE("flip is an involution and preserves the mask count") {
    const Sample t = real_for(3), d = real_for(4);
    const Sample f = forge(t, d, Family::CGradient, 9);
    const Sample ff = hflip(hflip(f));
    CHECK(bit_equal(ff.image, f.image));
    CHECK(bit_equal(ff.mask_uncounted(), f.mask_uncounted()));
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(std::abs(ff.landmarks.points()[i].x - f.landmarks.points()[i].x) < 1e-12);
        CHECK(ff.landmarks.points()[i].y == f.landmarks.points()[i].y);
    }
    const Sample once = hflip(f);
    CHECK(set_pixels(once.mask_uncounted()) == set_pixels(f.mask_uncounted()));
    CHECK(once.landmarks.left_eye.x < once.landmarks.right_eye.x);
    once.validate();
}

TEST_CASE("crop moves image and mask with the same geometry") {
    // Channels 0/1 hold each pixel centre's coordinates, so after resampling
    // they name the source location; the mask there must match.
    const std::size_t n = 32;
    Sample s = real_for(6, n);
    Tensor mask = Tensor::zeros({n, n});
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            s.image.at(0, y, x) = (x + 0.5) / n;
            s.image.at(1, y, x) = (y + 0.5) / n;
            mask.at(y, x) = ((x / 3) + (y / 3)) % 2;
        }
    s.set_mask(mask);
    Rng rng(7);
    std::size_t compared = 0;
    for (int k = 0; k < 30; ++k) {
        const double side = rng.uniform(0.6, 1.0) * n;
        const double x0 = rng.uniform(0, n - side), y0 = rng.uniform(0, n - side);
        const Sample c = crop_resize(s, x0, y0, side);
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x) {
                const double u = c.image.at(0, y, x) * n, v = c.image.at(1, y, x) * n;
                // Skip border clamping and samples that land on a pixel edge.
                if (u < 0.5 || v < 0.5 || u > n - 0.5 || v > n - 0.5) continue;
                if (std::abs(u - std::round(u)) < 1e-6 || std::abs(v - std::round(v)) < 1e-6) continue;
                const auto sx = static_cast<std::size_t>(u), sy = static_cast<std::size_t>(v);
                CHECK(c.mask_uncounted().at(y, x) == mask.at(sy, sx));
                ++compared;
            }
    }
    CHECK(compared > 20000);
    CHECK_THROWS_AS(crop_resize(s, 10, 10, 30), Error);
}

TEST_CASE("augment without masks never reads one") {
    const Sample t = real_for(8), d = real_for(9);
    const Sample f = forge(t, d, Family::BFeather, 3);
    AugmentOptions all{true, true, true, true};
    MaskReadCounter::reset();
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Sample a = augment(f, seed, all, false);
        CHECK_FALSE(a.has_mask());
    }
    CHECK(MaskReadCounter::count() == 0);
    const Sample kept = augment(f, 1, all, true);
    CHECK(MaskReadCounter::count() > 0);
    CHECK(kept.has_mask());
    for (double v : kept.image.vec()) CHECK((v >= 0.0 && v <= 1.0));
    CHECK(bit_equal(augment(f, 4, all).image, augment(f, 4, all).image));
}

TEST_CASE("families A and B are separable by a linear probe") {
    DatasetSpec spec;
    spec.real_count = 0;
    spec.fake_a = 100;
    spec.fake_b = 100;
    spec.seed = 3;
    const auto samples = generate_dataset(spec);
    std::vector<std::array<double, 5>> feats;
    std::vector<int> fam;
    for (const auto& s : samples) {
        feats.push_back(probe_features(s));
        fam.push_back(s.family == Family::BFeather);
    }
    // Even indices train, odd indices test.
    std::array<double, 5> mu{}, sd{}, m0{}, m1{};
    double n0 = 0, n1 = 0, nt = 0;
    for (std::size_t i = 0; i < feats.size(); i += 2) {
        for (int k = 0; k < 5; ++k) mu[k] += feats[i][k];
        nt += 1;
    }
    for (auto& v : mu) v /= nt;
    for (std::size_t i = 0; i < feats.size(); i += 2)
        for (int k = 0; k < 5; ++k) sd[k] += (feats[i][k] - mu[k]) * (feats[i][k] - mu[k]);
    for (auto& v : sd) v = std::sqrt(v / nt) + 1e-12;
    for (std::size_t i = 0; i < feats.size(); i += 2) {
        auto& m = fam[i] ? m1 : m0;
        (fam[i] ? n1 : n0) += 1;
        for (int k = 0; k < 5; ++k) m[k] += (feats[i][k] - mu[k]) / sd[k];
    }
    for (int k = 0; k < 5; ++k) {
        m0[k] /= n0;
        m1[k] /= n1;
    }
    // Nearest standardized class mean is a linear rule.
    std::size_t right = 0, total = 0;
    for (std::size_t i = 1; i < feats.size(); i += 2) {
        double d0 = 0, d1 = 0;
        for (int k = 0; k < 5; ++k) {
            const double z = (feats[i][k] - mu[k]) / sd[k];
            d0 += (z - m0[k]) * (z - m0[k]);
            d1 += (z - m1[k]) * (z - m1[k]);
        }
        right += (d1 < d0) == (fam[i] == 1);
        ++total;
    }
    INFO("held-out accuracy " << static_cast<double>(right) / total);
    // 100 held-out samples: 60 correct is above chance at p < 0.03.
    CHECK(right >= 60);
}

TEST_CASE("dataset write/read round trip") {
    DatasetSpec spec;
    spec.image_size = 32;
    spec.real_count = 12;
    spec.fake_a = 4;
    spec.fake_b = 5;
    spec.fake_c = 3;
    spec.seed = 17;
    const auto samples = generate_dataset(spec);
    const fs::path dir = scratch("rt");
    write_dataset(samples, spec, dir);
    const auto back = read_dataset(dir);
    REQUIRE(back.size() == samples.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(bit_equal(back[i].image, samples[i].image));
        CHECK(bit_equal(back[i].mask_uncounted(), samples[i].mask_uncounted()));
        CHECK(back[i].id == samples[i].id);
        CHECK(back[i].label == samples[i].label);
        CHECK(back[i].family == samples[i].family);
        CHECK(back[i].video_id == samples[i].video_id);
        for (std::size_t k = 0; k < 5; ++k) {
            CHECK(back[i].landmarks.points()[k].x == samples[i].landmarks.points()[k].x);
            CHECK(back[i].landmarks.points()[k].y == samples[i].landmarks.points()[k].y);
        }
    }
    CHECK(bit_equal(read_image_file(dir / "images" / (samples[0].id + ".tnsr")), samples[0].image));

    // Same spec and seed: identical bytes in every file.
    const fs::path dir2 = scratch("rt2");
    write_dataset(generate_dataset(spec), spec, dir2);
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        CHECK(bytes(e.path()) == bytes(dir2 / fs::relative(e.path(), dir)));
    }
    fs::remove_all(dir2);

    // A truncated blob is rejected.
    const fs::path victim = dir / "images" / (samples[3].id + ".tnsr");
    auto b = bytes(victim);
    b.resize(b.size() - 7);
    tnsr::write_bytes(victim, b);
    CHECK_THROWS_AS(read_dataset(dir), Error);
    fs::remove_all(dir);
}

TEST_CASE("reader rejects malformed indexes") {
    DatasetSpec spec;
    spec.image_size = 16;
    spec.real_count = 2;
    spec.fake_b = 2;
    const fs::path dir = scratch("bad");
    write_dataset(generate_dataset(spec), spec, dir);
    auto text = bytes(dir / "index.json");
    std::string s(text.begin(), text.end());
    std::string v = s;
    v.replace(v.find("\"schema_version\": 1"), 19, "\"schema_version\": 7");
    tnsr::write_bytes(dir / "index.json", std::vector<std::uint8_t>(v.begin(), v.end()));
    try {
        read_dataset(dir);
        FAIL("expected a version error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Version);
    }
    std::string broken = s.substr(0, s.size() / 2);
    tnsr::write_bytes(dir / "index.json", std::vector<std::uint8_t>(broken.begin(), broken.end()));
    CHECK_THROWS_AS(read_dataset(dir), Error);
    CHECK_THROWS_AS(read_dataset(dir / "missing"), Error);
    fs::remove_all(dir);
}

TEST_CASE("video ids group frames") {
    DatasetSpec spec;
    spec.real_count = 10;
    spec.fake_b = 10;
    spec.frames_per_video = 4;
    const auto samples = generate_dataset(spec);
    std::map<std::int64_t, std::pair<int, int>> per_video;
    for (const auto& s : samples) {
        auto& [label, n] = per_video[s.video_id];
        if (n > 0) CHECK(label == s.label);
        label = s.label;
        ++n;
    }
    for (const auto& [v, p] : per_video) CHECK(p.second <= 4);
    CHECK(per_video.size() >= 6);
}
