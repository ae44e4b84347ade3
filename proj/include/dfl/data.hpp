#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dfl/supervision.hpp"
#include "dfl/tensor.hpp"

namespace dfl {

enum class Family { None, APaste, BFeather, CGradient };

std::string to_string(Family f);
Family family_from_string(const std::string& s);

// Counts every read of a ground-truth mask through Sample::mask().
struct MaskReadCounter {
    static std::size_t count();
    static void reset();
};

class Sample {
public:
    Tensor image;  // [3,H,W] in [0,1]
    int label = 0;
    Landmarks landmarks;
    Family family = Family::None;
    std::int64_t video_id = 0;
    std::uint64_t identity = 0;  // seed of the rendered identity (the target's for fakes)
    std::string id;

    const Tensor& mask() const;  // [H,W] binary; counted
    void set_mask(Tensor m) { mask_ = std::move(m); }
    bool has_mask() const { return !mask_.empty(); }
    // Uncounted access for code that only moves data around (I/O, tests).
    const Tensor& mask_uncounted() const { return mask_; }

    std::size_t size() const { return image.dim(1); }

    // Label/mask consistency, landmark placement, value ranges. Throws with the
    // sample id on violation.
    void validate() const;

private:
    Tensor mask_;
};

struct AugmentOptions {
    bool flip = true;
    bool contrast = true;
    bool blur = false;
    bool crop = false;
};

struct DatasetSpec {
    std::size_t image_size = 64;
    std::size_t real_count = 100;
    std::size_t fake_a = 0;
    std::size_t fake_b = 100;
    std::size_t fake_c = 0;
    std::size_t frames_per_video = 4;
    std::uint64_t seed = 1;
    AugmentOptions augment{};

    void validate() const;
    std::size_t total() const { return real_count + fake_a + fake_b + fake_c; }
};

// Per-video identity parameters; frames of one video share them.
struct Identity {
    std::uint64_t seed = 0;
    double cx, cy, ax, ay;           // face ellipse
    double skin[3];
    double bg[3], bg2[3];
    double bg_fx, bg_fy, bg_phase;
    double tex_fx, tex_fy, tex_amp;
    double eye_dx, eye_dy, eye_r;
    double nose_dy, nose_r;
    double mouth_dx, mouth_dy;
    double noise;                    // sensor noise sigma
    static Identity sample(std::uint64_t seed, std::size_t image_size);
};

// Renders one frame of an identity; `frame_seed` drives jitter and noise.
Sample gen_real(const Identity& identity, std::uint64_t frame_seed, std::size_t image_size, std::int64_t video_id);
Sample gen_real(std::uint64_t seed, const DatasetSpec& spec);

// Region replaced by a forgery, in pixels (rectangle or its inscribed ellipse).
struct ForgeryRegion {
    double x0, y0, x1, y1;
};

ForgeryRegion choose_region(const Landmarks& lm, std::uint64_t seed, std::size_t image_size);

// Blend weights for a family over a region: A is the hard rectangle,
// B a Gaussian-feathered rectangle, C a normalized distance ramp inside the
// inscribed ellipse. Mask = alpha > 0.
Tensor forgery_alpha(Family family, const ForgeryRegion& region, std::size_t image_size);

Sample forge(const Sample& target, const Sample& donor, Family family, std::uint64_t seed);

Sample hflip(const Sample& s);
// With `keep_mask = false` the mask is never read and the result carries none.
Sample augment(const Sample& s, std::uint64_t seed, const AugmentOptions& opts, bool keep_mask = true);

// Crop box [x0, x0+side) x [y0, y0+side) resampled back to full size. The
// image is bilinear, the mask nearest; landmarks follow the same map. With
// `keep_mask = false` the result carries no mask.
Sample crop_resize(const Sample& s, double x0, double y0, double side, bool keep_mask = true);

std::vector<Sample> generate_dataset(const DatasetSpec& spec);

inline constexpr int kIndexSchemaVersion = 1;

void write_dataset(const std::vector<Sample>& samples, const DatasetSpec& spec, const std::filesystem::path& dir);
std::vector<Sample> read_dataset(const std::filesystem::path& dir);

// A [3,S,S] image stored as TNSR: u8 payloads are scaled by 1/255, float
// payloads are taken as-is and must lie in [0,1].
Tensor read_image_file(const std::filesystem::path& path);

}  // namespace dfl
