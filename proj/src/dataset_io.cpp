#include <cmath>
#include <fstream>

#include "dfl/data.hpp"
#include "dfl/error.hpp"
#include "dfl/tnsr.hpp"
#include "json.hpp"

namespace dfl {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

Tensor image_to_bytes(const Tensor& img, const std::string& id) {
    Tensor raw = img;
    for (double& v : raw.data()) {
        const double k = std::round(v * 255.0);
        if (k / 255.0 != v)
            fail(ErrorKind::InvalidArgument, "write_dataset: sample '" + id + "' image is not 8-bit quantized");
        v = k;
    }
    return raw;
}

json points_json(const Landmarks& lm) {
    json a = json::array();
    for (const Point& p : lm.points()) a.push_back({p.x, p.y});
    return a;
}

json spec_json(const DatasetSpec& s) {
    return {{"image_size", s.image_size},
            {"real_count", s.real_count},
            {"fake_a", s.fake_a},
            {"fake_b", s.fake_b},
            {"fake_c", s.fake_c},
            {"frames_per_video", s.frames_per_video},
            {"seed", s.seed},
            {"augment",
             {{"flip", s.augment.flip}, {"contrast", s.augment.contrast}, {"blur", s.augment.blur}, {"crop", s.augment.crop}}}};
}

}  // namespace

void write_dataset(const std::vector<Sample>& samples, const DatasetSpec& spec, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir / "images", ec);
    if (!ec) fs::create_directories(dir / "masks", ec);
    if (ec) fail(ErrorKind::Io, "write_dataset: cannot create " + dir.string() + ": " + ec.message());

    json index;
    index["schema_version"] = kIndexSchemaVersion;
    index["image_size"] = spec.image_size;
    index["count"] = samples.size();
    index["spec"] = spec_json(spec);
    json arr = json::array();
    for (const Sample& s : samples) {
        s.validate();
        const std::string image_rel = "images/" + s.id + ".tnsr";
        const std::string mask_rel = "masks/" + s.id + ".tnsr";
        tnsr::write_file(dir / image_rel, image_to_bytes(s.image, s.id), tnsr::DType::U8);
        tnsr::write_file(dir / mask_rel, s.mask_uncounted(), tnsr::DType::U8);
        arr.push_back({{"id", s.id},
                       {"label", s.label},
                       {"family", to_string(s.family)},
                       {"video_id", s.video_id},
                       {"identity", s.identity},
                       {"landmarks", points_json(s.landmarks)},
                       {"image", image_rel},
                       {"mask", mask_rel}});
    }
    index["samples"] = std::move(arr);
    const fs::path ip = dir / "index.json";
    std::ofstream out(ip);
    if (!out) fail(ErrorKind::Io, "write_dataset: cannot open " + ip.string());
    out << index.dump(1) << '\n';
    if (!out) fail(ErrorKind::Io, "write_dataset: write failed for " + ip.string());
}

Tensor read_image_file(const fs::path& path) {
    const auto bytes = tnsr::read_bytes(path);
    std::size_t used = 0;
    Tensor img = tnsr::decode(bytes.data(), bytes.size(), path.string(), &used);
    if (used != bytes.size()) fail(ErrorKind::Format, path.string() + ": trailing bytes after the tensor");
    if (img.ndim() != 3 || img.dim(0) != 3 || img.dim(1) != img.dim(2))
        fail(ErrorKind::Format, path.string() + ": expected a [3,S,S] image, got " + shape_str(img.shape()));
    // dtype byte follows the magic and the version
    if (bytes[8] == static_cast<std::uint8_t>(tnsr::DType::U8)) {
        for (double& v : img.data()) v /= 255.0;
    } else {
        for (double v : img.data())
            if (!(v >= 0.0 && v <= 1.0)) fail(ErrorKind::Format, path.string() + ": pixel value outside [0,1]");
    }
    return img;
}

std::vector<Sample> read_dataset(const fs::path& dir) {
    const fs::path ip = dir / "index.json";
    std::ifstream in(ip);
    if (!in) fail(ErrorKind::Io, "read_dataset: cannot open " + ip.string());
    json index;
    try {
        index = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorKind::Format, ip.string() + ": " + e.what());
    }
    std::vector<Sample> out;
    try {
        const int version = index.at("schema_version").get<int>();
        if (version != kIndexSchemaVersion)
            fail(ErrorKind::Version, ip.string() + ": index schema_version " + std::to_string(version) +
                                         " is not supported (expected " + std::to_string(kIndexSchemaVersion) + ")");
        const auto size = index.at("image_size").get<std::size_t>();
        const auto& arr = index.at("samples");
        if (arr.size() != index.at("count").get<std::size_t>())
            fail(ErrorKind::Format, ip.string() + ": count does not match the number of samples");
        out.reserve(arr.size());
        for (const auto& e : arr) {
            Sample s;
            s.id = e.at("id").get<std::string>();
            s.label = e.at("label").get<int>();
            s.family = family_from_string(e.at("family").get<std::string>());
            s.video_id = e.at("video_id").get<std::int64_t>();
            s.identity = e.at("identity").get<std::uint64_t>();
            const auto& lm = e.at("landmarks");
            if (!lm.is_array() || lm.size() != 5)
                fail(ErrorKind::Format, "sample '" + s.id + "': expected 5 landmarks");
            std::array<Point, 5> pts{};
            for (std::size_t k = 0; k < 5; ++k) pts[k] = {lm[k].at(0).get<double>(), lm[k].at(1).get<double>()};
            s.landmarks = Landmarks::from_points(pts);

            s.image = read_image_file(dir / e.at("image").get<std::string>());
            s.set_mask(tnsr::read_file(dir / e.at("mask").get<std::string>()));
            if (s.image.shape() != Shape{3, size, size})
                fail(ErrorKind::Format, "sample '" + s.id + "': image shape " + shape_str(s.image.shape()) +
                                            " does not match image_size " + std::to_string(size));
            s.validate();
            out.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::Format, ip.string() + ": " + e.what());
    }
    return out;
}

}  // namespace dfl
