#include <fstream>
#include <sstream>

#include "dfl/error.hpp"
#include "dfl/harness.hpp"
#include "dfl/tnsr.hpp"
#include "json.hpp"

namespace dfl {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Appends one encoded tensor to `blob` and returns its manifest entry.
json append(std::vector<std::uint8_t>& blob, const std::string& name, const Tensor& t) {
    const auto bytes = tnsr::encode(t);
    json e{{"name", name}, {"shape", t.shape()}, {"offset", blob.size()}, {"nbytes", bytes.size()}};
    blob.insert(blob.end(), bytes.begin(), bytes.end());
    return e;
}

Tensor extract(const std::vector<std::uint8_t>& blob, const json& e, const fs::path& file) {
    const auto off = e.at("offset").get<std::size_t>();
    const auto len = e.at("nbytes").get<std::size_t>();
    const auto name = e.at("name").get<std::string>();
    if (off > blob.size() || len > blob.size() - off)
        fail(ErrorKind::Format, file.string() + ": entry '" + name + "' lies outside the file");
    std::size_t used = 0;
    Tensor t = tnsr::decode(blob.data() + off, len, file.string() + " [" + name + "]", &used);
    if (used != len) fail(ErrorKind::Format, file.string() + ": entry '" + name + "' has trailing bytes");
    if (t.shape() != e.at("shape").get<Shape>())
        fail(ErrorKind::Format, file.string() + ": entry '" + name + "' shape differs from the manifest");
    return t;
}

}  // namespace

void save_checkpoint(const TrainState& state, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorKind::Io, "cannot create checkpoint directory " + dir.string() + ": " + ec.message());

    std::vector<std::uint8_t> params, moments;
    json pj = json::array(), oj = json::array();
    for (const auto& [name, p] : state.params) {
        pj.push_back(append(params, name, p.value));
        oj.push_back(append(moments, name + "#m", p.m));
        oj.push_back(append(moments, name + "#v", p.v));
    }
    json hist = json::array();
    for (const auto& r : state.history)
        hist.push_back({{"step", r.step}, {"epoch", r.epoch}, {"lr", r.lr}, {"loss", r.loss}, {"loss_cls", r.loss_cls},
                        {"loss_loc", r.loss_loc}, {"n_real", r.n_real}, {"n_fake", r.n_fake}});
    const json manifest{
        {"format_version", kCheckpointVersion},
        {"config", json::parse(config_to_json(state.config))},
        {"epoch", state.epoch},
        {"batch_in_epoch", state.batch_in_epoch},
        {"step", state.params.step()},
        {"lr", lr_at_epoch(state.config, state.epoch)},
        {"rng_state", state.rng_state},
        {"anchors",
         {{"real", state.anchors.real},
          {"fake", state.anchors.fake},
          {"real_init", state.anchors.real_init},
          {"fake_init", state.anchors.fake_init},
          {"momentum", state.anchors.momentum}}},
        {"history", std::move(hist)},
        {"params", {{"file", "params.tnsr"}, {"entries", std::move(pj)}}},
        {"optimizer", {{"file", "optimizer.tnsr"}, {"entries", std::move(oj)}}},
    };
    tnsr::write_bytes(dir / "params.tnsr", params);
    tnsr::write_bytes(dir / "optimizer.tnsr", moments);
    const std::string text = manifest.dump(1) + "\n";
    tnsr::write_bytes(dir / "manifest.json", std::vector<std::uint8_t>(text.begin(), text.end()));
}

TrainState load_checkpoint(const fs::path& dir) {
    const fs::path mp = dir / "manifest.json";
    const auto raw = tnsr::read_bytes(mp);
    json m;
    try {
        m = json::parse(raw.begin(), raw.end());
    } catch (const json::exception& e) {
        fail(ErrorKind::Format, mp.string() + ": " + e.what());
    }
    TrainState st;
    try {
        const int version = m.at("format_version").get<int>();
        if (version != kCheckpointVersion)
            fail(ErrorKind::Version, mp.string() + ": checkpoint format_version " + std::to_string(version) +
                                         " cannot be loaded by this build (supports " + std::to_string(kCheckpointVersion) +
                                         "); re-export the checkpoint with a matching version");
        st.config = config_from_json(m.at("config").dump());
        st.epoch = m.at("epoch").get<int>();
        st.batch_in_epoch = m.at("batch_in_epoch").get<std::size_t>();
        st.rng_state = m.at("rng_state").get<std::string>();
        const json& a = m.at("anchors");
        st.anchors.real = a.at("real").get<std::vector<double>>();
        st.anchors.fake = a.at("fake").get<std::vector<double>>();
        st.anchors.real_init = a.at("real_init").get<bool>();
        st.anchors.fake_init = a.at("fake_init").get<bool>();
        st.anchors.momentum = a.at("momentum").get<double>();
        for (const auto& r : m.at("history")) {
            StepRecord s;
            s.step = r.at("step").get<std::uint64_t>();
            s.epoch = r.at("epoch").get<int>();
            s.lr = r.at("lr").get<double>();
            s.loss = r.at("loss").get<double>();
            s.loss_cls = r.at("loss_cls").get<double>();
            s.loss_loc = r.at("loss_loc").get<double>();
            s.n_real = r.at("n_real").get<std::size_t>();
            s.n_fake = r.at("n_fake").get<std::size_t>();
            st.history.push_back(s);
        }

        const fs::path pf = dir / m.at("params").at("file").get<std::string>();
        const fs::path of = dir / m.at("optimizer").at("file").get<std::string>();
        const auto pblob = tnsr::read_bytes(pf);
        const auto oblob = tnsr::read_bytes(of);
        for (const auto& e : m.at("params").at("entries")) st.params.add(e.at("name").get<std::string>(), extract(pblob, e, pf));
        for (const auto& e : m.at("optimizer").at("entries")) {
            const auto key = e.at("name").get<std::string>();
            const auto hash = key.rfind('#');
            if (hash == std::string::npos) fail(ErrorKind::Format, of.string() + ": bad optimizer entry '" + key + "'");
            const std::string name = key.substr(0, hash), which = key.substr(hash + 1);
            if (!st.params.contains(name)) fail(ErrorKind::Format, of.string() + ": moments for unknown parameter '" + name + "'");
            Param& p = st.params.at(name);
            Tensor t = extract(oblob, e, of);
            if (t.shape() != p.value.shape()) fail(ErrorKind::Format, of.string() + ": moment shape mismatch for '" + name + "'");
            if (which == "m")
                p.m = std::move(t);
            else if (which == "v")
                p.v = std::move(t);
            else
                fail(ErrorKind::Format, of.string() + ": bad optimizer entry '" + key + "'");
        }
        st.params.set_step(m.at("step").get<std::uint64_t>());
    } catch (const json::exception& e) {
        fail(ErrorKind::Format, mp.string() + ": " + e.what());
    }
    TwoStreamModel check(st.config.model, st.params);
    (void)check;
    return st;
}

}  // namespace dfl
