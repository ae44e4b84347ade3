#include <chrono>
#include <fstream>
#include <sstream>

#include "dfl/error.hpp"
#include "dfl/harness.hpp"

namespace dfl {

std::vector<AblationVariant> ablation_variants(const RunConfig& base) {
    auto component = [&](const std::string& name, StreamMode streams, bool cmce, bool lfga, bool mpff) {
        RunConfig c = base;
        c.model.streams = streams;
        c.model.use_cmce = cmce;
        c.model.use_lfga = lfga;
        c.model.use_mpff = mpff;
        return AblationVariant{name, c};
    };
    std::vector<AblationVariant> out{
        component("rgb-only", StreamMode::Rgb, false, false, false),
        component("srm-only", StreamMode::Srm, false, false, false),
        component("two-stream-sum", StreamMode::Both, false, false, false),
        component("+cmce", StreamMode::Both, true, false, false),
        component("+cmce+lfga", StreamMode::Both, true, true, false),
        component("+cmce+lfga+mpff", StreamMode::Both, true, true, true),
    };
    for (ReferenceRegion r : {ReferenceRegion::Nose, ReferenceRegion::Mouth, ReferenceRegion::Eyes, ReferenceRegion::InnerFace}) {
        AblationVariant v = component("sspsl-" + to_string(r), StreamMode::Both, true, true, true);
        v.config.mode = SupervisionMode::Sspsl;
        v.config.region = r;
        out.push_back(std::move(v));
    }
    return out;
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '"') q += '"';
        q += c == '\n' ? ' ' : c;
    }
    return q + "\"";
}

}  // namespace

std::vector<AblationRow> ablate(const std::vector<AblationVariant>& variants, const std::vector<Sample>& train,
                                const std::vector<Sample>& eval, const std::filesystem::path& csv, const LogFn& log) {
    std::vector<AblationRow> rows;
    for (const auto& v : variants) {
        AblationRow row;
        row.name = v.name;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            Trainer t(v.config, train);
            t.run();
            EvalOptions eo;
            eo.threads = v.config.threads;
            eo.loc_accuracy = false;
            const MetricsReport r = evaluate(t.model(), eval, eo);
            row.frame_auc = r.frame_auc;
            row.frame_acc = r.frame_acc;
            row.video_auc = r.video_auc;
            row.status = "ok";
        } catch (const std::exception& e) {
            row.status = std::string("error: ") + e.what();
        }
        row.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (log) {
            std::ostringstream os;
            os << v.name << ": auc " << row.frame_auc << " acc " << row.frame_acc << " video_auc " << row.video_auc << " ("
               << row.status << ", " << row.wall_time << " s)";
            log(os.str());
        }
        rows.push_back(std::move(row));
    }
    if (!csv.empty()) {
        std::ofstream out(csv);
        if (!out) fail(ErrorKind::Io, "cannot open " + csv.string() + " for writing");
        out << "name,frame_auc,frame_acc,video_auc,wall_time,status\n";
        out.precision(10);
        for (const auto& r : rows)
            out << csv_field(r.name) << ',' << r.frame_auc << ',' << r.frame_acc << ',' << r.video_auc << ',' << r.wall_time
                << ',' << csv_field(r.status) << '\n';
        if (!out) fail(ErrorKind::Io, "write failed for " + csv.string());
    }
    return rows;
}

}  // namespace dfl
