// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <optional>

#include "vaff/data/dataset.hpp"
#include "vaff/metrics/metrics.hpp"
#include "vaff/net/checkpoint.hpp"

namespace vaff {

/// Evaluates a checkpoint over a dataset split; per-sample rows plus
/// mean +- std aggregate, deterministic.
inline AggregateReport evaluate_checkpoint(const std::string& checkpoint_path,
                                           const fs::path& dataset_root, const std::string& split,
                                           const DecodeParams& decode = {},
                                           float seg_threshold = 0.5f,
                                           std::optional<InputMode> expect_input_mode = {}) {
    const Checkpoint c = Checkpoint::load(checkpoint_path);
    if (expect_input_mode && c.manifest.input_mode != *expect_input_mode)
        throw Error("incompatible checkpoint: input mode does not match the request");
    VaffNet net = net_from_checkpoint(c);
    AggregateReport report;
    for (const auto& id : read_split(dataset_root, split)) {
        const Sample s = load_sample(dataset_root / id);
        const NetworkOutput out = net.run(s.triplet);
        report.rows.emplace_back(id, evaluate_sample(out, s.annotations, decode, seg_threshold));
    }
    return report;
}

inline AggregateReport evaluate_net(VaffNet& net, const std::vector<Sample>& samples,
                                    const DecodeParams& decode = {}, float seg_threshold = 0.5f) {
    AggregateReport report;
    for (const auto& s : samples) {
        const NetworkOutput out = net.run(s.triplet);
        report.rows.emplace_back(s.id, evaluate_sample(out, s.annotations, decode, seg_threshold));
    }
    return report;
}

inline void write_report(const AggregateReport& report, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("io error: cannot write report " + path.string());
    out << report.to_text();
}

/// Runs one sample directory through a checkpoint and writes probability maps
/// (8-bit) plus the decoded junction list.
inline void predict_to_dir(const std::string& checkpoint_path, const fs::path& sample_dir,
                           const fs::path& out_dir, const DecodeParams& decode = {}) {
    VaffNet net = net_from_checkpoint(Checkpoint::load(checkpoint_path));
    for (const char* f : {"ivc.png", "svc.png", "dvc.png"})
        if (!fs::exists(sample_dir / f))
            throw Error(std::string("incomplete sample: missing ") + f + " in " +
                        sample_dir.string());
    EnfaceTriplet triplet;
    triplet.ivc = normalize(read_png_gray8((sample_dir / "ivc.png").string()));
    triplet.svc = normalize(read_png_gray8((sample_dir / "svc.png").string()));
    triplet.dvc = normalize(read_png_gray8((sample_dir / "dvc.png").string()));
    if (!triplet.consistent()) throw Error("geometry error: layer dimensions differ");

    const NetworkOutput out = net.run(triplet);
    fs::create_directories(out_dir);
    write_png_gray8((out_dir / "rv_prob.png").string(), to_gray8(out.rv_prob));
    write_png_gray8((out_dir / "faz_prob.png").string(), to_gray8(out.faz_prob));
    write_png_gray8((out_dir / "heatmap.png").string(), to_gray8(out.rvj_heatmap));
    const Heatmap hm{out.rvj_heatmap, 2.5f};
    const auto junctions = decode_junctions(hm, out.rvj_grid, decode);
    std::ofstream jf(out_dir / "junctions.json");
    jf << junctions_to_json(junctions).dump(2) << "\n";
}

} // namespace vaff
