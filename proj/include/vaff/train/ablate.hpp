// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vaff/train/evaluator.hpp"
#include "vaff/train/trainer.hpp"

namespace vaff {

struct AblationRow {
    std::string method;
    std::array<AggregateReport::Stat, 8> stats;
};

/// Comparison table, one row per trained variant; cells are "mean +- std"
/// with the segmentation/detection column structure of the evaluation tables.
struct AblationTable {
    std::vector<AblationRow> rows;

    std::string to_text() const {
        auto cell = [](const AggregateReport::Stat& s) {
            if (!s.mean) return std::string("null");
            char buf[48];
            std::snprintf(buf, sizeof(buf), "%.2f +- %.2f", *s.mean * 100.0,
                          s.stddev ? *s.stddev * 100.0 : 0.0);
            return std::string(buf);
        };
        std::string out = "method\trv_dice\trv_bacc\tfaz_dice\tfaz_bacc"
                          "\tdet_re\tdet_f1\tcls_re\tcls_f1\n";
        for (const auto& r : rows) {
            out += r.method;
            for (const auto& s : r.stats) out += "\t" + cell(s);
            out += "\n";
        }
        return out;
    }
};

/// Trains and evaluates one run per requested fusion mode (and per input mode
/// when several are given). Runs share the base config and seed.
inline AblationTable ablate(const TrainConfig& base, const std::vector<FusionMode>& modes,
                            const std::vector<InputMode>& input_modes = {},
                            const std::string& split = "test") {
    if (modes.empty()) throw Error("config error: ablate needs at least one fusion mode");
    const std::vector<InputMode> inputs =
        input_modes.empty() ? std::vector<InputMode>{base.input_mode} : input_modes;

    AblationTable table;
    for (const InputMode im : inputs)
        for (const FusionMode fm : modes) {
            TrainConfig cfg = base;
            cfg.fusion_mode = fm;
            cfg.input_mode = im;
            std::string label = to_string(fm);
            for (auto& ch : label) ch = char(std::toupper(ch));
            if (inputs.size() > 1) label += std::string("/") + to_string(im);
            cfg.checkpoint_dir = (std::filesystem::path(base.checkpoint_dir) /
                                  (std::string("ablate_") + to_string(fm) + "_" + to_string(im)))
                                     .string();
            Trainer trainer(cfg);
            const std::string ckpt = trainer.train();
            const AggregateReport rep = evaluate_checkpoint(ckpt, cfg.dataset_root, split);
            table.rows.push_back({label, rep.aggregate()});
        }
    return table;
}

} // namespace vaff
