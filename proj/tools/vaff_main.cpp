// SPDX-License-Identifier: Apache-2.0
//
// vaff: command-line front end for the VAFF-Net toolkit.
//   synth      generate a synthetic phantom dataset
//   train      train a model from a config file
//   eval       evaluate a checkpoint over a dataset split
//   predict    run one sample and export probability maps + junctions
//   visualize  overlay predictions on a sample
//   ablate     train/evaluate one run per fusion mode

#include <iostream>

#include <CLI11.hpp>

#include "vaff/train/ablate.hpp"
#include "vaff/viz/visualize.hpp"

namespace {

std::pair<int, int> parse_size(const std::string& size) {
    const auto comma = size.find(',');
    if (comma == std::string::npos)
        throw vaff::Error("config error: --size expects H,W");
    return {std::stoi(size.substr(0, comma)), std::stoi(size.substr(comma + 1))};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"VAFF-Net multi-task retinal structure toolkit"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a phantom dataset");
    int count = 4;
    std::string size = "128,128";
    std::uint64_t seed = 0;
    std::string out_dir = "phantom_data";
    int trees = 2, holdout = 0;
    double faz_radius = 14.0, branch_prob = 0.35;
    synth->add_option("--count", count, "Number of samples");
    synth->add_option("--size", size, "Image size as H,W");
    synth->add_option("--seed", seed, "Base RNG seed");
    synth->add_option("--out", out_dir, "Output dataset root")->required();
    synth->add_option("--trees", trees, "Vessel trees per sample");
    synth->add_option("--faz-radius", faz_radius, "Avascular disk radius (px)");
    synth->add_option("--branch-prob", branch_prob, "Per-step branch probability");
    synth->add_option("--holdout", holdout, "Samples reserved for the test split only");

    // train
    auto* train = app.add_subcommand("train", "Train from a config file");
    std::string config_path, fusion_override, input_override, resume_path;
    train->add_option("--config", config_path, "JSON config file")->required();
    train->add_option("--fusion-mode", fusion_override, "vgm|max|min|avg|sum");
    train->add_option("--input-mode", input_override, "multi|single|triplicate");
    train->add_option("--resume", resume_path, "Checkpoint to resume from");

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    std::string ckpt_path, data_root, split = "test", report_out = "eval_report.txt";
    std::string eval_input_mode;
    eval->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
    eval->add_option("--data", data_root, "Dataset root")->required();
    eval->add_option("--split", split, "Split name (train|test)");
    eval->add_option("--out", report_out, "Report file");
    eval->add_option("--input-mode", eval_input_mode, "Expected input mode (manifest check)");

    // predict
    auto* predict = app.add_subcommand("predict", "Predict one sample");
    std::string p_ckpt, p_sample, p_out;
    predict->add_option("--checkpoint", p_ckpt, "Checkpoint file")->required();
    predict->add_option("--sample", p_sample, "Sample directory")->required();
    predict->add_option("--out", p_out, "Output directory")->required();

    // visualize
    auto* visualize = app.add_subcommand("visualize", "Overlay predictions on a sample");
    std::string v_sample, v_pred, v_out;
    visualize->add_option("--sample", v_sample, "Sample directory")->required();
    visualize->add_option("--pred", v_pred, "Prediction directory (from predict)")->required();
    visualize->add_option("--out", v_out, "Output PNG path")->required();

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "Fusion-mode comparison runs");
    std::string a_config;
    std::vector<std::string> a_modes{"vgm", "max", "min", "avg", "sum"};
    std::vector<std::string> a_inputs;
    std::string a_split = "test", a_out = "ablation_table.txt";
    ablate_cmd->add_option("--config", a_config, "JSON config file")->required();
    ablate_cmd->add_option("--modes", a_modes, "Fusion modes to compare");
    ablate_cmd->add_option("--input-modes", a_inputs, "Input modes to compare");
    ablate_cmd->add_option("--split", a_split, "Evaluation split");
    ablate_cmd->add_option("--out", a_out, "Table output file");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            const auto [h, w] = parse_size(size);
            vaff::PhantomConfig cfg;
            cfg.height = h;
            cfg.width = w;
            cfg.n_trees = trees;
            cfg.faz_radius = faz_radius;
            cfg.branch_prob = branch_prob;
            cfg.rng_seed = seed;
            const auto ids = vaff::synth_dataset(count, cfg, out_dir, holdout);
            std::cout << "wrote " << ids.size() << " samples to " << out_dir << "\n";
        } else if (*train) {
            vaff::TrainConfig cfg = vaff::TrainConfig::from_file(config_path);
            if (!fusion_override.empty())
                cfg.fusion_mode = vaff::fusion_mode_from_string(fusion_override);
            if (!input_override.empty())
                cfg.input_mode = vaff::input_mode_from_string(input_override);
            vaff::Trainer trainer(cfg);
            if (!resume_path.empty()) trainer.resume_from(resume_path);
            const std::string final_ckpt = trainer.train();
            std::cout << "final checkpoint: " << final_ckpt << "\n";
        } else if (*eval) {
            std::optional<vaff::InputMode> expect;
            if (!eval_input_mode.empty()) expect = vaff::input_mode_from_string(eval_input_mode);
            const auto report = vaff::evaluate_checkpoint(ckpt_path, data_root, split, {}, 0.5f,
                                                          expect);
            vaff::write_report(report, report_out);
            std::cout << report.to_text();
            std::cout << "report written to " << report_out << "\n";
        } else if (*predict) {
            vaff::predict_to_dir(p_ckpt, p_sample, p_out);
            std::cout << "predictions written to " << p_out << "\n";
        } else if (*visualize) {
            vaff::visualize_overlay(v_sample, v_pred, v_out);
            std::cout << "overlay written to " << v_out << "\n";
        } else if (*ablate_cmd) {
            vaff::TrainConfig cfg = vaff::TrainConfig::from_file(a_config);
            std::vector<vaff::FusionMode> modes;
            for (const auto& m : a_modes) modes.push_back(vaff::fusion_mode_from_string(m));
            std::vector<vaff::InputMode> inputs;
            for (const auto& m : a_inputs) inputs.push_back(vaff::input_mode_from_string(m));
            const auto table = vaff::ablate(cfg, modes, inputs, a_split);
            std::ofstream out(a_out);
            out << table.to_text();
            std::cout << table.to_text();
            std::cout << "table written to " << a_out << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
