// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>

#include "vaff/codec/codec.hpp"
#include "vaff/data/augment.hpp"
#include "vaff/data/dataset.hpp"
#include "vaff/loss/losses.hpp"
#include "vaff/net/checkpoint.hpp"
#include "vaff/train/adam.hpp"
#include "vaff/train/schedule.hpp"

namespace vaff {

inline constexpr const char* kCodeVersion = "vaff-net 1.0.0";

struct TrainConfig {
    int epochs = 1000;
    int batch_size = 4;
    double lr_initial = 5e-5;
    AdamConfig adam;
    FusionMode fusion_mode = FusionMode::VGM;
    InputMode input_mode = InputMode::multi_enface;
    Topology topology = Topology::resnet50;
    int n_ch = 64;
    int cell_size = 8;
    float heatmap_sigma = 2.5f;
    GridLossParams grid_loss_params;
    double dwa_temperature = 2.0;
    std::uint64_t seed = 0;
    std::string dataset_root;
    std::string checkpoint_dir = "checkpoints";
    int checkpoint_every = 50;
    bool augment_enabled = true;
    AugmentParams augment;

    nlohmann::json to_json() const {
        return {{"epochs", epochs},
                {"batch_size", batch_size},
                {"lr_initial", lr_initial},
                {"adam", {{"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}}},
                {"fusion_mode", to_string(fusion_mode)},
                {"input_mode", to_string(input_mode)},
                {"topology", to_string(topology)},
                {"n_ch", n_ch},
                {"cell_size", cell_size},
                {"heatmap_sigma", heatmap_sigma},
                {"grid_loss",
                 {{"lambda_a", grid_loss_params.lambda_a},
                  {"lambda_b", grid_loss_params.lambda_b},
                  {"class_term_all_cells", grid_loss_params.class_term_all_cells}}},
                {"dwa_temperature", dwa_temperature},
                {"seed", seed},
                {"dataset_root", dataset_root},
                {"checkpoint_dir", checkpoint_dir},
                {"checkpoint_every", checkpoint_every},
                {"augment",
                 {{"enabled", augment_enabled},
                  {"hflip_prob", augment.hflip_prob},
                  {"vflip_prob", augment.vflip_prob},
                  {"rotation_range_deg", {augment.rotation_range_deg[0], augment.rotation_range_deg[1]}},
                  {"gamma_range", {augment.gamma_range[0], augment.gamma_range[1]}}}}};
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
        };
        get("epochs", c.epochs);
        get("batch_size", c.batch_size);
        get("lr_initial", c.lr_initial);
        if (j.contains("adam")) {
            c.adam.beta1 = j["adam"].value("beta1", c.adam.beta1);
            c.adam.beta2 = j["adam"].value("beta2", c.adam.beta2);
            c.adam.eps = j["adam"].value("eps", c.adam.eps);
        }
        if (j.contains("fusion_mode"))
            c.fusion_mode = fusion_mode_from_string(j["fusion_mode"].get<std::string>());
        if (j.contains("input_mode"))
            c.input_mode = input_mode_from_string(j["input_mode"].get<std::string>());
        if (j.contains("topology"))
            c.topology = topology_from_string(j["topology"].get<std::string>());
        get("n_ch", c.n_ch);
        get("cell_size", c.cell_size);
        get("heatmap_sigma", c.heatmap_sigma);
        if (j.contains("grid_loss")) {
            c.grid_loss_params.lambda_a = j["grid_loss"].value("lambda_a", 5.0);
            c.grid_loss_params.lambda_b = j["grid_loss"].value("lambda_b", 1.0);
            c.grid_loss_params.class_term_all_cells =
                j["grid_loss"].value("class_term_all_cells", true);
        }
        get("dwa_temperature", c.dwa_temperature);
        get("seed", c.seed);
        get("dataset_root", c.dataset_root);
        get("checkpoint_dir", c.checkpoint_dir);
        get("checkpoint_every", c.checkpoint_every);
        if (j.contains("augment")) {
            const auto& a = j["augment"];
            c.augment_enabled = a.value("enabled", true);
            c.augment.hflip_prob = a.value("hflip_prob", 0.5);
            c.augment.vflip_prob = a.value("vflip_prob", 0.5);
            if (a.contains("rotation_range_deg")) {
                c.augment.rotation_range_deg[0] = a["rotation_range_deg"].at(0).get<double>();
                c.augment.rotation_range_deg[1] = a["rotation_range_deg"].at(1).get<double>();
            }
            if (a.contains("gamma_range")) {
                c.augment.gamma_range[0] = a["gamma_range"].at(0).get<double>();
                c.augment.gamma_range[1] = a["gamma_range"].at(1).get<double>();
            }
        }
        return c;
    }

    /// Reads the config file and applies the VAFF_SEED environment override.
    static TrainConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error("config error: cannot open " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const std::exception& e) {
            throw Error("config error: bad config " + path + ": " + e.what());
        }
        TrainConfig c = from_json(j);
        if (const char* env = std::getenv("VAFF_SEED")) c.seed = std::strtoull(env, nullptr, 10);
        return c;
    }

    EncoderConfig encoder_config() const {
        EncoderConfig e;
        e.topology = topology;
        e.n_ch = n_ch;
        e.input_mode = input_mode;
        if (input_mode == InputMode::triplicate)
            e.first_layer_init = EncoderConfig::triplicate_inits();
        return e;
    }
};

/// One line of the per-epoch training log.
struct EpochRecord {
    int epoch = 0;
    double l_rv = 0, l_faz = 0, l_rvj_heatmap = 0, l_rvj_grid = 0;
    std::array<double, 3> lambdas{1, 1, 1};
    double lr = 0;

    nlohmann::json to_json() const {
        return {{"epoch", epoch},
                {"l_rv", l_rv},
                {"l_faz", l_faz},
                {"l_rvj_heatmap", l_rvj_heatmap},
                {"l_rvj_grid", l_rvj_grid},
                {"lambda", {lambdas[0], lambdas[1], lambdas[2]}},
                {"lr", lr}};
    }
    static EpochRecord from_json(const nlohmann::json& j) {
        EpochRecord r;
        r.epoch = j.at("epoch").get<int>();
        r.l_rv = j.at("l_rv").get<double>();
        r.l_faz = j.at("l_faz").get<double>();
        r.l_rvj_heatmap = j.at("l_rvj_heatmap").get<double>();
        r.l_rvj_grid = j.at("l_rvj_grid").get<double>();
        for (int i = 0; i < 3; ++i) r.lambdas[std::size_t(i)] = j.at("lambda").at(i).get<double>();
        r.lr = j.at("lr").get<double>();
        return r;
    }
};

/// Everything needed to reproduce a run bit-for-bit on the same platform.
struct RunManifest {
    nlohmann::json config_snapshot;
    std::string code_version = kCodeVersion;
    std::uint64_t seed = 0;
    std::string log_path;

    nlohmann::json to_json() const {
        return {{"config", config_snapshot},
                {"code_version", code_version},
                {"seed", seed},
                {"log", log_path}};
    }
};

class Trainer {
public:
    explicit Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.epochs < 1) throw Error("config error: epochs must be >= 1");
        if (cfg_.batch_size < 1) throw Error("config error: batch_size must be >= 1");
        samples_ = load_split(cfg_.dataset_root, "train");
        if (samples_.empty()) throw Error("no data: empty training split");
        const int h = samples_[0].triplet.height(), w = samples_[0].triplet.width();
        for (const auto& s : samples_)
            if (s.triplet.height() != h || s.triplet.width() != w)
                throw Error("geometry error: training samples must share one image size");
        net_ = std::make_unique<VaffNet>(cfg_.encoder_config(), cfg_.cell_size, cfg_.seed);
        adam_ = Adam(net_->named_params(), cfg_.adam);
        dwa_ = DwaState::make(3, cfg_.dwa_temperature);
    }

    VaffNet& net() { return *net_; }
    const std::vector<EpochRecord>& records() const { return records_; }
    std::string log_path() const {
        return (std::filesystem::path(cfg_.checkpoint_dir) / "train_log.jsonl").string();
    }

    void resume_from(const std::string& checkpoint_path) {
        Checkpoint c = Checkpoint::load(checkpoint_path);
        restore(*net_, c);
        const nlohmann::json t = c.extra_json("trainer");
        if (t.is_null()) throw Error("incompatible checkpoint: missing trainer state");
        start_epoch_ = t.at("next_epoch").get<int>();
        dwa_.temperature = t.at("dwa").at("temperature").get<double>();
        dwa_.weights = t.at("dwa").at("weights").get<std::vector<double>>();
        dwa_.history = t.at("dwa").at("history").get<std::vector<std::vector<double>>>();
        const auto it = c.extra.find("adam");
        if (it == c.extra.end()) throw Error("incompatible checkpoint: missing optimizer state");
        std::vector<float> blob(it->second.size() / sizeof(float));
        std::memcpy(blob.data(), it->second.data(), it->second.size());
        adam_.deserialize(blob);
    }

    /// Runs the loop and returns the final checkpoint path.
    std::string train() {
        namespace fs = std::filesystem;
        fs::create_directories(cfg_.checkpoint_dir);
        write_run_manifest();
        std::ofstream log(log_path(), start_epoch_ == 0 ? std::ios::trunc : std::ios::app);

        std::string last_good = last_checkpoint_path_;
        const Rng root(cfg_.seed);
        for (int epoch = start_epoch_; epoch < cfg_.epochs; ++epoch) {
            const double lr = cosine_lr(cfg_.lr_initial, epoch, cfg_.epochs);
            EpochRecord rec;
            rec.epoch = epoch;
            rec.lambdas = {dwa_.weights[0], dwa_.weights[1], dwa_.weights[2]};
            rec.lr = lr;

            std::vector<int> order(samples_.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
            Rng shuffle_rng = root.derive(0x5f13, std::uint64_t(epoch));
            for (std::size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[std::size_t(shuffle_rng.uniform_int(0, std::int64_t(i) - 1))]);

            double acc_rv = 0, acc_faz = 0, acc_hm = 0, acc_grid = 0;
            for (std::size_t pos = 0; pos < order.size(); pos += std::size_t(cfg_.batch_size)) {
                const std::size_t bend = std::min(order.size(), pos + std::size_t(cfg_.batch_size));
                std::vector<Sample> batch;
                for (std::size_t i = pos; i < bend; ++i) {
                    const Sample& s = samples_[std::size_t(order[i])];
                    if (cfg_.augment_enabled) {
                        Rng arng = root.derive(0xa2b6, std::uint64_t(epoch),
                                               std::uint64_t(order[i]));
                        batch.push_back(augment(s, cfg_.augment, arng));
                    } else {
                        batch.push_back(s);
                    }
                }
                TaskLossVector batch_losses = train_step(batch, lr);
                const double f = double(batch.size());
                acc_rv += batch_losses.l_rv * f;
                acc_faz += batch_losses.l_faz * f;
                acc_hm += batch_losses.l_rvj_heatmap * f;
                acc_grid += batch_losses.l_rvj_grid * f;
            }
            const double n = double(samples_.size());
            rec.l_rv = acc_rv / n;
            rec.l_faz = acc_faz / n;
            rec.l_rvj_heatmap = acc_hm / n;
            rec.l_rvj_grid = acc_grid / n;
            records_.push_back(rec);
            log << rec.to_json().dump() << "\n" << std::flush;

            TaskLossVector mean{rec.l_rv, rec.l_faz, rec.l_rvj_heatmap, rec.l_rvj_grid};
            const auto tasks = mean.tasks();
            dwa_ = dwa_update(std::move(dwa_), {tasks[0], tasks[1], tasks[2]});

            if (cfg_.checkpoint_every > 0 && (epoch + 1) % cfg_.checkpoint_every == 0 &&
                epoch + 1 < cfg_.epochs) {
                char buf[64];
                std::snprintf(buf, sizeof(buf), "ckpt_epoch_%05d.vaff", epoch + 1);
                last_good = save_checkpoint((fs::path(cfg_.checkpoint_dir) / buf).string(),
                                            epoch + 1);
            }
        }
        last_good = save_checkpoint((fs::path(cfg_.checkpoint_dir) / "final.vaff").string(),
                                    cfg_.epochs);
        return last_good;
    }

    std::string save_checkpoint(const std::string& path, int next_epoch) {
        Checkpoint c = snapshot(*net_);
        const std::vector<float> adam_blob = adam_.serialize();
        std::vector<std::uint8_t> bytes(adam_blob.size() * sizeof(float));
        std::memcpy(bytes.data(), adam_blob.data(), bytes.size());
        c.extra["adam"] = std::move(bytes);
        c.set_extra_json("trainer",
                         {{"next_epoch", next_epoch},
                          {"dwa",
                           {{"temperature", dwa_.temperature},
                            {"weights", dwa_.weights},
                            {"history", dwa_.history}}},
                          {"config", cfg_.to_json()}});
        c.save(path);
        last_checkpoint_path_ = path;
        return path;
    }

private:
    TaskLossVector train_step(const std::vector<Sample>& batch, double lr) {
        const int n = int(batch.size());
        const int h = batch[0].triplet.height(), w = batch[0].triplet.width();
        auto batch_images = [&](auto&& pick) {
            std::vector<float> v;
            v.reserve(std::size_t(n) * h * w);
            for (const auto& s : batch) {
                const FloatImage& img = pick(s);
                v.insert(v.end(), img.pixels().begin(), img.pixels().end());
            }
            return Tensor::from(std::move(v), {n, 1, h, w});
        };
        const Tensor ivc = batch_images([](const Sample& s) -> const FloatImage& { return s.triplet.ivc; });
        const Tensor svc = batch_images([](const Sample& s) -> const FloatImage& { return s.triplet.svc; });
        const Tensor dvc = batch_images([](const Sample& s) -> const FloatImage& { return s.triplet.dvc; });

        auto batch_masks = [&](auto&& pick) {
            std::vector<float> v;
            v.reserve(std::size_t(n) * h * w);
            for (const auto& s : batch) {
                const Mask& m = pick(s);
                for (auto b : m.pixels()) v.push_back(float(b));
            }
            return Tensor::from(std::move(v), {n, 1, h, w});
        };
        const Tensor rv_target =
            batch_masks([](const Sample& s) -> const Mask& { return s.annotations.vessel_mask; });
        const Tensor faz_target =
            batch_masks([](const Sample& s) -> const Mask& { return s.annotations.faz_mask; });

        std::vector<float> heat_v;
        std::vector<float> grid_v;
        int s_cells = 0;
        for (const auto& s : batch) {
            const Heatmap hm = encode_heatmap(s.annotations.junctions, h, w, cfg_.heatmap_sigma);
            heat_v.insert(heat_v.end(), hm.values.pixels().begin(), hm.values.pixels().end());
            const GridTarget g = encode_grid(s.annotations.junctions, h, w, cfg_.cell_size);
            s_cells = g.s;
            // HWC cells -> CHW planes to match the grid branch activation layout
            for (int ch = 0; ch < 4; ++ch)
                for (int r = 0; r < g.s; ++r)
                    for (int col = 0; col < g.s; ++col) grid_v.push_back(g.at(r, col, ch));
        }
        const Tensor heat_target = Tensor::from(std::move(heat_v), {n, 1, h, w});
        const Tensor grid_target = Tensor::from(std::move(grid_v), {n, 4, s_cells, s_cells});

        BatchOutput out = net_->forward_batch(ivc, svc, dvc, /*training=*/true, cfg_.fusion_mode);

        Tensor l_rv = bce_loss_op(out.rv, rv_target);
        Tensor l_faz = bce_loss_op(out.faz, faz_target);
        Tensor l_hm = mse_loss_op(out.heatmap, heat_target);
        Tensor l_grid = grid_loss_op(out.grid, grid_target, cfg_.grid_loss_params);

        TaskLossVector v{l_rv.item(), l_faz.item(), l_hm.item(), l_grid.item()};
        for (double x : {v.l_rv, v.l_faz, v.l_rvj_heatmap, v.l_rvj_grid})
            if (!std::isfinite(x))
                throw Error("numeric divergence: non-finite loss at training step (last good checkpoint: " +
                            (last_checkpoint_path_.empty() ? std::string("<none>") : last_checkpoint_path_) + ")");

        Tensor total = add(add(scale(l_rv, float(dwa_.weights[0])), scale(l_faz, float(dwa_.weights[1]))),
                           scale(add(l_hm, l_grid), float(dwa_.weights[2])));
        net_->zero_grad();
        total.backward();
        adam_.step(lr);
        return v;
    }

    void write_run_manifest() {
        RunManifest m;
        m.config_snapshot = cfg_.to_json();
        m.seed = cfg_.seed;
        m.log_path = log_path();
        std::ofstream out(std::filesystem::path(cfg_.checkpoint_dir) / "run_manifest.json");
        out << m.to_json().dump(2) << "\n";
    }

    TrainConfig cfg_;
    std::vector<Sample> samples_;
    std::unique_ptr<VaffNet> net_;
    Adam adam_;
    DwaState dwa_;
    std::vector<EpochRecord> records_;
    std::string last_checkpoint_path_;
    int start_epoch_ = 0;
};

} // namespace vaff
