// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>

#include "vaff/data/phantom.hpp"
#include "vaff/data/types.hpp"
#include "vaff/png_io.hpp"

namespace vaff {

namespace fs = std::filesystem;

/// Loads one sample directory: ivc/svc/dvc images normalized to [0,1],
/// masks binarized at 128, junction annotations validated against the frame.
inline Sample load_sample(const fs::path& dir) {
    static const char* required[] = {"ivc.png", "svc.png", "dvc.png",
                                     "vessel.png", "faz.png", "junctions.json"};
    for (const char* f : required)
        if (!fs::exists(dir / f))
            throw Error(std::string("incomplete sample: missing ") + f + " in " + dir.string());

    const auto ivc = read_png_gray8((dir / "ivc.png").string());
    const auto svc = read_png_gray8((dir / "svc.png").string());
    const auto dvc = read_png_gray8((dir / "dvc.png").string());
    const auto vessel_raw = read_png_gray8((dir / "vessel.png").string());
    const auto faz_raw = read_png_gray8((dir / "faz.png").string());

    for (const auto* img : {&svc, &dvc, &vessel_raw, &faz_raw})
        if (!img->same_shape(ivc))
            throw Error("geometry error: layer/mask dimensions differ in " + dir.string());

    auto binarize = [](const Image<std::uint8_t>& raw) {
        Mask m(raw.height(), raw.width());
        for (std::size_t i = 0; i < raw.pixels().size(); ++i)
            m.pixels()[i] = raw.pixels()[i] >= 128 ? 1 : 0;
        return m;
    };

    Sample s;
    s.id = dir.filename().string();
    s.triplet.ivc = normalize(ivc);
    s.triplet.svc = normalize(svc);
    s.triplet.dvc = normalize(dvc);
    s.annotations.vessel_mask = binarize(vessel_raw);
    s.annotations.faz_mask = binarize(faz_raw);

    std::ifstream jf(dir / "junctions.json");
    nlohmann::json doc;
    try {
        jf >> doc;
    } catch (const std::exception& e) {
        throw Error("annotation error: bad junctions.json in " + dir.string() + ": " + e.what());
    }
    s.annotations.junctions = junctions_from_json(doc);
    for (const auto& j : s.annotations.junctions)
        if (j.x < 0 || j.y < 0 || j.x >= ivc.width() || j.y >= ivc.height())
            throw Error("annotation error: junction out of bounds in " + dir.string());
    for (std::size_t i = 0; i < s.annotations.junctions.size(); ++i)
        for (std::size_t k = i + 1; k < s.annotations.junctions.size(); ++k)
            if (s.annotations.junctions[i].x == s.annotations.junctions[k].x &&
                s.annotations.junctions[i].y == s.annotations.junctions[k].y)
                throw Error("annotation error: duplicate junction coordinates in " + dir.string());
    return s;
}

inline Image<std::uint8_t> to_gray8(const FloatImage& img) {
    Image<std::uint8_t> out(img.height(), img.width());
    for (std::size_t i = 0; i < img.pixels().size(); ++i)
        out.pixels()[i] =
            std::uint8_t(std::lround(std::clamp(img.pixels()[i], 0.0f, 1.0f) * 255.0f));
    return out;
}

inline void save_sample(const fs::path& dir, const Sample& s) {
    fs::create_directories(dir);
    write_png_gray8((dir / "ivc.png").string(), to_gray8(s.triplet.ivc));
    write_png_gray8((dir / "svc.png").string(), to_gray8(s.triplet.svc));
    write_png_gray8((dir / "dvc.png").string(), to_gray8(s.triplet.dvc));
    auto mask_to_gray = [](const Mask& m) {
        Image<std::uint8_t> out(m.height(), m.width());
        for (std::size_t i = 0; i < m.pixels().size(); ++i)
            out.pixels()[i] = m.pixels()[i] ? 255 : 0;
        return out;
    };
    write_png_gray8((dir / "vessel.png").string(), mask_to_gray(s.annotations.vessel_mask));
    write_png_gray8((dir / "faz.png").string(), mask_to_gray(s.annotations.faz_mask));
    std::ofstream jf(dir / "junctions.json");
    jf << junctions_to_json(s.annotations.junctions).dump(2) << "\n";
}

inline std::vector<std::string> read_split(const fs::path& root, const std::string& split) {
    const fs::path file = root / (split + ".txt");
    std::ifstream in(file);
    if (!in) throw Error("no data: missing split file " + file.string());
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (!line.empty()) ids.push_back(line);
    }
    return ids;
}

inline void write_split(const fs::path& root, const std::string& split,
                        const std::vector<std::string>& ids) {
    std::ofstream out(root / (split + ".txt"));
    for (const auto& id : ids) out << id << "\n";
}

inline std::vector<Sample> load_split(const fs::path& root, const std::string& split) {
    std::vector<Sample> samples;
    for (const auto& id : read_split(root, split)) samples.push_back(load_sample(root / id));
    return samples;
}

/// Writes `count` phantom samples in the dataset layout plus split files.
/// The last `holdout` samples go to test only; with holdout 0 both splits
/// list every sample (the desk-scale overfit workflow).
inline std::vector<std::string> synth_dataset(int count, const PhantomConfig& base_cfg,
                                              const fs::path& out_root, int holdout = 0) {
    if (count < 1) throw Error("generation error: count must be >= 1");
    if (holdout < 0 || holdout >= count) holdout = 0;
    fs::create_directories(out_root);
    std::vector<std::string> ids;
    const Rng seeder(base_cfg.rng_seed);
    for (int i = 0; i < count; ++i) {
        PhantomConfig cfg = base_cfg;
        cfg.rng_seed = seeder.derive(std::uint64_t(i), 0x5eed).seed();
        Sample s = generate_phantom(cfg);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "phantom_%04d", i);
        s.id = buf;
        save_sample(out_root / s.id, s);
        ids.push_back(s.id);
    }
    std::vector<std::string> train_ids(ids.begin(), ids.end() - holdout);
    std::vector<std::string> test_ids =
        holdout > 0 ? std::vector<std::string>(ids.end() - holdout, ids.end()) : ids;
    write_split(out_root, "train", train_ids);
    write_split(out_root, "test", test_ids);
    return ids;
}

} // namespace vaff
