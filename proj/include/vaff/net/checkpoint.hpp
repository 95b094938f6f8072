// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstring>
#include <fstream>
#include <map>

#include "vaff/net/vaffnet.hpp"

namespace vaff {

/// Identifies the architecture a parameter blob belongs to; loading rejects
/// any mismatch against the requesting model or configuration.
struct CheckpointManifest {
    int format_version = 1;
    Topology topology = Topology::resnet50;
    int n_ch = 64;
    InputMode input_mode = InputMode::multi_enface;
    int cell_size = 8;
    std::array<InitKind, 3> first_layer_init{InitKind::random, InitKind::random, InitKind::random};

    nlohmann::json to_json() const {
        nlohmann::json inits = nlohmann::json::array();
        for (auto k : first_layer_init) inits.push_back(to_string(k));
        return {{"format_version", format_version}, {"topology", to_string(topology)},
                {"n_ch", n_ch},                     {"input_mode", to_string(input_mode)},
                {"cell_size", cell_size},           {"first_layer_init", inits}};
    }
    static CheckpointManifest from_json(const nlohmann::json& j) {
        CheckpointManifest m;
        m.format_version = j.at("format_version").get<int>();
        m.topology = topology_from_string(j.at("topology").get<std::string>());
        m.n_ch = j.at("n_ch").get<int>();
        m.input_mode = input_mode_from_string(j.at("input_mode").get<std::string>());
        m.cell_size = j.at("cell_size").get<int>();
        const auto& inits = j.at("first_layer_init");
        for (int i = 0; i < 3; ++i)
            m.first_layer_init[std::size_t(i)] =
                init_kind_from_string(inits.at(i).get<std::string>());
        return m;
    }

    bool matches(const VaffNet& net) const {
        const auto& c = net.config();
        return topology == c.topology && n_ch == c.n_ch && input_mode == c.input_mode &&
               cell_size == net.cell_size() && first_layer_init == c.first_layer_init;
    }
    EncoderConfig encoder_config() const {
        EncoderConfig c;
        c.topology = topology;
        c.n_ch = n_ch;
        c.input_mode = input_mode;
        c.first_layer_init = first_layer_init;
        return c;
    }
};

inline CheckpointManifest manifest_for(const VaffNet& net) {
    CheckpointManifest m;
    const auto& c = net.config();
    m.topology = c.topology;
    m.n_ch = c.n_ch;
    m.input_mode = c.input_mode;
    m.cell_size = net.cell_size();
    m.first_layer_init = c.first_layer_init;
    return m;
}

/// Binary container: manifest, named parameter/buffer blobs, and opaque extra
/// sections (optimizer and trainer state live there).
struct Checkpoint {
    CheckpointManifest manifest;
    std::vector<std::pair<std::string, std::vector<float>>> params;
    std::vector<std::pair<std::string, std::vector<float>>> buffers;
    std::map<std::string, std::vector<std::uint8_t>> extra;

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error("io error: cannot write checkpoint " + path);
        out.write("VAFFCKPT", 8);
        write_u64(out, 1); // container version
        write_blob(out, manifest.to_json().dump());
        write_named(out, params);
        write_named(out, buffers);
        write_u64(out, extra.size());
        for (const auto& [name, bytes] : extra) {
            write_blob(out, name);
            write_u64(out, bytes.size());
            out.write(reinterpret_cast<const char*>(bytes.data()),
                      std::streamsize(bytes.size()));
        }
        if (!out) throw Error("io error: checkpoint write failed " + path);
    }

    static Checkpoint load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error("io error: cannot open checkpoint " + path);
        char magic[8];
        in.read(magic, 8);
        if (!in || std::memcmp(magic, "VAFFCKPT", 8) != 0)
            throw Error("incompatible checkpoint: bad magic in " + path);
        if (read_u64(in) != 1) throw Error("incompatible checkpoint: container version");
        Checkpoint c;
        c.manifest = CheckpointManifest::from_json(nlohmann::json::parse(read_blob(in)));
        read_named(in, c.params);
        read_named(in, c.buffers);
        const std::uint64_t n_extra = read_u64(in);
        for (std::uint64_t i = 0; i < n_extra; ++i) {
            const std::string name = read_blob(in);
            std::vector<std::uint8_t> bytes(read_u64(in));
            in.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
            c.extra[name] = std::move(bytes);
        }
        if (!in) throw Error("incompatible checkpoint: truncated file " + path);
        return c;
    }

    nlohmann::json extra_json(const std::string& name) const {
        const auto it = extra.find(name);
        if (it == extra.end()) return nullptr;
        return nlohmann::json::parse(std::string(it->second.begin(), it->second.end()));
    }
    void set_extra_json(const std::string& name, const nlohmann::json& j) {
        const std::string s = j.dump();
        extra[name] = std::vector<std::uint8_t>(s.begin(), s.end());
    }

private:
    static void write_u64(std::ostream& o, std::uint64_t v) {
        o.write(reinterpret_cast<const char*>(&v), 8);
    }
    static std::uint64_t read_u64(std::istream& i) {
        std::uint64_t v = 0;
        i.read(reinterpret_cast<char*>(&v), 8);
        return v;
    }
    static void write_blob(std::ostream& o, const std::string& s) {
        write_u64(o, s.size());
        o.write(s.data(), std::streamsize(s.size()));
    }
    static std::string read_blob(std::istream& i) {
        std::string s(read_u64(i), '\0');
        i.read(s.data(), std::streamsize(s.size()));
        return s;
    }
    static void write_named(std::ostream& o,
                            const std::vector<std::pair<std::string, std::vector<float>>>& v) {
        write_u64(o, v.size());
        for (const auto& [name, data] : v) {
            write_blob(o, name);
            write_u64(o, data.size());
            o.write(reinterpret_cast<const char*>(data.data()),
                    std::streamsize(data.size() * sizeof(float)));
        }
    }
    static void read_named(std::istream& i,
                           std::vector<std::pair<std::string, std::vector<float>>>& v) {
        const std::uint64_t n = read_u64(i);
        for (std::uint64_t k = 0; k < n; ++k) {
            std::string name = read_blob(i);
            std::vector<float> data(read_u64(i));
            i.read(reinterpret_cast<char*>(data.data()),
                   std::streamsize(data.size() * sizeof(float)));
            v.emplace_back(std::move(name), std::move(data));
        }
    }
};

inline Checkpoint snapshot(VaffNet& net) {
    Checkpoint c;
    c.manifest = manifest_for(net);
    for (auto& p : net.named_params()) c.params.emplace_back(p.name, p.tensor.values());
    for (auto& b : net.named_buffers()) c.buffers.emplace_back(b.name, *b.data);
    return c;
}

inline void restore(VaffNet& net, const Checkpoint& c) {
    if (!c.manifest.matches(net))
        throw Error("incompatible checkpoint: manifest does not match the model configuration");
    auto params = net.named_params();
    if (params.size() != c.params.size())
        throw Error("incompatible checkpoint: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name != c.params[i].first ||
            params[i].tensor.values().size() != c.params[i].second.size())
            throw Error("incompatible checkpoint: parameter '" + c.params[i].first +
                        "' does not match the model");
        params[i].tensor.values() = c.params[i].second;
    }
    auto buffers = net.named_buffers();
    if (buffers.size() != c.buffers.size())
        throw Error("incompatible checkpoint: buffer count mismatch");
    for (std::size_t i = 0; i < buffers.size(); ++i) {
        if (buffers[i].name != c.buffers[i].first ||
            buffers[i].data->size() != c.buffers[i].second.size())
            throw Error("incompatible checkpoint: buffer '" + c.buffers[i].first +
                        "' does not match the model");
        *buffers[i].data = c.buffers[i].second;
    }
}

/// Builds a model with the checkpoint's architecture and loads its weights.
inline VaffNet net_from_checkpoint(const Checkpoint& c) {
    VaffNet net(c.manifest.encoder_config(), c.manifest.cell_size, /*init_seed=*/0);
    restore(net, c);
    return net;
}

} // namespace vaff
