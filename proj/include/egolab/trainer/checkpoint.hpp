#pragma once

// Checkpoint container: magic, little-endian u64 header length, JSON header
// (version, config, epoch, RNG state, parameter manifest), then the payload
// of parameter, first-moment and second-moment arrays in manifest order.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "egolab/trainer/train.hpp"

namespace egolab::train {

inline constexpr int kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'E', 'G', 'O', 'L', 'A', 'B', 'C', 'K'};

struct Checkpoint {
    TrainConfig config;
    Model model;
    OptimizerState depth_opt, pose_opt;
    std::size_t epoch = 0;
    std::string rng_state;
    std::vector<EpochLog> history;

    static Checkpoint capture(const Trainer& t) {
        return {t.config(), t.model().deep_copy(), t.depth_optimizer(), t.pose_optimizer(), t.epoch(), t.shuffle_state(), t.history()};
    }
};

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
    for (std::size_t b = 0; b < sizeof(U); ++b) out.push_back(char((v >> (8 * b)) & 0xff));
}
template <class U>
U get_le(const std::string& in, std::size_t& pos) {
    if (pos + sizeof(U) > in.size()) throw Error("checkpoint: truncated payload");
    U v = 0;
    for (std::size_t b = 0; b < sizeof(U); ++b) v |= U(std::uint8_t(in[pos + b])) << (8 * b);
    pos += sizeof(U);
    return v;
}

inline void put_values(std::string& out, const std::vector<Real>& v, bool f32) {
    for (Real x : v) {
        if (f32) put_le(out, std::bit_cast<std::uint32_t>(float(x)));
        else put_le(out, std::bit_cast<std::uint64_t>(double(x)));
    }
}
inline std::vector<Real> get_values(const std::string& in, std::size_t& pos, std::size_t n, bool f32) {
    std::vector<Real> v(n);
    for (auto& x : v) x = f32 ? Real(std::bit_cast<float>(get_le<std::uint32_t>(in, pos))) : Real(std::bit_cast<double>(get_le<std::uint64_t>(in, pos)));
    return v;
}

struct Net {
    const char* name;
    const ParamSet* params;
    const OptimizerState* opt;
};

}  // namespace detail

inline std::string serialize(const Checkpoint& c) {
    const bool f32 = c.config.param_precision == 32;
    const detail::Net nets[] = {{"depth", &c.model.depth, &c.depth_opt}, {"pose", &c.model.pose, &c.pose_opt}};
    nlohmann::json manifest = nlohmann::json::array();
    std::string payload;
    std::size_t offset = 0;
    for (const auto& n : nets) {
        for (const auto& [name, p] : n.params->entries()) {
            const auto& mo = n.opt->moments.at(name);
            const std::size_t count = p.value.size();
            manifest.push_back({{"network", n.name}, {"name", name}, {"shape", p.value.shape()}, {"offset", offset}, {"count", count}});
            detail::put_values(payload, p.value.data(), f32);
            detail::put_values(payload, mo.m, f32);
            detail::put_values(payload, mo.v, f32);
            offset += 3 * count;
        }
    }
    nlohmann::json history = nlohmann::json::array();
    for (const auto& e : c.history) history.push_back(e);
    const nlohmann::json header = {{"format", "egolab-checkpoint"},
                                   {"version", kCheckpointVersion},
                                   {"dtype", f32 ? "f32" : "f64"},
                                   {"layout", "per parameter: value, adam m, adam v (offset/count in elements)"},
                                   {"config", c.config},
                                   {"epoch", c.epoch},
                                   {"depth_step", c.depth_opt.step},
                                   {"pose_step", c.pose_opt.step},
                                   {"rng_state", c.rng_state},
                                   {"history", history},
                                   {"manifest", manifest}};
    const std::string h = header.dump();
    std::string out(kCheckpointMagic, 8);
    detail::put_le(out, std::uint64_t(h.size()));
    out += h;
    out += payload;
    return out;
}

inline Checkpoint deserialize(const std::string& bytes) {
    if (bytes.size() < 16 || bytes.compare(0, 8, std::string(kCheckpointMagic, 8)) != 0) throw Error("checkpoint: bad magic");
    std::size_t pos = 8;
    const auto hlen = detail::get_le<std::uint64_t>(bytes, pos);
    if (pos + hlen > bytes.size()) throw Error("checkpoint: truncated header");
    const auto header = nlohmann::json::parse(bytes.substr(pos, hlen));
    pos += hlen;
    if (header.at("version").get<int>() != kCheckpointVersion) {
        throw Error("checkpoint: unsupported version " + header.at("version").dump());
    }
    Checkpoint c;
    c.config = header.at("config").get<TrainConfig>();
    const bool f32 = header.at("dtype") == "f32";
    if (f32 != (c.config.param_precision == 32)) throw Error("checkpoint: dtype does not match param_precision");
    c.model = Model::init(c.config);  // fixes names and shapes; values overwritten below
    c.depth_opt = OptimizerState::for_params(c.model.depth);
    c.pose_opt = OptimizerState::for_params(c.model.pose);
    c.depth_opt.step = header.at("depth_step");
    c.pose_opt.step = header.at("pose_step");
    c.epoch = header.at("epoch");
    c.rng_state = header.at("rng_state");
    for (const auto& e : header.at("history")) c.history.push_back(e.get<EpochLog>());

    const std::size_t base = pos;
    const std::size_t width = f32 ? 4 : 8;
    std::size_t seen = 0;
    for (const auto& entry : header.at("manifest")) {
        const std::string net = entry.at("network"), name = entry.at("name");
        ParamSet& ps = net == "depth" ? c.model.depth : net == "pose" ? c.model.pose : throw Error("checkpoint: unknown network " + net);
        OptimizerState& opt = net == "depth" ? c.depth_opt : c.pose_opt;
        if (!ps.contains(name)) throw Error("checkpoint: parameter '" + name + "' not in the configured network");
        Tensor& t = ps.at(name);
        if (entry.at("shape").get<Shape>() != t.shape()) throw ShapeError("checkpoint: shape mismatch for '" + name + "'");
        const std::size_t count = entry.at("count");
        std::size_t p = base + width * entry.at("offset").get<std::size_t>();
        t.mutable_data() = detail::get_values(bytes, p, count, f32);
        opt.moments.at(name).m = detail::get_values(bytes, p, count, f32);
        opt.moments.at(name).v = detail::get_values(bytes, p, count, f32);
        ++seen;
    }
    if (seen != c.model.depth.entries().size() + c.model.pose.entries().size()) throw Error("checkpoint: manifest is incomplete");
    return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write checkpoint " + path.string());
    const auto bytes = serialize(c);
    f.write(bytes.data(), std::streamsize(bytes.size()));
    if (!f) throw Error("write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open checkpoint " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

/// Trainer continuing from `c` on `ds`.
inline Trainer resume(const Checkpoint& c, const synth::SequenceDataset& ds) {
    Trainer t(c.config, ds);
    t.restore(c.model, c.depth_opt, c.pose_opt, c.epoch, c.rng_state, c.history);
    return t;
}

}  // namespace egolab::train
