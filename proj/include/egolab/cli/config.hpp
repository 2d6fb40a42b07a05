#pragma once

// One JSON config file with a section per command: synth, train, eval,
// ablate. Errors point at the offending line.

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "egolab/odomeval/metrics.hpp"
#include "egolab/trainer/optim.hpp"

namespace egolab::cli {

namespace fs = std::filesystem;

struct ConfigError : Error {
    using Error::Error;
};

struct SynthSection {
    synth::SceneConfig scene;
    synth::TrajectoryConfig trajectory;
    std::uint64_t seed = 0;
    double meters_per_unit = 1.0;
    std::string name = "synthetic";
};

struct EvalSection {
    std::size_t snippet_len = 5;
    std::string align = "snippet";  // snippet | global
    std::size_t window = 5;         // snippet-scaling window
    std::size_t step = 10;          // drift start-frame spacing
    std::vector<double> lengths = eval::kitti_lengths();
    double min_depth = 1e-3, max_depth = 80;
    std::optional<double> meters_per_unit;  // overrides the dataset value

    void validate() const {
        if (snippet_len != 3 && snippet_len != 5) throw Error("eval: snippet_len must be 3 or 5");
        if (align != "snippet" && align != "global") throw Error("eval: align must be 'snippet' or 'global'");
        if (window < 2) throw Error("eval: window must be >= 2");
        if (step == 0) throw Error("eval: step must be >= 1");
        if (lengths.empty()) throw Error("eval: lengths must not be empty");
        if (!(min_depth > 0 && max_depth > min_depth)) throw Error("eval: need 0 < min_depth < max_depth");
        if (meters_per_unit && !(*meters_per_unit > 0)) throw Error("eval: meters_per_unit must be > 0");
    }
};

struct AblateSection {
    std::vector<double> coverages{0.0, 0.1, 0.2, 0.4, 0.6, 0.8};
    std::vector<std::size_t> patches;  // empty: {21,41,61,81,101} scaled from 320 px to the input width
    std::vector<std::uint64_t> seeds{0};
    std::size_t train_frames = 40;
    std::size_t test_frames = 60;
    std::uint64_t test_scene_offset = 1000;  // texture/trajectory seed offset of the held-out scene
    double train_fraction = 0.5;             // split used when a dataset directory is given

    void validate() const {
        if (coverages.empty()) throw Error("ablate: coverages must not be empty");
        for (double c : coverages) {
            if (!(c >= 0 && c <= 0.95)) throw Error("ablate: coverages must lie in [0, 0.95]");
        }
        for (auto p : patches) {
            if (p == 0) throw Error("ablate: patch sizes must be >= 1");
        }
        if (seeds.empty()) throw Error("ablate: seeds must not be empty");
        if (train_frames < 3 || test_frames < 3) throw Error("ablate: splits need at least 3 frames");
        if (!(train_fraction > 0 && train_fraction < 1)) throw Error("ablate: train_fraction must lie in (0, 1)");
    }

    std::vector<std::size_t> patch_sizes(std::size_t width) const {
        if (!patches.empty()) return patches;
        std::vector<std::size_t> out;
        for (double p : {21.0, 41.0, 61.0, 81.0, 101.0}) out.push_back(std::max<std::size_t>(1, std::size_t(std::lround(p * double(width) / 320.0))));
        return out;
    }
};

inline void to_json(nlohmann::json& j, const SynthSection& s) {
    j = {{"scene", s.scene}, {"trajectory", s.trajectory}, {"seed", s.seed}, {"meters_per_unit", s.meters_per_unit}, {"name", s.name}};
}
inline void from_json(const nlohmann::json& j, SynthSection& s) {
    train::check_keys(j, {"scene", "trajectory", "seed", "meters_per_unit", "name"}, "synth");
    s.scene = j.value("scene", nlohmann::json::object()).get<synth::SceneConfig>();
    if (j.contains("trajectory")) s.trajectory = j.at("trajectory").get<synth::TrajectoryConfig>();
    s.seed = j.value("seed", s.seed);
    s.meters_per_unit = j.value("meters_per_unit", s.meters_per_unit);
    s.name = j.value("name", s.name);
    if (!(s.meters_per_unit > 0)) throw Error("synth: meters_per_unit must be > 0");
}

inline void to_json(nlohmann::json& j, const EvalSection& e) {
    j = {{"snippet_len", e.snippet_len}, {"align", e.align}, {"window", e.window}, {"step", e.step}, {"lengths", e.lengths},
         {"min_depth", e.min_depth}, {"max_depth", e.max_depth},
         {"meters_per_unit", e.meters_per_unit ? nlohmann::json(*e.meters_per_unit) : nlohmann::json(nullptr)}};
}
inline void from_json(const nlohmann::json& j, EvalSection& e) {
    train::check_keys(j, {"snippet_len", "align", "window", "step", "lengths", "min_depth", "max_depth", "meters_per_unit"}, "eval");
    e.snippet_len = j.value("snippet_len", e.snippet_len);
    e.align = j.value("align", e.align);
    e.window = j.value("window", e.window);
    e.step = j.value("step", e.step);
    e.lengths = j.value("lengths", e.lengths);
    e.min_depth = j.value("min_depth", e.min_depth);
    e.max_depth = j.value("max_depth", e.max_depth);
    if (j.contains("meters_per_unit") && !j.at("meters_per_unit").is_null()) e.meters_per_unit = j.at("meters_per_unit").get<double>();
    e.validate();
}

inline void to_json(nlohmann::json& j, const AblateSection& a) {
    j = {{"coverages", a.coverages}, {"patches", a.patches}, {"seeds", a.seeds}, {"train_frames", a.train_frames},
         {"test_frames", a.test_frames}, {"test_scene_offset", a.test_scene_offset}, {"train_fraction", a.train_fraction}};
}
inline void from_json(const nlohmann::json& j, AblateSection& a) {
    train::check_keys(j, {"coverages", "patches", "seeds", "train_frames", "test_frames", "test_scene_offset", "train_fraction"}, "ablate");
    a.coverages = j.value("coverages", a.coverages);
    a.patches = j.value("patches", a.patches);
    a.seeds = j.value("seeds", a.seeds);
    a.train_frames = j.value("train_frames", a.train_frames);
    a.test_frames = j.value("test_frames", a.test_frames);
    a.test_scene_offset = j.value("test_scene_offset", a.test_scene_offset);
    a.train_fraction = j.value("train_fraction", a.train_fraction);
    a.validate();
}

struct Config {
    SynthSection synth;
    train::TrainConfig train;
    EvalSection eval;
    AblateSection ablate;
    fs::path source;  // file it was read from, if any
};

inline void to_json(nlohmann::json& j, const Config& c) {
    j = {{"synth", c.synth}, {"train", c.train}, {"eval", c.eval}, {"ablate", c.ablate}};
}

namespace detail {

inline std::size_t line_of_offset(const std::string& text, std::size_t offset) {
    offset = std::min(offset, text.size());
    return 1 + std::size_t(std::count(text.begin(), text.begin() + std::ptrdiff_t(offset), '\n'));
}

/// Line of the first occurrence of "key" at or after `from`, or 0.
inline std::size_t line_of_key(const std::string& text, const std::string& key, std::size_t from = 0) {
    const auto at = text.find("\"" + key + "\"", from);
    return at == std::string::npos ? 0 : line_of_offset(text, at);
}

/// Best-effort anchor for a semantic error inside `section`: the first
/// word of the message that is also a key in the file, else the section.
inline std::size_t anchor(const std::string& text, const std::string& section, const std::string& message) {
    const auto sec = text.find("\"" + section + "\"");
    const std::size_t from = sec == std::string::npos ? 0 : sec + section.size() + 2;
    std::string word;
    for (char ch : message + " ") {
        if (std::isalnum(static_cast<unsigned char>(ch)) || ch == '_') {
            word += ch;
            continue;
        }
        if (word.size() > 1) {
            if (auto l = line_of_key(text, word, from)) return l;
        }
        word.clear();
    }
    return sec == std::string::npos ? 1 : line_of_offset(text, sec);
}

template <class T>
T parse_section(const nlohmann::json& root, const char* name, const std::string& text, const std::string& path) {
    if (!root.contains(name)) return T{};
    try {
        return root.at(name).get<T>();
    } catch (const std::exception& e) {
        throw ConfigError(path + ":" + std::to_string(anchor(text, name, e.what())) + ": error in section '" + name + "': " + e.what());
    }
}

}  // namespace detail

/// Parses config text; `path` only labels diagnostics.
inline Config parse_config(const std::string& text, const std::string& path = "<config>") {
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        const std::size_t off = e.byte == 0 ? 0 : e.byte - 1;
        const std::size_t line = detail::line_of_offset(text, off);
        const std::size_t line_start = text.rfind('\n', off == 0 ? 0 : off - 1);
        const std::size_t col = off - (line_start == std::string::npos ? 0 : line_start + 1) + 1;
        throw ConfigError(path + ":" + std::to_string(line) + ":" + std::to_string(col) + ": malformed JSON: " + e.what());
    }
    if (!root.is_object()) throw ConfigError(path + ":1: config must be a JSON object");
    for (const auto& [k, _] : root.items()) {
        if (k != "synth" && k != "train" && k != "eval" && k != "ablate") {
            throw ConfigError(path + ":" + std::to_string(detail::line_of_key(text, k)) + ": unknown section '" + k + "'");
        }
    }
    Config c;
    c.synth = detail::parse_section<SynthSection>(root, "synth", text, path);
    c.train = detail::parse_section<train::TrainConfig>(root, "train", text, path);
    c.eval = detail::parse_section<EvalSection>(root, "eval", text, path);
    c.ablate = detail::parse_section<AblateSection>(root, "ablate", text, path);
    return c;
}

inline Config load_config(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError(path.string() + ": cannot open config file");
    const std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Config c = parse_config(text, path.string());
    c.source = path;
    return c;
}

}  // namespace egolab::cli
