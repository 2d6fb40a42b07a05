#pragma once

#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "egolab/diffcore/config_keys.hpp"
#include "egolab/diffcore/tensor.hpp"

namespace egolab::geom {

/// Pinhole intrinsics in pixels.
struct CameraIntrinsics {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    std::size_t width = 0, height = 0;

    static CameraIntrinsics make(double fx, double fy, double cx, double cy, std::size_t width, std::size_t height) {
        CameraIntrinsics k{fx, fy, cx, cy, width, height};
        k.validate();
        return k;
    }

    void validate() const {
        if (!(fx > 0 && fy > 0)) throw Error("intrinsics: focal lengths must be positive");
        if (width == 0 || height == 0) throw Error("intrinsics: image extents must be positive");
        if (!(cx >= 0 && cx < double(width) && cy >= 0 && cy < double(height))) {
            throw Error("intrinsics: principal point outside the image");
        }
    }

    /// Intrinsics of the same camera resampled to another resolution.
    CameraIntrinsics resized(std::size_t new_width, std::size_t new_height) const {
        const double sx = double(new_width) / double(width), sy = double(new_height) / double(height);
        return make(fx * sx, fy * sy, (cx + 0.5) * sx - 0.5, (cy + 0.5) * sy - 0.5, new_width, new_height);
    }

    bool operator==(const CameraIntrinsics&) const = default;
};

inline void to_json(nlohmann::json& j, const CameraIntrinsics& k) {
    j = nlohmann::json{{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

inline void from_json(const nlohmann::json& j, CameraIntrinsics& k) {
    check_keys(j, {"fx", "fy", "cx", "cy", "width", "height"}, "intrinsics");
    k = CameraIntrinsics::make(j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
                               j.at("cy").get<double>(), j.at("width").get<std::size_t>(), j.at("height").get<std::size_t>());
}

inline CameraIntrinsics load_intrinsics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open intrinsics file " + path);
    return nlohmann::json::parse(in).get<CameraIntrinsics>();
}

inline void save_intrinsics(const CameraIntrinsics& k, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write intrinsics file " + path);
    out << nlohmann::json(k).dump(2) << '\n';
}

}  // namespace egolab::geom
