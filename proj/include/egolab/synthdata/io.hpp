#pragma once

// On-disk formats: 8-bit PNG frames, raw float32 little-endian depth,
// 12-number-per-line pose files, KITTI calib.txt, and the synthetic layout
// frames/ depth/ poses.txt intrinsics.json meta.json.

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>

#include <png.h>

#include "egolab/synthdata/dataset.hpp"

namespace egolab::synth {

namespace fs = std::filesystem;
using Matrix34 = Eigen::Matrix<double, 3, 4, Eigen::RowMajor>;

// ---- PNG ---------------------------------------------------------------

/// Reads any PNG as RGB [1,3,H,W] in [0,1] (gray expanded, alpha dropped,
/// 16-bit reduced to 8).
inline diff::Tensor read_png(const std::string& path) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        throw Error("cannot read PNG '" + path + "': " + img.message);
    }
    img.format = PNG_FORMAT_RGB;
    std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        throw Error("cannot decode PNG '" + path + "': " + img.message);
    }
    const std::size_t h = img.height, w = img.width, n = h * w;
    std::vector<Real> v(3 * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < 3; ++c) v[c * n + i] = Real(buf[3 * i + c]) / 255.0;
    return diff::Tensor({1, 3, h, w}, std::move(v));
}

/// Writes RGB [1,3,H,W] (or gray [1,1,H,W]) values in [0,1] as 8-bit PNG.
inline void write_png(const std::string& path, const diff::Tensor& image) {
    if (image.rank() != 4 || image.dim(0) != 1 || (image.dim(1) != 3 && image.dim(1) != 1)) {
        throw ShapeError("write_png expects [1,3,H,W] or [1,1,H,W], got " + shape_str(image.shape()));
    }
    const std::size_t c = image.dim(1), h = image.dim(2), w = image.dim(3), n = h * w;
    std::vector<png_byte> buf(c * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
            buf[c * i + ch] = png_byte(std::lround(std::clamp(image[ch * n + i], 0.0, 1.0) * 255.0));
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = png_uint_32(w);
    img.height = png_uint_32(h);
    img.format = c == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
        throw Error("cannot write PNG '" + path + "': " + img.message);
    }
}

// ---- depth sidecar -------------------------------------------------------

inline void write_depth(const std::string& path, const diff::Tensor& depth) {
    static_assert(std::endian::native == std::endian::little, "depth sidecars assume a little-endian host");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write depth '" + path + "'");
    for (Real d : depth.data()) {
        const float v = float(d);
        f.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
}

inline diff::Tensor read_depth(const std::string& path, std::size_t h, std::size_t w) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw Error("cannot read depth '" + path + "'");
    const auto bytes = std::size_t(f.tellg());
    if (bytes != h * w * sizeof(float)) {
        throw Error("depth '" + path + "' has " + std::to_string(bytes) + " bytes, expected " + std::to_string(h * w * 4));
    }
    f.seekg(0);
    std::vector<float> raw(h * w);
    f.read(reinterpret_cast<char*>(raw.data()), std::streamsize(bytes));
    return diff::Tensor({1, 1, h, w}, std::vector<Real>(raw.begin(), raw.end()));
}

// ---- pose files ----------------------------------------------------------

inline Matrix34 parse_pose_line(const std::string& line, std::size_t lineno = 0) {
    std::istringstream is(line);
    Matrix34 m;
    for (int i = 0; i < 12; ++i) {
        if (!(is >> m(i / 4, i % 4))) {
            throw Error("malformed pose line " + std::to_string(lineno) + ": expected 12 numbers");
        }
    }
    std::string rest;
    if (is >> rest) throw Error("malformed pose line " + std::to_string(lineno) + ": trailing '" + rest + "'");
    if (!m.allFinite()) throw Error("malformed pose line " + std::to_string(lineno) + ": non-finite value");
    return m;
}

/// Raw 3x4 rows as stored; blank lines are skipped.
inline std::vector<Matrix34> read_pose_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot read pose file '" + path + "'");
    std::vector<Matrix34> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        out.push_back(parse_pose_line(line, lineno));
    }
    return out;
}

inline void write_pose_file(const std::string& path, const std::vector<Matrix34>& poses) {
    std::ofstream f(path);
    if (!f) throw Error("cannot write pose file '" + path + "'");
    f << std::scientific << std::setprecision(17);
    for (const auto& m : poses) {
        for (int i = 0; i < 12; ++i) f << (i ? " " : "") << m(i / 4, i % 4);
        f << '\n';
    }
}

/// Stored rows may be slightly non-orthonormal; rotations are projected.
inline SE3Transform to_transform(const Matrix34& m) {
    return SE3Transform::from_approx(m.leftCols<3>(), m.col(3));
}

inline Matrix34 to_matrix34(const SE3Transform& T) {
    Matrix34 m;
    m.leftCols<3>() = T.rotation();
    m.col(3) = T.translation();
    return m;
}

inline std::vector<SE3Transform> read_poses(const std::string& path) {
    std::vector<SE3Transform> out;
    for (const auto& m : read_pose_file(path)) out.push_back(to_transform(m));
    return out;
}

inline void write_poses(const std::string& path, const std::vector<SE3Transform>& poses) {
    std::vector<Matrix34> rows;
    for (const auto& T : poses) rows.push_back(to_matrix34(T));
    write_pose_file(path, rows);
}

// ---- KITTI -----------------------------------------------------------------

/// Intrinsics from the P2 row of a KITTI calib.txt.
inline CameraIntrinsics read_kitti_calib(const std::string& path, std::size_t width, std::size_t height) {
    std::ifstream f(path);
    if (!f) throw Error("cannot read calib file '" + path + "'");
    std::string line;
    while (std::getline(f, line)) {
        if (line.rfind("P2:", 0) != 0) continue;
        std::istringstream is(line.substr(3));
        std::array<double, 12> p{};
        for (auto& v : p) {
            if (!(is >> v)) throw Error("calib '" + path + "': P2 row needs 12 numbers");
        }
        return CameraIntrinsics::make(p[0], p[5], p[2], p[6], width, height);
    }
    throw Error("calib '" + path + "' has no P2 row");
}

inline std::string frame_name(std::size_t i, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06zu%s", i, ext);
    return buf;
}

/// Loads a KITTI odometry sequence directory (image_2/, calib.txt). Poses
/// come from `poses_path` if given, else seq/poses.txt, else
/// seq/../../poses/<seq>.txt when present.
inline SequenceDataset load_kitti_sequence(const std::string& dir, const std::string& poses_path = "") {
    const fs::path root(dir);
    const fs::path images = root / "image_2";
    if (!fs::is_directory(images)) throw Error("KITTI sequence '" + dir + "' has no image_2/ directory");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(images)) {
        if (e.path().extension() == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw Error("KITTI sequence '" + dir + "' has no PNG frames");
    for (std::size_t i = 0; i < files.size(); ++i) {
        if (files[i].filename() != frame_name(i, ".png")) {
            throw Error("KITTI sequence '" + dir + "': missing frame " + frame_name(i, ".png"));
        }
    }
    SequenceDataset ds;
    ds.name = root.filename().string();
    ds.frame_spacing = 0.1;
    for (const auto& p : files) ds.frames.push_back({read_png(p.string()), std::nullopt});
    const auto h = ds.frames[0].image.dim(2), w = ds.frames[0].image.dim(3);
    ds.intrinsics = read_kitti_calib((root / "calib.txt").string(), w, h);

    fs::path pp = poses_path;
    if (pp.empty()) {
        if (fs::exists(root / "poses.txt")) {
            pp = root / "poses.txt";
        } else if (auto alt = root.parent_path().parent_path() / "poses" / (ds.name + ".txt"); fs::exists(alt)) {
            pp = alt;
        }
    }
    if (!pp.empty()) ds.poses = read_poses(pp.string());
    ds.validate();
    return ds;
}

// ---- synthetic layout ------------------------------------------------------

inline void save_dataset(const SequenceDataset& ds, const std::string& dir, const nlohmann::json& extra_meta = {}) {
    ds.validate();
    const fs::path root(dir);
    fs::create_directories(root / "frames");
    for (std::size_t i = 0; i < ds.size(); ++i) {
        write_png((root / "frames" / frame_name(i, ".png")).string(), ds.frames[i].image);
        if (ds.frames[i].depth) {
            fs::create_directories(root / "depth");
            write_depth((root / "depth" / frame_name(i, ".f32")).string(), *ds.frames[i].depth);
        }
    }
    if (ds.has_poses()) write_poses((root / "poses.txt").string(), ds.poses);
    geom::save_intrinsics(ds.intrinsics, (root / "intrinsics.json").string());
    nlohmann::json meta = extra_meta.is_object() ? extra_meta : nlohmann::json::object();
    meta["frames"] = ds.size();
    meta["frame_spacing"] = ds.frame_spacing;
    meta["meters_per_unit"] = ds.meters_per_unit;
    meta["name"] = ds.name;
    std::ofstream((root / "meta.json").string()) << meta.dump(2) << '\n';
}

inline SequenceDataset load_dataset(const std::string& dir) {
    const fs::path root(dir);
    if (fs::is_directory(root / "image_2")) return load_kitti_sequence(dir);
    if (!fs::is_directory(root / "frames")) throw Error("'" + dir + "' is neither a synthetic nor a KITTI sequence");
    SequenceDataset ds;
    ds.intrinsics = geom::load_intrinsics((root / "intrinsics.json").string());
    ds.name = root.filename().string();
    if (fs::exists(root / "meta.json")) {
        std::ifstream f((root / "meta.json").string());
        const auto meta = nlohmann::json::parse(f);
        ds.frame_spacing = meta.value("frame_spacing", 1.0);
        ds.meters_per_unit = meta.value("meters_per_unit", 1.0);
        ds.name = meta.value("name", ds.name);
    }
    for (std::size_t i = 0;; ++i) {
        const auto png = root / "frames" / frame_name(i, ".png");
        if (!fs::exists(png)) break;
        Frame fr{read_png(png.string()), std::nullopt};
        const auto dp = root / "depth" / frame_name(i, ".f32");
        if (fs::exists(dp)) fr.depth = read_depth(dp.string(), ds.intrinsics.height, ds.intrinsics.width);
        ds.frames.push_back(std::move(fr));
    }
    if (fs::exists(root / "poses.txt")) ds.poses = read_poses((root / "poses.txt").string());
    ds.validate();
    return ds;
}

}  // namespace egolab::synth
