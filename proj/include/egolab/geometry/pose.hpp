#pragma once

// Rigid motions. Rotations use the fixed Euler convention
//   R = Rz(gamma) * Ry(beta) * Rx(alpha)
// with parameter order (x, y, z, alpha, beta, gamma).

#include <array>
#include <numbers>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "egolab/diffcore/ops.hpp"

namespace egolab::geom {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

struct PoseVec6 {
    Vec3 t = Vec3::Zero();  // meters
    Vec3 r = Vec3::Zero();  // alpha, beta, gamma (radians)

    PoseVec6() = default;
    PoseVec6(const Vec3& translation, const Vec3& rotation) : t(translation), r(rotation) { validate(); }

    static PoseVec6 from_array(const std::array<double, 6>& v) {
        return PoseVec6(Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5]));
    }
    std::array<double, 6> to_array() const { return {t.x(), t.y(), t.z(), r.x(), r.y(), r.z()}; }

    void validate() const {
        if (!t.allFinite() || !r.allFinite()) throw Error("pose parameters must be finite");
        if (r.cwiseAbs().maxCoeff() >= std::numbers::pi) throw Error("Euler angles must lie in (-pi, pi)");
    }
};

inline Mat3 rot_x(double a) {
    Mat3 m;
    m << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
    return m;
}
inline Mat3 rot_y(double a) {
    Mat3 m;
    m << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
    return m;
}
inline Mat3 rot_z(double a) {
    Mat3 m;
    m << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
    return m;
}

inline Mat3 euler_to_rotation(const Vec3& r) { return rot_z(r.z()) * rot_y(r.y()) * rot_x(r.x()); }

/// Inverse of euler_to_rotation away from the beta = +-pi/2 singularity.
inline Vec3 rotation_to_euler(const Mat3& R) {
    const double beta = std::atan2(-R(2, 0), std::hypot(R(0, 0), R(1, 0)));
    const double alpha = std::atan2(R(2, 1), R(2, 2));
    const double gamma = std::atan2(R(1, 0), R(0, 0));
    return {alpha, beta, gamma};
}

/// x -> R x + t.
class SE3Transform {
public:
    SE3Transform() : R_(Mat3::Identity()), t_(Vec3::Zero()) {}

    SE3Transform(const Mat3& R, const Vec3& t) : R_(R), t_(t) {
        if (!R.allFinite() || !t.allFinite()) throw Error("SE3Transform: non-finite entries");
        if ((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9 || std::abs(R.determinant() - 1) > 1e-9) {
            throw Error("SE3Transform: rotation is not orthonormal with det 1");
        }
    }

    /// Projects a nearly orthonormal matrix onto SO(3) before construction.
    static SE3Transform from_approx(const Mat3& R, const Vec3& t) {
        Eigen::JacobiSVD<Mat3> svd(R, Eigen::ComputeFullU | Eigen::ComputeFullV);
        Mat3 D = Mat3::Identity();
        D(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1 : 1;
        return {svd.matrixU() * D * svd.matrixV().transpose(), t};
    }

    static SE3Transform from_matrix(const Mat4& m) { return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()}; }

    const Mat3& rotation() const { return R_; }
    const Vec3& translation() const { return t_; }

    Mat4 matrix() const {
        Mat4 m = Mat4::Identity();
        m.topLeftCorner<3, 3>() = R_;
        m.topRightCorner<3, 1>() = t_;
        return m;
    }

    Vec3 operator*(const Vec3& p) const { return R_ * p + t_; }

private:
    Mat3 R_;
    Vec3 t_;
};

inline SE3Transform pose_from_params(const PoseVec6& v) { return {euler_to_rotation(v.r), v.t}; }

inline PoseVec6 params_from_pose(const SE3Transform& T) { return {T.translation(), rotation_to_euler(T.rotation())}; }

/// compose(a, b) applies b first, then a.
inline SE3Transform compose(const SE3Transform& a, const SE3Transform& b) {
    Mat3 R = a.rotation() * b.rotation();
    // Re-orthonormalise so long products stay inside the SE3 tolerance.
    return SE3Transform::from_approx(R, a.rotation() * b.translation() + a.translation());
}

inline SE3Transform invert(const SE3Transform& a) {
    const Mat3 Rt = a.rotation().transpose();
    return {Rt, -Rt * a.translation()};
}

/// Rotation angle of R in radians. The atan2 form keeps precision for small angles.
inline double rotation_angle(const Mat3& R) {
    const Vec3 v(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
    return std::atan2(0.5 * v.norm(), 0.5 * (R.trace() - 1.0));
}

inline bool approx_equal(const SE3Transform& a, const SE3Transform& b, double tol) {
    return (a.matrix() - b.matrix()).cwiseAbs().maxCoeff() <= tol;
}

/// Differentiable Euler parameters [N,6] -> row-major [R | t] entries [N,12].
inline diff::Tensor pose_matrix(const diff::Tensor& params) {
    if (params.rank() != 2 || params.dim(1) != 6) throw ShapeError("pose_matrix expects [N,6] parameters");
    const std::size_t n = params.dim(0);
    std::vector<Real> out(n * 12);
    for (std::size_t b = 0; b < n; ++b) {
        const Real* p = params.data().data() + 6 * b;
        const Mat3 R = euler_to_rotation(Vec3(p[3], p[4], p[5]));
        Real* o = out.data() + 12 * b;
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) o[3 * i + j] = R(i, j);
        }
        o[9] = p[0];
        o[10] = p[1];
        o[11] = p[2];
    }
    return diff::Tensor::make_result({n, 12}, std::move(out), {params},
        [params, n](diff::detail::Node& node) {
            Real* g = diff::Tensor::parent_grad(node, 0);
            for (std::size_t b = 0; b < n; ++b) {
                const Real* p = params.data().data() + 6 * b;
                const Real* go = node.grad.data() + 12 * b;
                const double a = p[3], be = p[4], ga = p[5];
                const Mat3 Rx = rot_x(a), Ry = rot_y(be), Rz = rot_z(ga);
                Mat3 dRx, dRy, dRz;
                dRx << 0, 0, 0, 0, -std::sin(a), -std::cos(a), 0, std::cos(a), -std::sin(a);
                dRy << -std::sin(be), 0, std::cos(be), 0, 0, 0, -std::cos(be), 0, -std::sin(be);
                dRz << -std::sin(ga), -std::cos(ga), 0, std::cos(ga), -std::sin(ga), 0, 0, 0, 0;
                const std::array<Mat3, 3> dR{Rz * Ry * dRx, Rz * dRy * Rx, dRz * Ry * Rx};
                for (int k = 0; k < 3; ++k) {
                    double acc = 0;
                    for (int i = 0; i < 3; ++i) {
                        for (int j = 0; j < 3; ++j) acc += go[3 * i + j] * dR[std::size_t(k)](i, j);
                    }
                    g[6 * b + 3 + std::size_t(k)] += acc;
                }
                g[6 * b + 0] += go[9];
                g[6 * b + 1] += go[10];
                g[6 * b + 2] += go[11];
            }
        },
        "pose_matrix");
}

/// Differentiable inverse of row-major [R | t] entries [N,12]: [R^T | -R^T t].
inline diff::Tensor invert_pose_matrix(const diff::Tensor& m) {
    if (m.rank() != 2 || m.dim(1) != 12) throw ShapeError("invert_pose_matrix expects [N,12] entries");
    const std::size_t n = m.dim(0);
    std::vector<Real> out(n * 12);
    for (std::size_t b = 0; b < n; ++b) {
        const Real* a = m.data().data() + 12 * b;
        Real* o = out.data() + 12 * b;
        for (int i = 0; i < 3; ++i) {
            double acc = 0;
            for (int j = 0; j < 3; ++j) {
                o[3 * i + j] = a[3 * j + i];
                acc += a[3 * j + i] * a[9 + j];
            }
            o[9 + i] = -acc;
        }
    }
    return diff::Tensor::make_result({n, 12}, std::move(out), {m},
        [m, n](diff::detail::Node& node) {
            Real* g = diff::Tensor::parent_grad(node, 0);
            for (std::size_t b = 0; b < n; ++b) {
                const Real* a = m.data().data() + 12 * b;
                const Real* go = node.grad.data() + 12 * b;
                Real* gb = g + 12 * b;
                for (int i = 0; i < 3; ++i) {
                    for (int j = 0; j < 3; ++j) {
                        gb[3 * j + i] += go[3 * i + j] - a[9 + j] * go[9 + i];
                        gb[9 + j] -= a[3 * j + i] * go[9 + i];
                    }
                }
            }
        },
        "invert_pose_matrix");
}

inline diff::Tensor pose_tensor(const PoseVec6& v, bool requires_grad = false) {
    const auto a = v.to_array();
    return diff::Tensor({1, 6}, std::vector<Real>(a.begin(), a.end()), requires_grad);
}

}  // namespace egolab::geom
