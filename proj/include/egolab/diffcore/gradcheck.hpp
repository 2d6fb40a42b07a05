#pragma once

#include <functional>
#include <optional>

#include "egolab/diffcore/tensor.hpp"

namespace egolab::diff {

struct GradCheckReport {
    double max_rel_error = 0;
    std::size_t worst_index = 0;
    double analytic = 0;
    double numeric = 0;
    std::size_t checked = 0;
    // Coordinates whose +-eps probes switched a discrete branch (mask bit,
    // argmin winner, clamp) and therefore have no finite-difference reference.
    std::size_t skipped = 0;
};

struct GradCheckOptions {
    double eps = 1e-4;
    // Subset of flat coordinates to probe; empty = all.
    std::vector<std::size_t> coordinates;
    // Optional fingerprint of the discrete decisions f takes at a point.
    std::function<std::uint64_t(const Tensor&)> branch_key;
};

inline double relative_error(double a, double n) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
}

/// Compares the reverse-mode gradient of scalar-valued `f` at `point` with
/// central differences (f(x+eps) - f(x-eps)) / (2 eps) per coordinate.
inline GradCheckReport check_gradient(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                                      const GradCheckOptions& opt = {}) {
    if (!(opt.eps > 0 && opt.eps <= 1e-2)) throw Error("check_gradient: eps must lie in (0, 1e-2]");
    Tensor x(point.shape(), point.data(), true);
    Tensor y = f(x);
    if (y.size() != 1) throw ShapeError("check_gradient: f must be scalar-valued");
    y.backward();
    const std::vector<Real> analytic = x.grad();

    std::optional<std::uint64_t> base_key;
    if (opt.branch_key) base_key = opt.branch_key(point);

    auto eval = [&](const std::vector<Real>& v) {
        Real r = f(Tensor(point.shape(), v)).item();
        if (!std::isfinite(r)) throw NumericError("check_gradient: non-finite evaluation");
        return r;
    };

    std::vector<std::size_t> coords = opt.coordinates;
    if (coords.empty()) {
        coords.resize(point.size());
        std::iota(coords.begin(), coords.end(), 0);
    }
    GradCheckReport rep;
    std::vector<Real> probe = point.data();
    for (std::size_t i : coords) {
        if (i >= point.size()) throw ShapeError("check_gradient: coordinate out of range");
        const Real orig = probe[i];
        probe[i] = orig + opt.eps;
        Tensor plus(point.shape(), probe);
        const Real fp = eval(probe);
        probe[i] = orig - opt.eps;
        Tensor minus(point.shape(), probe);
        const Real fm = eval(probe);
        probe[i] = orig;
        if (base_key && (opt.branch_key(plus) != *base_key || opt.branch_key(minus) != *base_key)) {
            ++rep.skipped;
            continue;
        }
        const double numeric = (fp - fm) / (2 * opt.eps);
        const double err = relative_error(analytic[i], numeric);
        ++rep.checked;
        if (err > rep.max_rel_error || rep.checked == 1) {
            rep.max_rel_error = err;
            rep.worst_index = i;
            rep.analytic = analytic[i];
            rep.numeric = numeric;
        }
    }
    return rep;
}

}  // namespace egolab::diff
