// Central finite-difference verification of tape gradients.
#pragma once

#include <functional>
#include <optional>

#include "mowe/ops.hpp"

namespace mowe {

struct GradCheckOptions {
    double h = 1e-5;                        // central-difference step, must lie in [1e-6, 1e-3]
    std::vector<int64_t> coords;            // empty = all coordinates
    // Optional fingerprint of data-dependent branching (e.g. Top-K expert
    // selection). Evaluated after every forward; coordinates whose
    // perturbation changes the fingerprint sit on a selection boundary where
    // the derivative does not exist, so they are skipped.
    std::function<uint64_t()> branch_fingerprint;
};

inline double rel_error(double a, double b) {
    double denom = std::max({std::abs(a), std::abs(b), 1e-6});
    return std::abs(a - b) / denom;
}

// Checks d(f())/d(x) where f reads x in place (x may be a model parameter).
// Returns the max relative error between tape and numeric gradients.
inline double finite_diff_check_inplace(const std::function<Tensor()>& f, Tensor x,
                                        const GradCheckOptions& opt = {}) {
    if (opt.h < 1e-6 || opt.h > 1e-3) throw ParamError("finite_diff_check: h must lie in [1e-6, 1e-3]");
    bool prev_rg = x.requires_grad();
    x.set_requires_grad(true);
    x.zero_grad();

    Tape tape;
    std::vector<double> analytic;
    uint64_t base_fp = 0;
    {
        Tape::Scope scope(tape);
        Tensor loss = f();
        if (loss.size() != 1) throw UsageError("finite_diff_check: f must return a scalar");
        if (!std::isfinite(loss.item())) throw NumericError("finite_diff_check: f(x) is not finite");
        if (opt.branch_fingerprint) base_fp = opt.branch_fingerprint();
        tape.backward(loss);
        analytic = x.grad();
    }
    x.set_requires_grad(false);

    std::vector<int64_t> coords = opt.coords;
    if (coords.empty()) {
        coords.resize(static_cast<size_t>(x.size()));
        for (int64_t i = 0; i < x.size(); ++i) coords[static_cast<size_t>(i)] = i;
    }

    auto eval = [&](int64_t i, double delta, bool& fp_ok) {
        double saved = x[i];
        x[i] = saved + delta;
        Tensor v = f();
        fp_ok = !opt.branch_fingerprint || opt.branch_fingerprint() == base_fp;
        double r = v.item();
        x[i] = saved;
        if (!std::isfinite(r)) throw NumericError("finite_diff_check: perturbed f(x) is not finite");
        return r;
    };

    double max_err = 0.0;
    for (int64_t i : coords) {
        bool ok_plus = true, ok_minus = true;
        double fp = eval(i, opt.h, ok_plus);
        double fm = eval(i, -opt.h, ok_minus);
        if (!ok_plus || !ok_minus) continue;  // non-differentiable selection boundary
        double numeric = (fp - fm) / (2.0 * opt.h);
        max_err = std::max(max_err, rel_error(analytic[static_cast<size_t>(i)], numeric));
    }
    x.set_requires_grad(prev_rg);
    return max_err;
}

// Convenience form for pure functions of one tensor.
inline double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                                const GradCheckOptions& opt = {}) {
    return finite_diff_check_inplace([&] { return f(x); }, x, opt);
}

}  // namespace mowe
