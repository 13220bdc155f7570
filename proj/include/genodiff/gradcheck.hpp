#pragma once

#include <functional>
#include <vector>

#include "autodiff.hpp"

namespace genodiff {

struct GradCheckResult {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    int64_t checked = 0;
};

// Compares reverse-mode gradients of a scalar function against central finite
// differences. When an input is large, only `max_coords_per_input` randomly
// chosen coordinates are probed (two function evaluations per coordinate).
// Relative error uses max(|analytic|, |numeric|, 1e-3) as denominator so that
// near-zero gradients are judged on an absolute scale.
inline GradCheckResult grad_check(
    const std::function<Var(const std::vector<Var>&)>& f, const std::vector<Tensor>& inputs,
    double eps = 1e-5, int64_t max_coords_per_input = 200, uint64_t probe_seed = 0) {
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const auto& t : inputs) vars.push_back(Var::param(t));

    Var out = f(vars);
    if (out.numel() != 1) throw UsageError("grad_check: f must return a scalar");
    if (!out.value().all_finite()) throw NumericError("grad_check: non-finite function value");
    for (auto& v : vars) v.zero_grad();
    out.backward();

    auto eval = [&](const std::vector<Var>& vs) {
        NoGradGuard ng;
        Var y = f(vs);
        double v = static_cast<double>(y.value()[0]);
        if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
        return v;
    };

    GradCheckResult res;
    Rng probe(splitmix64(probe_seed + 0x5eedull));
    for (size_t vi = 0; vi < vars.size(); ++vi) {
        int64_t n = vars[vi].numel();
        std::vector<int64_t> coords;
        if (n <= max_coords_per_input) {
            coords.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
        } else {
            for (int64_t i = 0; i < max_coords_per_input; ++i)
                coords.push_back(probe.uniform_int(n));
        }
        for (int64_t c : coords) {
            double orig = vars[vi].value()[c];
            vars[vi].value_mut()[c] = orig + eps;
            double fp = eval(vars);
            vars[vi].value_mut()[c] = orig - eps;
            double fm = eval(vars);
            vars[vi].value_mut()[c] = orig;
            double numeric = (fp - fm) / (2.0 * eps);
            double analytic = vars[vi].grad()[c];
            double abs_err = std::abs(analytic - numeric);
            double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
            res.max_rel_err = std::max(res.max_rel_err, abs_err / denom);
            res.max_abs_err = std::max(res.max_abs_err, abs_err);
            ++res.checked;
        }
    }
    return res;
}

// In-place variant for model parameters: `f` must recompute the scalar loss
// from the parameters' current values (the vars live inside the model), so
// perturbing a value through the shared node re-evaluates the true function.
inline GradCheckResult grad_check_inplace(const std::function<Var()>& f, std::vector<Var> params,
                                          double eps = 1e-5, int64_t max_coords_per_input = 100,
                                          uint64_t probe_seed = 0) {
    for (auto& p : params) p.zero_grad();
    Var out = f();
    if (out.numel() != 1) throw UsageError("grad_check: f must return a scalar");
    out.backward();

    auto eval = [&]() {
        NoGradGuard ng;
        double v = f().value()[0];
        if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
        return v;
    };

    GradCheckResult res;
    Rng probe(splitmix64(probe_seed + 0x5eedull));
    for (auto& p : params) {
        int64_t n = p.numel();
        std::vector<int64_t> coords;
        if (n <= max_coords_per_input) {
            coords.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
        } else {
            for (int64_t i = 0; i < max_coords_per_input; ++i) coords.push_back(probe.uniform_int(n));
        }
        for (int64_t c : coords) {
            double orig = p.value()[c];
            p.value_mut()[c] = orig + eps;
            double fp = eval();
            p.value_mut()[c] = orig - eps;
            double fm = eval();
            p.value_mut()[c] = orig;
            double numeric = (fp - fm) / (2.0 * eps);
            double analytic = p.grad()[c];
            double abs_err = std::abs(analytic - numeric);
            double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
            res.max_rel_err = std::max(res.max_rel_err, abs_err / denom);
            res.max_abs_err = std::max(res.max_abs_err, abs_err);
            ++res.checked;
        }
    }
    return res;
}

}  // namespace genodiff
