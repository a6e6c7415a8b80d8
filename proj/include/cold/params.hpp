#pragma once

// Named model parameters plus the parameter-space variant of the gradient
// check. std::map keeps iteration order stable, which matters for
// reproducible training and byte-identical checkpoints.

#include <functional>
#include <map>
#include <stdexcept>
#include <string>

#include "cold/array.hpp"
#include "cold/autodiff.hpp"
#include "cold/rng.hpp"

namespace cold {

using ParamStore = std::map<std::string, Array>;

// Uniform init in +-1/sqrt(fan_in).
inline Array init_uniform(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
    Array a(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : a.data) v = rng.uniform(-bound, bound);
    return a;
}

// Tape-side view of a ParamStore: every parameter entered as a leaf node.
struct ParamVars {
    std::map<std::string, Var> vars;

    Var at(const std::string& name) const {
        auto it = vars.find(name);
        if (it == vars.end())
            throw std::invalid_argument("missing parameter: " + name);
        return it->second;
    }
};

inline ParamVars enter_params(Tape& t, const ParamStore& store) {
    ParamVars pv;
    for (const auto& [name, value] : store) pv.vars.emplace(name, t.leaf(value));
    return pv;
}

// Gradient check against a scalar loss rebuilt from a ParamStore. Returns the
// max relative error over every coordinate of every parameter.
inline double grad_check_params(
    const std::function<Var(Tape&, const ParamVars&)>& build, const ParamStore& params,
    double step) {
    if (!(step > 0.0)) throw std::invalid_argument("grad_check_params: step must be positive");

    Tape t;
    ParamVars pv = enter_params(t, params);
    Var y = build(t, pv);
    if (!t.value(y).is_scalar())
        throw std::invalid_argument("grad_check_params: function must produce a scalar");
    t.backward(y);

    std::map<std::string, Array> analytic;
    for (const auto& [name, var] : pv.vars) analytic.emplace(name, t.grad(var));

    auto eval = [&](const ParamStore& p) {
        Tape tt;
        ParamVars pp = enter_params(tt, p);
        const double v = tt.scalar_value(build(tt, pp));
        if (!std::isfinite(v))
            throw std::runtime_error("grad_check_params: non-finite function value");
        return v;
    };

    double worst = 0.0;
    ParamStore probe = params;
    for (auto& [name, arr] : probe) {
        for (std::size_t i = 0; i < arr.numel(); ++i) {
            const double keep = arr[i];
            arr[i] = keep + step;
            const double hi = eval(probe);
            arr[i] = keep - step;
            const double lo = eval(probe);
            arr[i] = keep;
            const double fd = (hi - lo) / (2.0 * step);
            const double err =
                std::abs(analytic.at(name)[i] - fd) / std::max(1.0, std::abs(fd));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace cold
