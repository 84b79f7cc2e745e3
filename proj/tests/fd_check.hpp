#pragma once

// Central finite-difference gradient oracle. Independent of the tape's
// backward pass: it re-evaluates the loss as a pure function of perturbed
// parameter values. Used by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "derlab/param_store.hpp"
#include "derlab/tape.hpp"

namespace derlab::testing {

// make_loss builds a fresh tape from the current store contents and returns
// the scalar loss id. Returns the max error over all elements of `names`,
// where err = |analytic - numeric| / max(1, |analytic|, |numeric|).
inline double max_fd_error(ParamStore& ps, const std::vector<std::string>& names,
                           const std::function<Tape::Id(Tape&)>& make_loss, double h = 1e-6) {
    Tape tape;
    const Tape::Id loss = make_loss(tape);
    tape.backward(loss);

    std::map<std::string, std::vector<double>> analytic;
    for (const std::string& name : names) {
        Tensor& p = ps.at(name);
        if (p.grad.empty()) p.grad.assign(p.values.size(), 0.0);
        analytic[name] = p.grad;
        p.clear_grad();
    }
    ps.clear_pending();

    auto eval = [&]() {
        Tape t;
        return t.value(make_loss(t)).values[0];
    };

    double max_err = 0.0;
    for (const std::string& name : names) {
        std::vector<double>& vals = ps.at(name).values;
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double orig = vals[i];
            vals[i] = orig + h;
            const double lp = eval();
            vals[i] = orig - h;
            const double lm = eval();
            vals[i] = orig;
            const double numeric = (lp - lm) / (2.0 * h);
            const double a = analytic[name][i];
            const double err =
                std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace derlab::testing
