#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "fewview/autodiff.hpp"
#include "fewview/error.hpp"

namespace fewview {

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::string worst_parameter;
    ad::Index worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
};

/// Compares reverse-mode gradients of a scalar objective against central
/// finite differences, perturbing every parameter entry by +-eps.
///
/// `objective` must rebuild the computation on the tape it is handed and
/// return the scalar root. Error per entry is
/// |analytic - numeric| / (|analytic| + eps_floor); the maximum is returned.
inline GradCheckResult finite_difference_check(ad::ParameterStore& params,
                                               const std::function<ad::Var(ad::Tape&)>& objective,
                                               double eps = 1e-5, double eps_floor = 1e-6) {
    if (!(eps > 0.0 && eps <= 1e-2)) throw ConfigError("finite_difference_check: eps must lie in (0, 1e-2]");

    params.zero_grad();
    {
        ad::Tape tape;
        ad::Var root = objective(tape);
        tape.backward(root);
    }

    auto evaluate = [&]() {
        ad::Tape tape;
        return objective(tape).scalar();
    };

    GradCheckResult result;
    for (auto& p : params) {
        for (ad::Index i = 0; i < p.size(); ++i) {
            double& x = p.value().data()[i];
            const double saved = x;
            x = saved + eps;
            const double up = evaluate();
            x = saved - eps;
            const double down = evaluate();
            x = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double analytic = p.grad().data()[i];
            const double err = std::abs(analytic - numeric) / (std::abs(analytic) + eps_floor);
            if (err > result.max_relative_error || result.worst_index < 0) {
                result.max_relative_error = std::max(err, result.max_relative_error);
                result.worst_parameter = p.name();
                result.worst_index = i;
                result.analytic = analytic;
                result.numeric = numeric;
            }
        }
    }
    return result;
}

}  // namespace fewview
