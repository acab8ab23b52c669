#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "agpc/tensor.hpp"

namespace agpc {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst;  // "param[i] coordinate j" of the largest error
    std::int64_t coordinates = 0;  // compared coordinates
    std::int64_t skipped = 0;      // coordinates judged non-smooth (see GradCheckOptions)
};

struct GradCheckOptions {
    double step = 1e-5;
    /// Combines central differences at step and step/2 as (4 D(h/2) - D(h)) / 3, cancelling the
    /// h^2 truncation term; lets a larger step keep rounding noise low.
    bool richardson = false;
    /// Checks at most this many coordinates per parameter tensor (sampled with `seed`); <= 0 checks all.
    int max_coords_per_param = 0;
    std::uint64_t seed = 0;
    /// Lower bound of the relative-error denominator.
    double denominator_floor = 1e-8;
    /// When positive, a coordinate whose differences at step and step/2 disagree by more than
    /// this fraction of max(|D(h/2)|, floor) is counted as skipped instead of compared. Smooth
    /// losses disagree by O(h^2); a ReLU kink inside the stencil, or rounding that swamps a tiny
    /// derivative, does not. The decision never looks at the analytic gradient.
    double smoothness_tolerance = 0.0;
};

/// Compares `analytic` against central differences of `loss` over `params`. Relative error per
/// coordinate is |a - n| / max(|a|, |n|, floor). `loss` must be deterministic.
GradCheckReport grad_check_against(const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>> params,
                                   const std::vector<std::vector<double>>& analytic,
                                   const GradCheckOptions& options = {});

/// Runs one backward pass for the analytic gradient, then grad_check_against.
GradCheckReport grad_check(const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>> params,
                           const GradCheckOptions& options = {});

}  // namespace agpc
