#include "agpc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

namespace agpc {

namespace {
std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}
}  // namespace

GradCheckReport grad_check_against(const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>> params,
                                   const std::vector<std::vector<double>>& analytic,
                                   const GradCheckOptions& options) {
    if (analytic.size() != params.size()) throw UsageError("one analytic gradient per parameter is required");
    GradCheckReport report;
    std::mt19937_64 rng(options.seed);
    NoGradGuard no_grad;
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& values = params[p].values();
        if (analytic[p].size() != values.size()) throw ShapeError("analytic gradient size mismatch");
        std::vector<std::size_t> coords(values.size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (options.max_coords_per_param > 0 && coords.size() > static_cast<std::size_t>(options.max_coords_per_param)) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(static_cast<std::size_t>(options.max_coords_per_param));
        }
        for (std::size_t i : coords) {
            const double saved = values[i];
            auto central = [&](double h) {
                values[i] = saved + h;
                const double up = loss().item();
                values[i] = saved - h;
                const double down = loss().item();
                values[i] = saved;
                return (up - down) / (2.0 * h);
            };
            const double coarse = central(options.step);
            const bool halve = options.richardson || options.smoothness_tolerance > 0;
            const double fine = halve ? central(options.step / 2) : coarse;
            if (options.smoothness_tolerance > 0 &&
                std::abs(coarse - fine) > options.smoothness_tolerance * std::max(std::abs(fine), options.denominator_floor)) {
                ++report.skipped;
                continue;
            }
            const double numeric = options.richardson ? (4.0 * fine - coarse) / 3.0 : coarse;
            const double a = analytic[p][i];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
            ++report.coordinates;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst = "param[" + std::to_string(p) + "] coordinate " + std::to_string(i) + " (analytic " +
                               format_double(a) + ", numeric " + format_double(numeric) + ")";
            }
        }
    }
    return report;
}

GradCheckReport grad_check(const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>> params,
                           const GradCheckOptions& options) {
    for (auto& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    backward(loss());
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params)
        analytic.emplace_back(p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                                           : std::vector<double>(p.values().size(), 0.0));
    return grad_check_against(loss, std::move(params), analytic, options);
}

}  // namespace agpc
