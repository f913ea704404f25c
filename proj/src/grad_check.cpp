#include "hivis/grad_check.hpp"

#include <cmath>

#include "hivis/common.hpp"

namespace hivis {

double grad_check(const GradCheckFn& fn, std::vector<Tensor> params, double eps) {
    if (eps <= 0.0) fail("grad_check: eps must be positive");
    std::vector<Tensor> analytic;
    double base = fn(params, &analytic);
    double again = fn(params, nullptr);
    if (base != again) fail("grad_check: fn is not deterministic");
    if (analytic.size() != params.size()) fail("grad_check: gradient count mismatch");

    double worst = 0.0;
    for (size_t p = 0; p < params.size(); ++p) {
        if (!analytic[p].same_shape(params[p]))
            fail("grad_check: gradient shape mismatch for param " + std::to_string(p));
        for (size_t i = 0; i < params[p].data.size(); ++i) {
            double keep = params[p].data[i];
            params[p].data[i] = keep + eps;
            double up = fn(params, nullptr);
            params[p].data[i] = keep - eps;
            double down = fn(params, nullptr);
            params[p].data[i] = keep;
            double fd = (up - down) / (2.0 * eps);
            double an = analytic[p].data[i];
            double denom = std::max({1e-6, std::fabs(an), std::fabs(fd)});
            worst = std::max(worst, std::fabs(an - fd) / denom);
        }
    }
    return worst;
}

}  // namespace hivis
