#include "ripple/grad_vector.hpp"

#include <cmath>
#include <stdexcept>

namespace ripple::ad {

GradientVector GradientVector::from_named(const NamedParams& grads) {
    GradientVector g;
    std::int64_t off = 0;
    for (const auto& [name, t] : grads) {
        g.layout.push_back({name, off, t.numel()});
        g.values.insert(g.values.end(), t.data.begin(), t.data.end());
        off += t.numel();
    }
    return g;
}

GradientVector finite_difference_gradient(
    const std::function<double(const NamedParams&)>& loss,
    const NamedParams& params, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("finite_difference_gradient: eps must be positive");
    NamedParams work = params;
    GradientVector g;
    std::int64_t off = 0;
    for (auto& [name, t] : work) {
        g.layout.push_back({name, off, t.numel()});
        for (std::int64_t i = 0; i < t.numel(); ++i) {
            const double saved = t.data[static_cast<size_t>(i)];
            t.data[static_cast<size_t>(i)] = saved + eps;
            const double up = loss(work);
            t.data[static_cast<size_t>(i)] = saved - eps;
            const double down = loss(work);
            t.data[static_cast<size_t>(i)] = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw std::runtime_error("finite_difference_gradient: non-finite loss at perturbed point of '" + name + "'");
            g.values.push_back((up - down) / (2.0 * eps));
        }
        off += t.numel();
    }
    return g;
}

}  // namespace ripple::ad
