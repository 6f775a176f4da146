#include "interlock/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "interlock/errors.hpp"
#include "interlock/rng.hpp"

namespace interlock {

GradCheckReport grad_check(const std::vector<Parameter*>& params,
                           const std::function<double()>& loss,
                           const std::function<void()>& compute_grads,
                           double eps,
                           int max_coords,
                           std::uint64_t coord_seed) {
    if (eps <= 0.0) throw ConfigError("grad_check: eps must be positive");

    for (Parameter* p : params) p->zero_grad();
    compute_grads();
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (Parameter* p : params) analytic.push_back(p->grad);

    GradCheckReport rep;
    Rng rng(derive_seed(coord_seed, "gradcheck-coords"));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter& p = *params[pi];
        const std::int64_t total = p.value.size();
        std::vector<std::int64_t> coords;
        if (max_coords > 0 && total > max_coords) {
            for (int i = 0; i < max_coords; ++i) coords.push_back(rng.uniform_int(static_cast<int>(total)));
            std::sort(coords.begin(), coords.end());
            coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
        } else {
            coords.resize(static_cast<std::size_t>(total));
            for (std::int64_t i = 0; i < total; ++i) coords[static_cast<std::size_t>(i)] = i;
        }
        for (std::int64_t c : coords) {
            const double saved = p.value[c];
            p.value[c] = saved + eps;
            const double up = loss();
            p.value[c] = saved - eps;
            const double down = loss();
            p.value[c] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[pi][c];
            const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = p.id;
                rep.worst_coord = c;
                rep.worst_analytic = a;
                rep.worst_numeric = numeric;
            }
        }
    }
    return rep;
}

}  // namespace interlock
