#include "syntaxlm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "syntaxlm/errors.hpp"

namespace syntaxlm {

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

GradCheckResult finite_diff_check(ParamStore& params, const ParamStore& analytic,
                                  const std::function<double(const ParamStore&)>& loss, double epsilon,
                                  std::size_t sample, Rng& rng) {
    if (!(epsilon >= 1e-7 && epsilon <= 1e-3))
        throw std::invalid_argument("finite-difference epsilon must lie in [1e-7, 1e-3]");
    if (!analytic.same_layout(params)) throw std::invalid_argument("analytic gradient layout differs from parameters");
    if (params.slot_count() == 0) throw std::invalid_argument("no parameters to check");

    GradCheckResult result;
    const auto grads = analytic.values();
    for (std::size_t k = 0; k < sample; ++k) {
        const auto& slot = params.slot(k % params.slot_count());
        const std::size_t local = rng.index(slot.size());
        const std::size_t flat = slot.offset + local;

        auto values = params.values();
        const double saved = values[flat];
        values[flat] = saved + epsilon;
        const double plus = loss(params);
        values = params.values();
        values[flat] = saved - epsilon;
        const double minus = loss(params);
        values = params.values();
        values[flat] = saved;
        if (!std::isfinite(plus) || !std::isfinite(minus))
            throw NumericError("non-finite loss while probing " + slot.name);

        const double numeric = (plus - minus) / (2.0 * epsilon);
        GradCheckEntry e{slot.name, local, grads[flat], numeric, relative_error(grads[flat], numeric)};
        result.max_rel_error = std::max(result.max_rel_error, e.rel_error);
        result.entries.push_back(std::move(e));
    }
    return result;
}

}  // namespace syntaxlm
