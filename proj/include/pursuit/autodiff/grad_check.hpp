#pragma once

#include <cstddef>
#include <functional>

#include "pursuit/autodiff/diff_array.hpp"
#include "pursuit/autodiff/param_store.hpp"

namespace pursuit::ad {

using ScalarFn = std::function<DiffArray(const DiffArray&)>;

/// Max over components of |analytic - central difference| / max(1, |analytic|).
/// Returns NaN when f produces NaN.
double grad_check(const ScalarFn& f, const DiffArray& x, double h = 1e-5);

/// Same measure over the parameters of a store. `loss` rebuilds the scalar
/// from the store's current values. At most `per_tensor` components of each
/// parameter are probed (0 = all), chosen by a fixed stride.
double grad_check_store(const std::function<DiffArray()>& loss, ParamStore& store, double h = 1e-5,
                        std::size_t per_tensor = 0);

}  // namespace pursuit::ad
