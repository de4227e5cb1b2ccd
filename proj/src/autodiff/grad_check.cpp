#include "pursuit/autodiff/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace pursuit::ad {
namespace {

double relative_error(double analytic, double numeric) {
  if (std::isnan(analytic) || std::isnan(numeric)) return std::numeric_limits<double>::quiet_NaN();
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

}  // namespace

double grad_check(const ScalarFn& f, const DiffArray& x, double h) {
  DiffArray probe = DiffArray::parameter(x.shape(), std::vector<double>(x.values().begin(), x.values().end()));
  const DiffArray out = f(probe);
  if (std::isnan(out.item())) return std::numeric_limits<double>::quiet_NaN();
  backward(out);
  std::vector<double> analytic(probe.size(), 0.0);
  if (probe.has_grad()) std::copy(probe.grad().begin(), probe.grad().end(), analytic.begin());

  NoGradGuard no_grad;
  double worst = 0.0;
  auto values = probe.mutable_values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = f(probe).item();
    values[i] = saved - h;
    const double down = f(probe).item();
    values[i] = saved;
    const double err = relative_error(analytic[i], (up - down) / (2.0 * h));
    if (std::isnan(err)) return err;
    worst = std::max(worst, err);
  }
  return worst;
}

double grad_check_store(const std::function<DiffArray()>& loss, ParamStore& store, double h,
                        std::size_t per_tensor) {
  store.zero_grad();
  const DiffArray out = loss();
  if (std::isnan(out.item())) return std::numeric_limits<double>::quiet_NaN();
  backward(out);

  NoGradGuard no_grad;
  double worst = 0.0;
  for (auto& [name, entry] : store.entries()) {
    DiffArray& p = entry.value;
    const std::vector<double> analytic = p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                                                      : std::vector<double>(p.size(), 0.0);
    auto values = p.mutable_values();
    const std::size_t n = values.size();
    const std::size_t count = per_tensor == 0 ? n : std::min(per_tensor, n);
    const std::size_t stride = std::max<std::size_t>(1, n / std::max<std::size_t>(count, 1));
    for (std::size_t c = 0; c < count; ++c) {
      const std::size_t i = (c * stride + c / 2) % n;
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss().item();
      values[i] = saved - h;
      const double down = loss().item();
      values[i] = saved;
      const double err = relative_error(analytic[i], (up - down) / (2.0 * h));
      if (std::isnan(err)) return err;
      worst = std::max(worst, err);
    }
  }
  store.zero_grad();
  return worst;
}

}  // namespace pursuit::ad
