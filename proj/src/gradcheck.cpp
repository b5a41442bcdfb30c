#include "afrpn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "afrpn/rng.hpp"

namespace afrpn {

GradCheckReport grad_check(const std::function<double()>& loss_fn,
                           const std::vector<GradCheckItem>& items, double h,
                           int64_t max_probes_per_tensor, uint64_t probe_seed) {
  GradCheckReport report;
  for (const GradCheckItem& item : items) {
    Tensor& value = *item.value;
    const Tensor& analytic = *item.analytic;
    if (!value.same_shape(analytic))
      throw ShapeError("grad_check: value/gradient shape mismatch for " + item.name);

    const int64_t n = value.numel();
    std::vector<int64_t> probes;
    if (max_probes_per_tensor > 0 && n > max_probes_per_tensor) {
      Rng rng = Rng::child(probe_seed, std::hash<std::string>{}(item.name));
      probes.resize(static_cast<size_t>(max_probes_per_tensor));
      for (int64_t i = 0; i < max_probes_per_tensor; ++i)
        probes[static_cast<size_t>(i)] =
            static_cast<int64_t>(rng.below(static_cast<uint64_t>(n)));
    } else {
      probes.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) probes[static_cast<size_t>(i)] = i;
    }

    for (int64_t idx : probes) {
      double& slot = value.data[static_cast<size_t>(idx)];
      const double saved = slot;
      slot = saved + h;
      const double lp = loss_fn();
      slot = saved - h;
      const double lm = loss_fn();
      slot = saved;
      const double numeric = (lp - lm) / (2.0 * h);
      const double a = analytic.data[static_cast<size_t>(idx)];
      const double rel =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_item = item.name;
        report.worst_index = idx;
      }
    }
  }
  return report;
}

}  // namespace afrpn
