#pragma once

#include <functional>
#include <string>
#include <vector>

#include "afrpn/tensor.hpp"

namespace afrpn {

// One tensor to probe: the value that gets perturbed and the analytic
// gradient computed for it by a backward pass.
struct GradCheckItem {
  std::string name;
  Tensor* value = nullptr;
  const Tensor* analytic = nullptr;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_item;
  int64_t worst_index = -1;
};

// Central finite differences against precomputed analytic gradients.
// loss_fn must re-evaluate the scalar loss from current tensor values.
// Relative error: |a - n| / max(1, |a|, |n|). When max_probes_per_tensor > 0
// only that many elements per tensor are probed (deterministic subsample).
GradCheckReport grad_check(const std::function<double()>& loss_fn,
                           const std::vector<GradCheckItem>& items,
                           double h = 1e-5,
                           int64_t max_probes_per_tensor = 0,
                           uint64_t probe_seed = 17);

}  // namespace afrpn
