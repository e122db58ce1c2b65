#pragma once

#include <string>
#include <vector>

#include "mmerc/tensor.hpp"

namespace mmerc {

// Diagnostics hook: forward passes append every attention-weight matrix they
// produce, so tests can assert row-stochasticity without re-deriving the
// weights. `mask` is defined only for masked attention (zero rows allowed
// where the mask row is empty).
struct AttnProbe {
  struct Entry {
    std::string where;
    Tensor weights;
    Tensor mask;
  };
  std::vector<Entry> entries;
};

}  // namespace mmerc
