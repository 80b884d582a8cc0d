#include "epglmm/dataset.hpp"

#include <stdexcept>

namespace epglmm {

std::size_t GroupedDataset::num_observations() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.y.size();
  return n;
}

void GroupedDataset::validate() const {
  if (dim_fixed < 1) throw std::invalid_argument("dataset: need at least one fixed-effect column");
  if (dim_random < 1 || dim_random > kMaxRandomDim) {
    throw std::invalid_argument("dataset: random-effect dimension must lie in [1, " +
                                std::to_string(kMaxRandomDim) + "]");
  }
  if (groups.empty()) throw std::invalid_argument("dataset: no groups");
  for (const auto& g : groups) {
    if (g.y.empty()) throw std::invalid_argument("dataset: group '" + g.label + "' is empty");
    if (g.xf.rows() != g.size() || g.xf.cols() != dim_fixed || g.xr.rows() != g.size() ||
        g.xr.cols() != dim_random) {
      throw std::invalid_argument("dataset: design dimensions mismatch in group '" + g.label + "'");
    }
    for (int j = 0; j < g.size(); ++j) {
      if (g.y[j] != 0 && g.y[j] != 1) {
        throw std::invalid_argument("dataset: response " + std::to_string(g.y[j]) +
                                    " is not 0/1 (group '" + g.label + "', row " +
                                    std::to_string(j + 1) + ")");
      }
    }
    if (!g.xf.allFinite() || !g.xr.allFinite()) {
      throw std::invalid_argument("dataset: non-finite predictor in group '" + g.label + "'");
    }
  }
}

}  // namespace epglmm
