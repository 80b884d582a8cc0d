#pragma once

#include "epglmm/types.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace epglmm {

/// One group of binary responses with its fixed- and random-effect designs.
struct Group {
  std::string label;
  std::vector<int> y;  // 0/1
  Matrix xf;           // n x d^F
  Matrix xr;           // n x d^R

  int size() const { return static_cast<int>(y.size()); }
  SmallVec xr_row(int j) const { return xr.row(j).transpose(); }
};

struct GroupedDataset {
  int dim_fixed = 0;
  int dim_random = 0;
  std::vector<Group> groups;

  int num_groups() const { return static_cast<int>(groups.size()); }
  std::size_t num_observations() const;

  /// Throws std::invalid_argument naming the offending group/row when a
  /// dimension, response value or group size is out of contract.
  void validate() const;
};

}  // namespace epglmm
