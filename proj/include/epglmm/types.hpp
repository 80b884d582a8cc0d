#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace epglmm {

// Random-effect dimensions stay small; bounded storage keeps the inner
// message-passing loop free of heap allocation.
inline constexpr int kMaxRandomDim = 8;
inline constexpr int kMaxHalfLen = kMaxRandomDim * (kMaxRandomDim + 1) / 2;

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

using SmallVec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxRandomDim, 1>;
using SmallMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor,
                               kMaxRandomDim, kMaxRandomDim>;
using HalfVec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxHalfLen, 1>;

/// Raised when a computation meets an input outside its numerical domain
/// (non-SPD matrix, failed iteration). Callers decide whether to retry.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

constexpr int half_length(int d) { return d * (d + 1) / 2; }

}  // namespace epglmm
