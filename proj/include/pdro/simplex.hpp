#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "pdro/error.hpp"

namespace pdro {

/// Nonnegative weights summing to one. Construction validates; the softmax and
/// normalizing factories renormalize so the invariant holds to rounding.
class SimplexVector {
 public:
  static constexpr double kTolerance = 1e-10;

  SimplexVector() = default;

  explicit SimplexVector(Eigen::VectorXd weights) : w_(std::move(weights)) {
    if (w_.size() == 0) throw ParameterError("simplex vector must be nonempty");
    for (Eigen::Index i = 0; i < w_.size(); ++i) {
      if (!std::isfinite(w_[i]) || w_[i] < 0.0) {
        throw ParameterError("simplex weight " + std::to_string(i) + " is negative or non-finite");
      }
    }
    if (std::abs(w_.sum() - 1.0) > kTolerance) {
      throw ParameterError("simplex weights sum to " + std::to_string(w_.sum()) + ", not 1");
    }
  }

  SimplexVector(std::initializer_list<double> weights)
      : SimplexVector(Eigen::Map<const Eigen::VectorXd>(weights.begin(),
                                                        static_cast<Eigen::Index>(weights.size()))) {}

  static SimplexVector uniform(Eigen::Index k) {
    if (k < 1) throw ParameterError("simplex dimension must be at least 1");
    return SimplexVector(Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k)));
  }

  // Divides by the sum; entries must already be nonnegative.
  static SimplexVector normalized(Eigen::VectorXd raw) {
    const double total = raw.sum();
    if (!(total > 0.0) || !std::isfinite(total)) {
      throw NumericError("cannot normalize weights with non-positive sum");
    }
    raw /= total;
    return SimplexVector(std::move(raw));
  }

  static SimplexVector softmax(const Eigen::Ref<const Eigen::VectorXd>& z) {
    if (z.size() == 0) throw ParameterError("softmax of empty vector");
    Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp();
    return normalized(std::move(e));
  }

  Eigen::Index size() const { return w_.size(); }
  double operator[](Eigen::Index i) const { return w_[i]; }
  const Eigen::VectorXd& weights() const { return w_; }

  std::vector<double> to_vector() const { return {w_.data(), w_.data() + w_.size()}; }

  friend bool operator==(const SimplexVector& a, const SimplexVector& b) {
    return a.w_.size() == b.w_.size() && a.w_ == b.w_;
  }

 private:
  Eigen::VectorXd w_;
};

}  // namespace pdro
