#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "phynfp/tensor.hpp"

namespace phynfp::testing {

using LossFn = std::function<ad::Tensor(ad::Tape&, const std::vector<ad::Tensor>&)>;

/// Tape gradient and central-difference estimate for one input.
struct GradientPair {
  Eigen::MatrixXd analytic;
  Eigen::MatrixXd numeric;
};

inline std::vector<GradientPair> gradient_pairs(const LossFn& f, std::vector<Eigen::MatrixXd> inputs,
                                                double step = 1e-6) {
  std::vector<GradientPair> out;
  {
    ad::Tape tape;
    std::vector<ad::Tensor> vars;
    for (const auto& x : inputs) vars.push_back(tape.variable(x));
    const auto grads = tape.backward(f(tape, vars));
    for (std::size_t k = 0; k < vars.size(); ++k) {
      out.push_back({grads[vars[k]], Eigen::MatrixXd::Zero(inputs[k].rows(), inputs[k].cols())});
    }
  }
  auto eval = [&](const std::vector<Eigen::MatrixXd>& xs) {
    ad::Tape tape;
    std::vector<ad::Tensor> vars;
    for (const auto& x : xs) vars.push_back(tape.constant(x));
    return f(tape, vars).value()(0, 0);
  };
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k].data()[i];
      inputs[k].data()[i] = orig + step;
      const double up = eval(inputs);
      inputs[k].data()[i] = orig - step;
      const double down = eval(inputs);
      inputs[k].data()[i] = orig;
      out[k].numeric.data()[i] = (up - down) / (2.0 * step);
    }
  }
  return out;
}

/// Largest entry-wise relative error, with max(|a|, |b|, floor) in the denominator.
inline double max_gradient_error(const LossFn& f, std::vector<Eigen::MatrixXd> inputs, double step = 1e-6,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (const auto& p : gradient_pairs(f, std::move(inputs), step)) {
    for (Eigen::Index i = 0; i < p.analytic.size(); ++i) {
      const double a = p.analytic.data()[i], n = p.numeric.data()[i];
      worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}));
    }
  }
  return worst;
}

/// Largest per-input relative error ||a - n|| / max(||a||, ||n||); inputs whose
/// gradients are both exactly zero count as 0.
inline double max_normwise_error(const std::vector<GradientPair>& pairs) {
  double worst = 0.0;
  for (const auto& p : pairs) {
    const double scale = std::max(p.analytic.norm(), p.numeric.norm());
    if (scale == 0.0) continue;
    worst = std::max(worst, (p.analytic - p.numeric).norm() / scale);
  }
  return worst;
}

}  // namespace phynfp::testing
