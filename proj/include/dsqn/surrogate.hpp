#pragma once

#include <cmath>
#include <numbers>

namespace dsqn {

// Arctangent relaxation of the unit step, centred so surrogate(0) = 1/2.
// surrogate_grad is its exact derivative; the pair must stay in sync because
// finite-difference checks of the relaxed forward lean on that identity.
template <class Scalar>
inline Scalar surrogate(Scalar x) {
  constexpr Scalar pi = std::numbers::pi_v<Scalar>;
  return std::atan(pi * x) / pi + Scalar(0.5);
}

template <class Scalar>
inline Scalar surrogate_grad(Scalar x) {
  constexpr Scalar pi = std::numbers::pi_v<Scalar>;
  const Scalar px = pi * x;
  return Scalar(1) / (Scalar(1) + px * px);
}

}  // namespace dsqn
