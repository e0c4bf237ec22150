#pragma once

#include <Eigen/Dense>

namespace dsqn {

template <class Scalar>
using Vec = Eigen::Vector<Scalar, Eigen::Dynamic>;

template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// Channel-major extents of a feature map; flat vectors index as
// (channel * height + row) * width + col. Dense activations use {n, 1, 1}.
struct TensorShape {
  int channels = 1;
  int height = 1;
  int width = 1;

  int size() const { return channels * height * width; }
  bool operator==(const TensorShape&) const = default;
};

}  // namespace dsqn
