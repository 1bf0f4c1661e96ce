#pragma once

#include <Eigen/Dense>

#include <vector>

namespace ensembits::training {

struct Assignment {
  std::vector<int> column_of_row;  // injective row -> column map
  double cost = 0.0;
};

/// Minimum-cost injective assignment of the n rows of `cost` to its m >= n columns.
Assignment hungarian_assignment(const Eigen::MatrixXd& cost);

}  // namespace ensembits::training
