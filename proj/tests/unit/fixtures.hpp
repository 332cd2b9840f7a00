#pragma once

#include <Eigen/Dense>

#include <vector>

#include "kpe/instances.hpp"
#include "kpe/numerics.hpp"

namespace kpe::test {

/// Binary-action dataset from explicit columns.
inline Dataset binary_data(const std::vector<double>& s, const std::vector<int>& a, const std::vector<double>& y) {
  Dataset d;
  const auto n = static_cast<Eigen::Index>(s.size());
  d.states.resize(n, 1);
  d.outcomes.resize(n);
  d.actions.resize(n, 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    d.states(i, 0) = s[i];
    d.outcomes[i] = y[i];
  }
  d.labels = a;
  return d;
}

inline std::vector<Point> random_binary_points(int m, Rng& rng, double treated_rate = 0.7) {
  std::vector<Point> pts;
  for (int i = 0; i < m; ++i) pts.push_back(Point::binary(rng.uniform(), rng.uniform() < treated_rate ? 1 : 0));
  return pts;
}

inline Eigen::VectorXd random_vector(int n, Rng& rng) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

}  // namespace kpe::test
