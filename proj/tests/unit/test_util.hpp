#pragma once

#include "mixsgd/data.hpp"
#include "mixsgd/rng.hpp"
#include "mixsgd/types.hpp"

namespace mixsgd::test {

inline RowMatrix random_matrix(Rng& rng, Index n, Index d) {
  RowMatrix X(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) X(i, j) = rng.normal();
  return X;
}

inline Vector random_vector(Rng& rng, Index d) {
  Vector v(d);
  for (Index i = 0; i < d; ++i) v(i) = rng.normal();
  return v;
}

inline LabeledDataset linear_data(Rng& rng, Index n, const Vector& theta, double noise) {
  RowMatrix X = random_matrix(rng, n, theta.size());
  Vector y = X * theta;
  for (Index i = 0; i < n; ++i) y(i) += noise * rng.normal();
  return LabeledDataset(std::move(X), std::move(y));
}

}  // namespace mixsgd::test
