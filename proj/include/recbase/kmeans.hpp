#pragma once

#include <cstdint>
#include <vector>

#include "recbase/tensor.hpp"

namespace recbase::tok {

struct KMeansResult {
  nn::Tensor centroids;                // [k, dim]
  std::vector<size_t> assignment;      // per point
  std::vector<double> inertia_history; // after each assignment step
  double inertia = 0.0;
  size_t iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding over points[N, dim].
/// Deterministic given `seed`; ties in assignment go to the lowest centroid
/// index and empty clusters keep their previous centroid.
KMeansResult kmeans(const nn::Tensor& points, int64_t k, size_t max_iters, uint64_t seed);

/// Index of the nearest row of `centroids` (lowest index on ties).
size_t nearest_row(const nn::Tensor& centroids, const double* point, double* best_dist = nullptr);

}  // namespace recbase::tok
