#include "recbase/kmeans.hpp"

#include <limits>

#include "recbase/error.hpp"
#include "recbase/rng.hpp"

namespace recbase::tok {
namespace {

double sq_dist(const double* a, const double* b, size_t dim) {
  double s = 0.0;
  for (size_t i = 0; i < dim; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

size_t nearest_row(const nn::Tensor& centroids, const double* point, double* best_dist) {
  const size_t dim = centroids.cols();
  size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (size_t k = 0; k < centroids.rows(); ++k) {
    const double d = sq_dist(centroids.data() + k * dim, point, dim);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  if (best_dist) *best_dist = best_d;
  return best;
}

KMeansResult kmeans(const nn::Tensor& points, int64_t k_signed, size_t max_iters, uint64_t seed) {
  if (k_signed <= 0) throw Error(ErrorKind::kConfig, "kmeans: K must be positive");
  if (points.size() == 0) throw Error(ErrorKind::kData, "kmeans: no points");
  const auto k = static_cast<size_t>(k_signed);
  const size_t n = points.rows(), dim = points.cols();

  KMeansResult res;
  res.centroids = nn::Tensor({k, dim});
  Rng rng(seed, "kmeans/seeding");

  // k-means++ seeding.
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  size_t pick = rng.uniform_int(n);
  for (size_t c = 0; c < k; ++c) {
    std::copy_n(points.data() + pick * dim, dim, res.centroids.data() + c * dim);
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_dist(points.data() + i * dim, res.centroids.data() + c * dim, dim));
      total += d2[i];
    }
    if (c + 1 == k) break;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      // Every point already coincides with a centroid; duplicate uniformly.
      pick = rng.uniform_int(n);
    }
  }

  res.assignment.assign(n, 0);
  std::vector<double> sums(k * dim);
  std::vector<size_t> counts(k);
  for (size_t iter = 0; iter <= max_iters; ++iter) {
    bool changed = false;
    double inertia = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double d;
      const size_t a = nearest_row(res.centroids, points.data() + i * dim, &d);
      if (iter == 0 || a != res.assignment[i]) changed = true;
      res.assignment[i] = a;
      inertia += d;
    }
    res.inertia_history.push_back(inertia);
    res.inertia = inertia;
    res.iterations = iter;
    if (!changed || iter == max_iters) break;

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (size_t i = 0; i < n; ++i) {
      const size_t a = res.assignment[i];
      ++counts[a];
      for (size_t j = 0; j < dim; ++j) sums[a * dim + j] += points.at(i, j);
    }
    for (size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (size_t j = 0; j < dim; ++j) {
        res.centroids.at(c, j) = sums[c * dim + j] / static_cast<double>(counts[c]);
      }
    }
  }
  return res;
}

}  // namespace recbase::tok
