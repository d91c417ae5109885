#include "recbase/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "recbase/error.hpp"
#include "recbase/rng.hpp"

namespace recbase::data {
namespace {

// Random orthogonal matrix by Gram-Schmidt on a Gaussian matrix, row-major.
std::vector<double> random_rotation(size_t dim, Rng& rng) {
  std::vector<double> q(dim * dim);
  for (auto& v : q) v = rng.normal();
  for (size_t i = 0; i < dim; ++i) {
    double* row = q.data() + i * dim;
    for (size_t j = 0; j < i; ++j) {
      const double* prev = q.data() + j * dim;
      double dot = 0.0;
      for (size_t k = 0; k < dim; ++k) dot += row[k] * prev[k];
      for (size_t k = 0; k < dim; ++k) row[k] -= dot * prev[k];
    }
    double norm = 0.0;
    for (size_t k = 0; k < dim; ++k) norm += row[k] * row[k];
    norm = std::sqrt(norm);
    for (size_t k = 0; k < dim; ++k) row[k] /= norm;
  }
  return q;
}

double squared_distance(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (size_t k = 0; k < a.size(); ++k) {
    const double d = static_cast<double>(a[k]) - b[k];
    s += d * d;
  }
  return s;
}

}  // namespace

SyntheticBenchmark synth_benchmark(const BenchmarkConfig& cfg) {
  if (cfg.users_per_domain == 0) throw Error(ErrorKind::kConfig, "synth_benchmark: users_per_domain must be positive");
  if (cfg.min_length < 2 || cfg.max_length < cfg.min_length) {
    throw Error(ErrorKind::kConfig, "synth_benchmark: need 2 <= min_length <= max_length");
  }
  if (cfg.max_length > cfg.items_per_domain) {
    throw Error(ErrorKind::kConfig, "synth_benchmark: max_length exceeds items_per_domain (walks do not revisit)");
  }
  if (!(cfg.markov_temperature > 0.0)) throw Error(ErrorKind::kConfig, "synth_benchmark: markov_temperature must be positive");

  auto base = synth_embeddings(cfg.n_domains, cfg.items_per_domain, cfg.dim, cfg.spread, cfg.seed, cfg.mean_scale);
  SyntheticBenchmark out;
  out.catalog = std::move(base.catalog);
  out.embeddings = std::move(base.embeddings);

  const size_t n = cfg.items_per_domain;
  const size_t dim = cfg.dim;
  std::vector<float> rotated(out.embeddings.values().size());
  for (size_t d = 0; d < cfg.n_domains; ++d) {
    Rng rot_rng(cfg.seed, "synth/rotation", d);
    const auto q = random_rotation(dim, rot_rng);
    for (size_t i = 0; i < n; ++i) {
      const auto e = out.embeddings.row(d * n + i);
      for (size_t r = 0; r < dim; ++r) {
        double s = 0.0;
        for (size_t k = 0; k < dim; ++k) s += q[r * dim + k] * e[k];
        rotated[(d * n + i) * dim + r] = static_cast<float>(s);
      }
    }
  }
  out.unformatted_embeddings = EmbeddingMatrix(dim, out.embeddings.ids(), std::move(rotated));

  for (size_t d = 0; d < cfg.n_domains; ++d) {
    const std::string tag = domain_label(d);
    std::vector<double> dist(n * n);
    double mean_sq = 0.0;
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = 0; j < n; ++j) {
        dist[i * n + j] = squared_distance(out.embeddings.row(d * n + i), out.embeddings.row(d * n + j));
        mean_sq += dist[i * n + j];
      }
    }
    mean_sq /= static_cast<double>(n * (n - 1));
    const double scale = cfg.markov_temperature * mean_sq;

    // Symmetric Sinkhorn scaling makes the kernel doubly stochastic, so every
    // item has the same stationary mass and only the sequential pattern is planted.
    std::vector<double> kernel(n * n, 0.0);
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = 0; j < n; ++j) {
        if (i != j) kernel[i * n + j] = std::exp(-dist[i * n + j] / scale);
      }
    }
    std::vector<double> x(n, 1.0);
    for (size_t it = 0; it < 500; ++it) {
      for (size_t i = 0; i < n; ++i) {
        double kx = 0.0;
        for (size_t j = 0; j < n; ++j) kx += kernel[i * n + j] * x[j];
        x[i] = std::sqrt(x[i] / kx);
      }
    }
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = 0; j < n; ++j) kernel[i * n + j] *= x[i] * x[j];
    }

    Rng rng(cfg.seed, "synth/walks", d);
    std::vector<double> weight(n);
    for (size_t u = 0; u < cfg.users_per_domain; ++u) {
      const size_t length = cfg.min_length + rng.uniform_int(cfg.max_length - cfg.min_length + 1);
      std::vector<bool> visited(n, false);
      RawInteractions user;
      user.user_id = tag + "-u" + std::to_string(u);
      size_t cur = rng.uniform_int(n);
      for (size_t step = 0;; ++step) {
        visited[cur] = true;
        user.items.push_back(out.embeddings.ids()[d * n + cur]);
        if (step + 1 == length) break;
        double total = 0.0;
        for (size_t j = 0; j < n; ++j) {
          weight[j] = visited[j] ? 0.0 : kernel[cur * n + j];
          total += weight[j];
        }
        size_t next = n;
        if (total > 0.0) {
          double r = rng.uniform() * total;
          for (size_t j = 0; j < n; ++j) {
            if (weight[j] == 0.0) continue;
            next = j;
            r -= weight[j];
            if (r < 0.0) break;
          }
        }
        if (next == n) {
          // Every unvisited neighbour underflowed: fall back to the nearest one.
          double best = INFINITY;
          for (size_t j = 0; j < n; ++j) {
            if (!visited[j] && dist[cur * n + j] < best) best = dist[cur * n + j], next = j;
          }
        }
        cur = next;
      }
      out.interactions.push_back(std::move(user));
    }
  }
  return out;
}

}  // namespace recbase::data
