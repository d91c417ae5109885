#pragma once

#include <cstdint>
#include <vector>

#include "recbase/data_pipeline.hpp"

namespace recbase::data {

/// Multi-domain synthetic benchmark: Gaussian domain clusters plus user
/// histories drawn from a per-domain Markov chain that prefers items close
/// in embedding space.
struct BenchmarkConfig {
  size_t n_domains = 5;
  size_t items_per_domain = 120;
  size_t dim = 32;
  double spread = 1.0;
  double mean_scale = 0.5;
  size_t users_per_domain = 120;
  size_t min_length = 16;
  size_t max_length = 30;
  /// Kernel exp(-|e_i - e_j|^2 / (temperature * mean squared distance)),
  /// Sinkhorn-balanced so every item is equally popular.
  double markov_temperature = 0.1;
  uint64_t seed = 7;
};

struct SyntheticBenchmark {
  Catalog catalog;
  EmbeddingMatrix embeddings;              // from formatted descriptions
  EmbeddingMatrix unformatted_embeddings;  // per-domain layouts without a shared format
  std::vector<RawInteractions> interactions;
};

/// Walks never revisit an item within one user history.
SyntheticBenchmark synth_benchmark(const BenchmarkConfig& config);

}  // namespace recbase::data
