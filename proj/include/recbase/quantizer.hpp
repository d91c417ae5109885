#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "recbase/tensor.hpp"

namespace recbase::tok {

/// Per-level code indices of one item.
struct ConceptId {
  std::vector<uint32_t> codes;

  size_t size() const { return codes.size(); }
  uint32_t operator[](size_t i) const { return codes[i]; }
  auto operator<=>(const ConceptId&) const = default;
  std::string to_string() const;
};

struct ConceptIdHash {
  size_t operator()(const ConceptId& id) const noexcept;
};

/// Non-owning view over m level-specific codebooks, each [K, latent_dim].
class CodebookStack {
 public:
  CodebookStack() = default;
  explicit CodebookStack(std::vector<const nn::Tensor*> levels);

  size_t levels() const { return levels_.size(); }
  size_t codebook_size() const { return levels_.empty() ? 0 : levels_[0]->rows(); }
  size_t dim() const { return levels_.empty() ? 0 : levels_[0]->cols(); }
  const nn::Tensor& level(size_t d) const { return *levels_.at(d); }

 private:
  std::vector<const nn::Tensor*> levels_;
};

struct QuantizeResult {
  std::vector<uint32_t> indices;             // one per active level
  std::vector<double> z_q;                   // sum of selected codewords
  std::vector<std::vector<double>> residuals; // r_0 = z, ..., r_active
  std::vector<double> distances;              // squared distance at each level
};

/// Residual quantization over the first `active_levels` codebooks:
/// c_d = argmin_k |r_d - e_k|^2 (lowest index on ties), r_{d+1} = r_d - e_{c_d}.
QuantizeResult residual_quantize(std::span<const double> z, const CodebookStack& stack,
                                 size_t active_levels);

// --- losses -----------------------------------------------------------------

inline constexpr double kEntropyEps = 1e-8;

/// |e - e_hat|^2
double reconstruction_loss(std::span<const double> e, std::span<const double> e_hat);

/// Sum over levels of |sg[r_d] - e_{c_d}|^2 + beta * |r_d - sg[e_{c_d}]|^2 (value only;
/// both terms share the value |r_d - e_{c_d}|^2 and differ in gradient routing).
double quantization_loss(const QuantizeResult& trace, const CodebookStack& stack, double beta);

/// H(p) = -sum_j p_j ln(p_j + eps) for one level's usage distribution.
double usage_entropy(std::span<const double> p);

/// Soft usage distribution of one level: mean over residual rows of
/// softmax_j(-|r_i - e_j|^2).
std::vector<double> soft_usage(const nn::Tensor& residuals, const nn::Tensor& codebook);

struct LossBreakdown {
  double reconstruction = 0.0;  // L_R
  double quantization = 0.0;    // L_Q
  double entropy = 0.0;         // L_E = -sum_d H(p_d)
  double kl = 0.0;
  double total = 0.0;
};

/// Loss of one item given per-level usage distributions. L_E is the negated
/// usage entropy so that minimizing the total spreads codebook usage.
LossBreakdown compute_losses(std::span<const double> e, std::span<const double> e_hat,
                             const QuantizeResult& trace, const CodebookStack& stack,
                             std::span<const std::vector<double>> usage, double beta, double gamma);

// --- diagnostics ------------------------------------------------------------------

struct CodebookDiagnostics {
  std::vector<double> utilization;                  // per level: distinct codes / K
  std::vector<std::vector<double>> usage_frequency; // per level: p_{d,j}
  double collision_rate = 0.0;                      // over full-length IDs
  std::vector<double> collision_rate_by_depth;      // over prefixes of length 1..m
};

CodebookDiagnostics diagnostics(size_t codebook_size, std::span<const ConceptId> assignments);

/// 1 - distinct / total over the first `depth` codes of each id.
double collision_rate(std::span<const ConceptId> ids, size_t depth = std::numeric_limits<size_t>::max());

}  // namespace recbase::tok
