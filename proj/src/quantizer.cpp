#include "recbase/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "recbase/error.hpp"
#include "recbase/kmeans.hpp"

namespace recbase::tok {

std::string ConceptId::to_string() const {
  std::string out = "(";
  for (size_t i = 0; i < codes.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(codes[i]);
  }
  return out + ")";
}

size_t ConceptIdHash::operator()(const ConceptId& id) const noexcept {
  size_t h = 0xcbf29ce484222325ULL;
  for (uint32_t c : id.codes) {
    h ^= c + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  }
  return h;
}

CodebookStack::CodebookStack(std::vector<const nn::Tensor*> levels) : levels_(std::move(levels)) {
  for (const auto* level : levels_) {
    if (level->rank() != 2 || level->rows() == 0) {
      throw Error(ErrorKind::kShape, "codebook level must be a non-empty [K, dim] matrix");
    }
    if (level->shape() != levels_.front()->shape()) {
      throw ShapeError("CodebookStack", levels_.front()->shape(), level->shape());
    }
  }
}

QuantizeResult residual_quantize(std::span<const double> z, const CodebookStack& stack, size_t active_levels) {
  if (active_levels == 0 || active_levels > stack.levels()) {
    throw Error(ErrorKind::kState, "residual_quantize: active_levels " + std::to_string(active_levels) +
                                       " outside [1, " + std::to_string(stack.levels()) + "]");
  }
  if (z.size() != stack.dim()) throw ShapeError("residual_quantize", {z.size()}, {stack.dim()});
  const size_t dim = z.size();
  QuantizeResult res;
  res.z_q.assign(dim, 0.0);
  res.residuals.emplace_back(z.begin(), z.end());
  for (size_t d = 0; d < active_levels; ++d) {
    const auto& book = stack.level(d);
    const auto& r = res.residuals.back();
    double dist;
    const size_t c = nearest_row(book, r.data(), &dist);
    res.indices.push_back(static_cast<uint32_t>(c));
    res.distances.push_back(dist);
    std::vector<double> next(dim);
    for (size_t j = 0; j < dim; ++j) {
      next[j] = r[j] - book.at(c, j);
      res.z_q[j] += book.at(c, j);
    }
    res.residuals.push_back(std::move(next));
  }
  return res;
}

double reconstruction_loss(std::span<const double> e, std::span<const double> e_hat) {
  if (e.size() != e_hat.size()) throw ShapeError("reconstruction_loss", {e.size()}, {e_hat.size()});
  double s = 0.0;
  for (size_t i = 0; i < e.size(); ++i) s += (e[i] - e_hat[i]) * (e[i] - e_hat[i]);
  return s;
}

double quantization_loss(const QuantizeResult& trace, const CodebookStack& stack, double beta) {
  double total = 0.0;
  for (size_t d = 0; d < trace.indices.size(); ++d) {
    const auto& r = trace.residuals[d];
    const auto& book = stack.level(d);
    double s = 0.0;
    for (size_t j = 0; j < r.size(); ++j) {
      const double diff = r[j] - book.at(trace.indices[d], j);
      s += diff * diff;
    }
    total += (1.0 + beta) * s;
  }
  return total;
}

double usage_entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) h -= v * std::log(v + kEntropyEps);
  return h;
}

std::vector<double> soft_usage(const nn::Tensor& residuals, const nn::Tensor& codebook) {
  const size_t n = residuals.rows(), k = codebook.rows(), dim = codebook.cols();
  if (residuals.cols() != dim) throw ShapeError("soft_usage", residuals.shape(), codebook.shape());
  std::vector<double> p(k, 0.0), s(k);
  for (size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < k; ++j) {
      double d = 0.0;
      for (size_t c = 0; c < dim; ++c) {
        const double diff = residuals.at(i, c) - codebook.at(j, c);
        d += diff * diff;
      }
      s[j] = -d;
      mx = std::max(mx, s[j]);
    }
    double z = 0.0;
    for (size_t j = 0; j < k; ++j) {
      s[j] = std::exp(s[j] - mx);
      z += s[j];
    }
    for (size_t j = 0; j < k; ++j) p[j] += s[j] / z;
  }
  for (auto& v : p) v /= static_cast<double>(n);
  return p;
}

LossBreakdown compute_losses(std::span<const double> e, std::span<const double> e_hat,
                             const QuantizeResult& trace, const CodebookStack& stack,
                             std::span<const std::vector<double>> usage, double beta, double gamma) {
  if (usage.size() < trace.indices.size()) {
    throw Error(ErrorKind::kShape, "compute_losses: usage must cover every active level");
  }
  LossBreakdown out;
  out.reconstruction = reconstruction_loss(e, e_hat);
  out.quantization = quantization_loss(trace, stack, beta);
  for (size_t d = 0; d < trace.indices.size(); ++d) out.entropy -= usage_entropy(usage[d]);
  out.total = out.reconstruction + out.quantization + gamma * out.entropy;
  return out;
}

double collision_rate(std::span<const ConceptId> ids, size_t depth) {
  if (ids.empty()) return 0.0;
  std::unordered_set<ConceptId, ConceptIdHash> distinct;
  for (const auto& id : ids) {
    ConceptId prefix;
    const size_t len = std::min(depth, id.size());
    prefix.codes.assign(id.codes.begin(), id.codes.begin() + static_cast<std::ptrdiff_t>(len));
    distinct.insert(std::move(prefix));
  }
  return 1.0 - static_cast<double>(distinct.size()) / static_cast<double>(ids.size());
}

CodebookDiagnostics diagnostics(size_t codebook_size, std::span<const ConceptId> assignments) {
  if (assignments.empty()) throw Error(ErrorKind::kData, "diagnostics: no assignments");
  const size_t levels = assignments.front().size();
  CodebookDiagnostics out;
  out.usage_frequency.assign(levels, std::vector<double>(codebook_size, 0.0));
  for (const auto& id : assignments) {
    if (id.size() != levels) throw Error(ErrorKind::kData, "diagnostics: concept ids differ in length");
    for (size_t d = 0; d < levels; ++d) {
      if (id[d] >= codebook_size) throw Error(ErrorKind::kData, "diagnostics: code out of range");
      out.usage_frequency[d][id[d]] += 1.0;
    }
  }
  const auto n = static_cast<double>(assignments.size());
  for (auto& level : out.usage_frequency) {
    size_t used = 0;
    for (auto& c : level) {
      if (c > 0.0) ++used;
      c /= n;
    }
    out.utilization.push_back(static_cast<double>(used) / static_cast<double>(codebook_size));
  }
  for (size_t depth = 1; depth <= levels; ++depth) {
    out.collision_rate_by_depth.push_back(collision_rate(assignments, depth));
  }
  out.collision_rate = levels ? out.collision_rate_by_depth.back() : 0.0;
  return out;
}

}  // namespace recbase::tok
