#include "recbase/optim.hpp"

#include <cmath>

#include "recbase/error.hpp"

namespace recbase::nn {
namespace {

double to_storage(double v) { return static_cast<double>(static_cast<float>(v)); }

void round_tensor(Tensor& t) {
  for (auto& v : t.values()) v = to_storage(v);
}

}  // namespace

size_t ParameterStore::add(const std::string& name, std::vector<size_t> shape, bool trainable) {
  if (index_.contains(name)) throw Error(ErrorKind::kState, "duplicate parameter '" + name + "'");
  Parameter p;
  p.name = name;
  p.value = Tensor(shape);
  p.m = Tensor(shape);
  p.v = Tensor(shape);
  p.trainable = trainable;
  index_.emplace(name, params_.size());
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

size_t ParameterStore::id_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorKind::kMismatch, "unknown parameter '" + name + "'");
  return it->second;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) {
    if (p.grad.same_shape(p.value)) {
      p.grad.fill(0.0);
    } else {
      p.grad = Tensor(p.value.shape());
    }
  }
}

void ParameterStore::round_to_storage() {
  for (auto& p : params_) {
    round_tensor(p.value);
    round_tensor(p.m);
    round_tensor(p.v);
  }
}

void ParameterStore::reset_moments(size_t id) {
  params_.at(id).m.fill(0.0);
  params_.at(id).v.fill(0.0);
}

size_t ParameterStore::total_elements() const {
  size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

double gradient_norm(const ParameterStore& store) {
  double sq = 0.0;
  for (const auto& p : store.params()) {
    if (!p.trainable) continue;
    for (double g : p.grad.values()) sq += g * g;
  }
  return std::sqrt(sq);
}

void adam_step(ParameterStore& store, const AdamConfig& config) {
  for (const auto& p : store.params()) {
    if (p.trainable && !p.grad.same_shape(p.value)) {
      throw Error(ErrorKind::kState, "adam_step: parameter '" + p.name + "' has no gradient");
    }
  }
  double scale = 1.0;
  if (config.clip_norm > 0.0) {
    const double norm = gradient_norm(store);
    if (norm > config.clip_norm) scale = config.clip_norm / norm;
  }
  const uint64_t t = store.step() + 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  for (auto& p : store.params()) {
    if (!p.trainable) continue;
    for (size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i] * scale;
      const double m = config.beta1 * p.m[i] + (1.0 - config.beta1) * g;
      const double v = config.beta2 * p.v[i] + (1.0 - config.beta2) * g * g;
      const double m_hat = m / bc1;
      const double v_hat = v / bc2;
      p.value[i] = to_storage(p.value[i] - config.learning_rate * m_hat / (std::sqrt(v_hat) + config.eps));
      p.m[i] = to_storage(m);
      p.v[i] = to_storage(v);
    }
  }
  store.set_step(t);
}

}  // namespace recbase::nn
