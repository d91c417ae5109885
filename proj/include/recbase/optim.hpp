#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "recbase/tensor.hpp"

namespace recbase::nn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // empty until the first zero_grad()
  Tensor m;     // Adam first moment
  Tensor v;     // Adam second moment
  bool trainable = true;
};

/// Named parameters with stable indices and per-parameter Adam state.
class ParameterStore {
 public:
  /// Registers a zero-valued parameter. Names must be unique.
  size_t add(const std::string& name, std::vector<size_t> shape, bool trainable = true);

  Parameter& at(size_t id) { return params_.at(id); }
  const Parameter& at(size_t id) const { return params_.at(id); }
  Parameter& at(const std::string& name) { return params_.at(id_of(name)); }
  const Parameter& at(const std::string& name) const { return params_.at(id_of(name)); }
  size_t id_of(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.contains(name); }

  Tensor& value(size_t id) { return params_[id].value; }
  const Tensor& value(size_t id) const { return params_[id].value; }
  Tensor& grad(size_t id) { return params_[id].grad; }

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  size_t size() const { return params_.size(); }

  uint64_t step() const { return step_; }
  void set_step(uint64_t s) { step_ = s; }

  /// Allocates (first call) or clears every gradient buffer.
  void zero_grad();
  /// Rounds values and optimizer moments to float32 precision.
  void round_to_storage();
  /// Clears optimizer moments of one parameter (e.g. after reinitialization).
  void reset_moments(size_t id);
  size_t total_elements() const;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, size_t> index_;
  uint64_t step_ = 0;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
};

/// One bias-corrected Adam update of every trainable parameter; increments the
/// step count and rounds the updated state to float32 storage precision.
void adam_step(ParameterStore& store, const AdamConfig& config);

/// Euclidean norm over all trainable gradients.
double gradient_norm(const ParameterStore& store);

}  // namespace recbase::nn
