#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "recbase/layers.hpp"
#include "recbase/optim.hpp"
#include "recbase/rng.hpp"

namespace recbase::ar {

struct ARConfig {
  size_t hidden = 128;
  size_t layers = 4;
  size_t heads = 4;
  size_t context = 512;
  double dropout = 0.0;
  double learning_rate = 1e-3;
  size_t batch_size = 16;
  size_t epochs = 10;
  double clip_norm = 1.0;
  double init_std = 0.02;
  bool zero_init_output = false;
  bool level_masking = true;
  uint64_t seed = 42;

  void validate(size_t period) const;
};

nlohmann::json to_json(const ARConfig& c);
ARConfig ar_config_from_json(const nlohmann::json& j);

/// Pre-norm decoder-only transformer with learned positions and manual backprop.
class Transformer {
 public:
  Transformer(const ARConfig& config, size_t vocab_size);

  struct LayerCache {
    nn::Tensor x_in, ln1_out, qkv, attn, proj, x_mid, ln2_out, fc1, act, fc2;
    nn::LayerNormCache ln1, ln2;
    nn::AttentionCache attention;
    std::vector<double> drop_attn, drop_mlp;  // inverted-dropout multipliers; empty when off
  };
  struct ForwardCache {
    std::vector<int> tokens;
    std::vector<LayerCache> layers;
    nn::Tensor x_final, lnf_out;
    nn::LayerNormCache lnf;
  };

  /// Full causal forward over tokens (length <= context); logits [T, V].
  /// Dropout is applied only when `dropout_rng` is given.
  nn::Tensor forward(std::span<const int> tokens, ForwardCache* cache = nullptr, Rng* dropout_rng = nullptr) const;
  /// Accumulates parameter gradients for d(loss)/d(logits).
  void backward(const ForwardCache& cache, const nn::Tensor& dlogits);

  /// Incremental decoding state (per-layer keys and values).
  struct KvState {
    std::vector<std::vector<double>> keys, values;  // per layer, length * hidden
    size_t length = 0;
    void truncate(size_t len, size_t hidden);
  };
  KvState new_state() const;
  /// Appends one token and returns next-token logits. Matches forward() row-wise.
  std::vector<double> step(KvState& state, int token) const;

  nn::ParameterStore& params() { return params_; }
  const nn::ParameterStore& params() const { return params_; }
  size_t vocab_size() const { return vocab_size_; }
  const ARConfig& config() const { return config_; }

 private:
  struct LayerIds {
    size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_fc1, b_fc1, w_fc2, b_fc2;
  };
  const nn::Tensor& v(size_t id) const { return params_.value(id); }
  nn::Tensor& g(size_t id) { return params_.grad(id); }

  ARConfig config_;
  size_t vocab_size_;
  nn::ParameterStore params_;
  size_t tok_emb_, pos_emb_, lnf_g_, lnf_b_, w_out_, b_out_;
  std::vector<LayerIds> layers_;
};

}  // namespace recbase::ar
