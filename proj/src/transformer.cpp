#include "recbase/transformer.hpp"

#include <cmath>
#include <limits>

#include "recbase/error.hpp"

namespace recbase::ar {

using nn::Tensor;

void ARConfig::validate(size_t period) const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::kConfig, "model config: " + msg); };
  if (hidden == 0 || layers == 0 || heads == 0) fail("hidden, layers and heads must be positive");
  if (hidden % heads != 0) fail("hidden must be divisible by heads");
  if (context < 2 * period + 1) fail("context must hold at least two items");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must lie in [0, 1)");
  if (batch_size == 0) fail("batch_size must be positive");
}

nlohmann::json to_json(const ARConfig& c) {
  return {{"hidden", c.hidden},
          {"layers", c.layers},
          {"heads", c.heads},
          {"context", c.context},
          {"dropout", c.dropout},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"clip_norm", c.clip_norm},
          {"init_std", c.init_std},
          {"zero_init_output", c.zero_init_output},
          {"level_masking", c.level_masking},
          {"seed", c.seed}};
}

ARConfig ar_config_from_json(const nlohmann::json& j) {
  ARConfig c;
  try {
    c.hidden = j.value("hidden", c.hidden);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.context = j.value("context", c.context);
    c.dropout = j.value("dropout", c.dropout);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.init_std = j.value("init_std", c.init_std);
    c.zero_init_output = j.value("zero_init_output", c.zero_init_output);
    c.level_masking = j.value("level_masking", c.level_masking);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfig, std::string("model config: ") + e.what());
  }
  return c;
}

Transformer::Transformer(const ARConfig& config, size_t vocab_size) : config_(config), vocab_size_(vocab_size) {
  const size_t h = config.hidden;
  Rng rng(config.seed, "ar/init");
  auto normal = [&](size_t id, double std) {
    for (auto& x : params_.value(id).values()) x = std * rng.normal();
  };
  tok_emb_ = params_.add("tok_emb", {vocab_size, h});
  normal(tok_emb_, config.init_std);
  pos_emb_ = params_.add("pos_emb", {config.context, h});
  normal(pos_emb_, config.init_std);
  const double proj_std = config.init_std / std::sqrt(2.0 * static_cast<double>(config.layers));
  for (size_t l = 0; l < config.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerIds ids{};
    ids.ln1_g = params_.add(p + "ln1.gamma", {h});
    params_.value(ids.ln1_g).fill(1.0);
    ids.ln1_b = params_.add(p + "ln1.beta", {h});
    ids.w_qkv = params_.add(p + "attn.qkv.weight", {h, 3 * h});
    normal(ids.w_qkv, config.init_std);
    ids.b_qkv = params_.add(p + "attn.qkv.bias", {3 * h});
    ids.w_o = params_.add(p + "attn.out.weight", {h, h});
    normal(ids.w_o, proj_std);
    ids.b_o = params_.add(p + "attn.out.bias", {h});
    ids.ln2_g = params_.add(p + "ln2.gamma", {h});
    params_.value(ids.ln2_g).fill(1.0);
    ids.ln2_b = params_.add(p + "ln2.beta", {h});
    ids.w_fc1 = params_.add(p + "mlp.fc1.weight", {h, 4 * h});
    normal(ids.w_fc1, config.init_std);
    ids.b_fc1 = params_.add(p + "mlp.fc1.bias", {4 * h});
    ids.w_fc2 = params_.add(p + "mlp.fc2.weight", {4 * h, h});
    normal(ids.w_fc2, proj_std);
    ids.b_fc2 = params_.add(p + "mlp.fc2.bias", {h});
    layers_.push_back(ids);
  }
  lnf_g_ = params_.add("lnf.gamma", {h});
  params_.value(lnf_g_).fill(1.0);
  lnf_b_ = params_.add("lnf.beta", {h});
  w_out_ = params_.add("head.weight", {h, vocab_size});
  if (!config.zero_init_output) normal(w_out_, config.init_std);
  b_out_ = params_.add("head.bias", {vocab_size});
  params_.round_to_storage();
}

namespace {

std::vector<double> dropout_mask(size_t n, double rate, Rng* rng) {
  if (!rng || rate <= 0.0) return {};
  std::vector<double> mask(n);
  const double keep = 1.0 - rate;
  for (auto& m : mask) m = rng->uniform() < keep ? 1.0 / keep : 0.0;
  return mask;
}

void apply_mask(Tensor& t, const std::vector<double>& mask) {
  if (mask.empty()) return;
  for (size_t i = 0; i < t.size(); ++i) t[i] *= mask[i];
}

}  // namespace

Tensor Transformer::forward(std::span<const int> tokens, ForwardCache* cache, Rng* dropout_rng) const {
  const size_t t_len = tokens.size(), h = config_.hidden;
  if (t_len == 0 || t_len > config_.context) {
    throw ShapeError("Transformer::forward sequence length", {t_len}, {config_.context});
  }
  Tensor x({t_len, h});
  for (size_t t = 0; t < t_len; ++t) {
    const int tok = tokens[t];
    if (tok < 0 || static_cast<size_t>(tok) >= vocab_size_) {
      throw ShapeError("Transformer::forward token id", {static_cast<size_t>(tok)}, {vocab_size_});
    }
    const auto e = v(tok_emb_).row(static_cast<size_t>(tok));
    const auto p = v(pos_emb_).row(t);
    for (size_t j = 0; j < h; ++j) x.at(t, j) = e[j] + p[j];
  }
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.tokens.assign(tokens.begin(), tokens.end());
  c.layers.assign(layers_.size(), LayerCache{});
  for (size_t l = 0; l < layers_.size(); ++l) {
    const auto& ids = layers_[l];
    auto& lc = c.layers[l];
    lc.x_in = x;
    lc.ln1_out = nn::layer_norm_forward(x, v(ids.ln1_g), v(ids.ln1_b), lc.ln1);
    lc.qkv = nn::linear_forward(lc.ln1_out, v(ids.w_qkv), v(ids.b_qkv));
    lc.attn = nn::causal_self_attention_forward(lc.qkv, config_.heads, lc.attention);
    lc.proj = nn::linear_forward(lc.attn, v(ids.w_o), v(ids.b_o));
    lc.drop_attn = dropout_mask(lc.proj.size(), config_.dropout, dropout_rng);
    Tensor branch = lc.proj;
    apply_mask(branch, lc.drop_attn);
    lc.x_mid = nn::add(x, branch);
    lc.ln2_out = nn::layer_norm_forward(lc.x_mid, v(ids.ln2_g), v(ids.ln2_b), lc.ln2);
    lc.fc1 = nn::linear_forward(lc.ln2_out, v(ids.w_fc1), v(ids.b_fc1));
    lc.act = nn::activation_forward(nn::Activation::kGelu, lc.fc1);
    lc.fc2 = nn::linear_forward(lc.act, v(ids.w_fc2), v(ids.b_fc2));
    lc.drop_mlp = dropout_mask(lc.fc2.size(), config_.dropout, dropout_rng);
    branch = lc.fc2;
    apply_mask(branch, lc.drop_mlp);
    x = nn::add(lc.x_mid, branch);
  }
  c.x_final = x;
  c.lnf_out = nn::layer_norm_forward(x, v(lnf_g_), v(lnf_b_), c.lnf);
  return nn::linear_forward(c.lnf_out, v(w_out_), v(b_out_));
}

void Transformer::backward(const ForwardCache& c, const Tensor& dlogits) {
  const size_t h = config_.hidden;
  Tensor dlnf = nn::linear_backward(c.lnf_out, v(w_out_), dlogits, g(w_out_), g(b_out_));
  Tensor dx = nn::layer_norm_backward(c.x_final, v(lnf_g_), c.lnf, dlnf, g(lnf_g_), g(lnf_b_));
  for (size_t li = layers_.size(); li-- > 0;) {
    const auto& ids = layers_[li];
    const auto& lc = c.layers[li];
    // MLP branch: x_out = x_mid + drop(fc2(gelu(fc1(ln2(x_mid))))).
    Tensor dbranch = dx;
    apply_mask(dbranch, lc.drop_mlp);
    Tensor dact = nn::linear_backward(lc.act, v(ids.w_fc2), dbranch, g(ids.w_fc2), g(ids.b_fc2));
    Tensor dfc1 = nn::activation_backward(nn::Activation::kGelu, lc.fc1, dact);
    Tensor dln2 = nn::linear_backward(lc.ln2_out, v(ids.w_fc1), dfc1, g(ids.w_fc1), g(ids.b_fc1));
    nn::add_inplace(dx, nn::layer_norm_backward(lc.x_mid, v(ids.ln2_g), lc.ln2, dln2, g(ids.ln2_g), g(ids.ln2_b)));
    // Attention branch: x_mid = x_in + drop(out(attn(qkv(ln1(x_in))))).
    dbranch = dx;
    apply_mask(dbranch, lc.drop_attn);
    Tensor dattn = nn::linear_backward(lc.attn, v(ids.w_o), dbranch, g(ids.w_o), g(ids.b_o));
    Tensor dqkv = nn::causal_self_attention_backward(lc.qkv, lc.attention, dattn);
    Tensor dln1 = nn::linear_backward(lc.ln1_out, v(ids.w_qkv), dqkv, g(ids.w_qkv), g(ids.b_qkv));
    nn::add_inplace(dx, nn::layer_norm_backward(lc.x_in, v(ids.ln1_g), lc.ln1, dln1, g(ids.ln1_g), g(ids.ln1_b)));
  }
  auto& gtok = g(tok_emb_);
  auto& gpos = g(pos_emb_);
  for (size_t t = 0; t < c.tokens.size(); ++t) {
    const auto tok = static_cast<size_t>(c.tokens[t]);
    for (size_t j = 0; j < h; ++j) {
      gtok.at(tok, j) += dx.at(t, j);
      gpos.at(t, j) += dx.at(t, j);
    }
  }
}

void Transformer::KvState::truncate(size_t len, size_t hidden) {
  for (auto& k : keys) k.resize(len * hidden);
  for (auto& val : values) val.resize(len * hidden);
  length = len;
}

Transformer::KvState Transformer::new_state() const {
  KvState s;
  s.keys.resize(layers_.size());
  s.values.resize(layers_.size());
  return s;
}

std::vector<double> Transformer::step(KvState& state, int token) const {
  const size_t h = config_.hidden, heads = config_.heads, hd = h / heads;
  const size_t t = state.length;
  if (t >= config_.context) throw ShapeError("Transformer::step context", {t + 1}, {config_.context});
  if (token < 0 || static_cast<size_t>(token) >= vocab_size_) {
    throw ShapeError("Transformer::step token id", {static_cast<size_t>(token)}, {vocab_size_});
  }
  Tensor x({1, h});
  const auto e = v(tok_emb_).row(static_cast<size_t>(token));
  const auto p = v(pos_emb_).row(t);
  for (size_t j = 0; j < h; ++j) x[j] = e[j] + p[j];

  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> scores(t + 1);
  for (size_t l = 0; l < layers_.size(); ++l) {
    const auto& ids = layers_[l];
    nn::LayerNormCache lnc;
    const Tensor ln1 = nn::layer_norm_forward(x, v(ids.ln1_g), v(ids.ln1_b), lnc);
    const Tensor qkv = nn::linear_forward(ln1, v(ids.w_qkv), v(ids.b_qkv));
    auto& keys = state.keys[l];
    auto& vals = state.values[l];
    keys.insert(keys.end(), qkv.data() + h, qkv.data() + 2 * h);
    vals.insert(vals.end(), qkv.data() + 2 * h, qkv.data() + 3 * h);

    // Same accumulation order as causal_self_attention_forward for row t.
    Tensor attn({1, h});
    for (size_t hh = 0; hh < heads; ++hh) {
      const double* q = qkv.data() + hh * hd;
      double mx = -std::numeric_limits<double>::infinity();
      for (size_t u = 0; u <= t; ++u) {
        const double* k = keys.data() + u * h + hh * hd;
        double s = 0.0;
        for (size_t c = 0; c < hd; ++c) s += q[c] * k[c];
        scores[u] = s * scale;
        mx = std::max(mx, scores[u]);
      }
      double sum = 0.0;
      for (size_t u = 0; u <= t; ++u) {
        scores[u] = std::exp(scores[u] - mx);
        sum += scores[u];
      }
      double* o = attn.data() + hh * hd;
      for (size_t u = 0; u <= t; ++u) {
        const double pu = scores[u] / sum;
        const double* val = vals.data() + u * h + hh * hd;
        for (size_t c = 0; c < hd; ++c) o[c] += pu * val[c];
      }
    }
    const Tensor x_mid = nn::add(x, nn::linear_forward(attn, v(ids.w_o), v(ids.b_o)));
    const Tensor ln2 = nn::layer_norm_forward(x_mid, v(ids.ln2_g), v(ids.ln2_b), lnc);
    const Tensor act = nn::activation_forward(nn::Activation::kGelu, nn::linear_forward(ln2, v(ids.w_fc1), v(ids.b_fc1)));
    x = nn::add(x_mid, nn::linear_forward(act, v(ids.w_fc2), v(ids.b_fc2)));
  }
  state.length = t + 1;
  nn::LayerNormCache lnc;
  const Tensor lnf = nn::layer_norm_forward(x, v(lnf_g_), v(lnf_b_), lnc);
  return nn::linear_forward(lnf, v(w_out_), v(b_out_)).values();
}

}  // namespace recbase::ar
