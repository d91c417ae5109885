#include "recbase/clvae.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "recbase/checkpoint.hpp"
#include "recbase/error.hpp"
#include "recbase/kmeans.hpp"

namespace recbase::tok {

using nlohmann::json;
using nn::Tensor;

namespace {

const char* activation_name(nn::Activation a) { return a == nn::Activation::kRelu ? "relu" : "gelu"; }

nn::Activation activation_from(const std::string& s) {
  if (s == "gelu") return nn::Activation::kGelu;
  if (s == "relu") return nn::Activation::kRelu;
  throw Error(ErrorKind::kConfig, "unknown activation '" + s + "'");
}

void init_normal(Tensor& t, double stddev, Rng& rng) {
  for (auto& v : t.values()) v = stddev * rng.normal();
}

Tensor rows_of(const Tensor& data, std::span<const size_t> rows) {
  const size_t dim = data.cols();
  Tensor out({rows.size(), dim});
  for (size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(data.data() + rows[i] * dim, dim, out.data() + i * dim);
  }
  return out;
}

bool all_finite(const LossBreakdown& l) {
  return std::isfinite(l.total) && std::isfinite(l.reconstruction) && std::isfinite(l.quantization) &&
         std::isfinite(l.entropy);
}

json curriculum_json(const CurriculumState& s) {
  json j;
  j["used_level"] = s.used_level;
  j["epochs_in_level"] = s.epochs_in_level;
  j["stalled_epochs"] = s.stalled_epochs;
  j["best_loss_in_level"] = std::isfinite(s.best_loss_in_level) ? json(s.best_loss_in_level) : json(nullptr);
  return j;
}

CurriculumState curriculum_from(const json& j) {
  CurriculumState s;
  s.used_level = j.at("used_level").get<size_t>();
  s.epochs_in_level = j.at("epochs_in_level").get<size_t>();
  s.stalled_epochs = j.at("stalled_epochs").get<size_t>();
  if (!j.at("best_loss_in_level").is_null()) s.best_loss_in_level = j["best_loss_in_level"].get<double>();
  return s;
}

}  // namespace

// --- configuration -----------------------------------------------------------

void QuantizerConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::kConfig, "tokenizer config: " + msg); };
  if (input_dim == 0) fail("input_dim must be positive");
  if (latent_dim == 0) fail("latent_dim must be positive");
  if (levels < 1) fail("levels (m) must be >= 1");
  if (codebook_size < 2) fail("codebook_size (K) must be >= 2");
  if (beta < 0 || gamma < 0 || kl_weight < 0) fail("loss weights must be non-negative");
  if (identity_decoder && latent_dim != input_dim) fail("identity decoder needs latent_dim == input_dim");
  if (!identity_decoder && hidden_dim == 0) fail("hidden_dim must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (curriculum.max_epochs_per_level == 0) fail("curriculum.max_epochs_per_level must be positive");
  if (reinit.warmup_fraction < 0 || reinit.warmup_fraction > 1) fail("reinit.warmup_fraction outside [0, 1]");
}

json to_json(const QuantizerConfig& c) {
  json j;
  j["input_dim"] = c.input_dim;
  j["latent_dim"] = c.latent_dim;
  j["hidden_dim"] = c.hidden_dim;
  j["levels"] = c.levels;
  j["codebook_size"] = c.codebook_size;
  j["beta"] = c.beta;
  j["gamma"] = c.gamma;
  j["kl_weight"] = c.kl_weight;
  j["codebook_init_scale"] = c.codebook_init_scale;
  j["identity_decoder"] = c.identity_decoder;
  j["activation"] = activation_name(c.activation);
  j["curriculum"] = {{"enabled", c.curriculum.enabled},
                     {"patience_epochs", c.curriculum.patience_epochs},
                     {"rel_improvement_eps", c.curriculum.rel_improvement_eps},
                     {"max_epochs_per_level", c.curriculum.max_epochs_per_level}};
  j["reinit"] = {{"enabled", c.reinit.enabled},
                 {"utilization_threshold", c.reinit.utilization_threshold},
                 {"warmup_fraction", c.reinit.warmup_fraction},
                 {"kmeans_iters", c.reinit.kmeans_iters}};
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["seed"] = c.seed;
  return j;
}

QuantizerConfig quantizer_config_from_json(const json& j) {
  QuantizerConfig c;
  try {
    c.input_dim = j.value("input_dim", c.input_dim);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.levels = j.value("levels", c.levels);
    c.codebook_size = j.value("codebook_size", c.codebook_size);
    c.beta = j.value("beta", c.beta);
    c.gamma = j.value("gamma", c.gamma);
    c.kl_weight = j.value("kl_weight", c.kl_weight);
    c.codebook_init_scale = j.value("codebook_init_scale", c.codebook_init_scale);
    c.identity_decoder = j.value("identity_decoder", c.identity_decoder);
    c.activation = activation_from(j.value("activation", std::string("gelu")));
    if (j.contains("curriculum")) {
      const auto& cj = j["curriculum"];
      c.curriculum.enabled = cj.value("enabled", c.curriculum.enabled);
      c.curriculum.patience_epochs = cj.value("patience_epochs", c.curriculum.patience_epochs);
      c.curriculum.rel_improvement_eps = cj.value("rel_improvement_eps", c.curriculum.rel_improvement_eps);
      c.curriculum.max_epochs_per_level = cj.value("max_epochs_per_level", c.curriculum.max_epochs_per_level);
    }
    if (j.contains("reinit")) {
      const auto& rj = j["reinit"];
      c.reinit.enabled = rj.value("enabled", c.reinit.enabled);
      c.reinit.utilization_threshold = rj.value("utilization_threshold", c.reinit.utilization_threshold);
      c.reinit.warmup_fraction = rj.value("warmup_fraction", c.reinit.warmup_fraction);
      c.reinit.kmeans_iters = rj.value("kmeans_iters", c.reinit.kmeans_iters);
    }
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kConfig, std::string("tokenizer config: ") + e.what());
  }
  return c;
}

json to_json(const EpochMetrics& m) {
  json j;
  j["epoch"] = m.epoch;
  j["used_level"] = m.used_level;
  j["active_levels"] = m.active_levels;
  j["L_total"] = m.loss.total;
  j["L_R"] = m.loss.reconstruction;
  j["L_Q"] = m.loss.quantization;
  j["L_E"] = m.loss.entropy;
  j["KL"] = m.loss.kl;
  j["utilization"] = m.utilization;
  j["collision_rate"] = m.collision_rate;
  j["reinitialized"] = m.reinitialized;
  if (m.reinitialized) {
    j["reinit_utilization_before"] = m.reinit_utilization_before;
    j["reinit_utilization_after"] = m.reinit_utilization_after;
  }
  j["unlock"] = m.unlock == UnlockReason::kNone       ? "none"
                : m.unlock == UnlockReason::kConverged ? "converged"
                                                       : "epoch_cap";
  return j;
}

// --- reinitialization ------------------------------------------------------------

double level0_utilization(const Tensor& codebook, const Tensor& latents) {
  std::vector<bool> used(codebook.rows(), false);
  for (size_t i = 0; i < latents.rows(); ++i) used[nearest_row(codebook, latents.data() + i * latents.cols())] = true;
  return static_cast<double>(std::count(used.begin(), used.end(), true)) / static_cast<double>(codebook.rows());
}

ReinitOutcome maybe_reinit_codebook(Tensor& codebook, const Tensor& latents, double utilization, size_t epoch,
                                    size_t total_epochs, const ReinitConfig& config, uint64_t seed) {
  ReinitOutcome out;
  out.utilization_before = utilization;
  out.utilization_after = utilization;
  if (!config.enabled || latents.rows() == 0) return out;
  const double window = config.warmup_fraction * static_cast<double>(total_epochs);
  if (static_cast<double>(epoch) >= window) return out;
  if (utilization >= config.utilization_threshold) return out;

  const size_t k = codebook.rows(), dim = codebook.cols();
  if (latents.cols() != dim) throw ShapeError("maybe_reinit_codebook", latents.shape(), codebook.shape());
  Tensor points = latents;
  if (latents.rows() < k) {
    out.subsampled = true;
    std::cerr << "warning: reinit batch has " << latents.rows() << " latents for " << k
              << " codes; resampling with replacement\n";
    Rng rng(seed, "clvae/reinit-resample", epoch);
    Tensor padded({k, dim});
    std::copy(latents.values().begin(), latents.values().end(), padded.values().begin());
    for (size_t i = latents.rows(); i < k; ++i) {
      const size_t src = rng.uniform_int(latents.rows());
      std::copy_n(latents.data() + src * dim, dim, padded.data() + i * dim);
    }
    points = std::move(padded);
  }
  auto km = kmeans(points, static_cast<int64_t>(k), config.kmeans_iters, mix_seed(seed, "clvae/reinit", epoch));
  for (auto& v : km.centroids.values()) v = static_cast<double>(static_cast<float>(v));
  codebook = std::move(km.centroids);
  out.reinitialized = true;
  out.utilization_after = level0_utilization(codebook, latents);
  return out;
}

// --- model -------------------------------------------------------------------------

Tensor to_tensor(const data::EmbeddingMatrix& matrix) {
  Tensor t({matrix.rows(), matrix.dim()});
  for (size_t i = 0; i < matrix.values().size(); ++i) t[i] = matrix.values()[i];
  return t;
}

ClVae::ClVae(QuantizerConfig config) : config_(std::move(config)) {
  config_.validate();
  init_parameters();
  curriculum_ = initial_curriculum(config_.curriculum, config_.levels);
}

void ClVae::init_parameters() {
  const size_t d = config_.input_dim, h = config_.hidden_dim, l = config_.latent_dim;
  Rng rng(config_.seed, "clvae/init");
  auto dense = [&](const std::string& name, size_t in, size_t out, size_t& w_id, size_t& b_id) {
    w_id = params_.add(name + ".weight", {in, out});
    b_id = params_.add(name + ".bias", {out});
    init_normal(params_.value(w_id), 1.0 / std::sqrt(static_cast<double>(in)), rng);
  };
  dense("encoder.fc1", d, h, enc_w1_, enc_b1_);
  dense("encoder.fc2", h, 2 * l, enc_w2_, enc_b2_);
  if (!config_.identity_decoder) {
    dense("decoder.fc1", l, h, dec_w1_, dec_b1_);
    dense("decoder.fc2", h, d, dec_w2_, dec_b2_);
  }
  const double scale = config_.codebook_init_scale > 0 ? config_.codebook_init_scale
                                                       : 1.0 / static_cast<double>(config_.codebook_size);
  for (size_t lvl = 0; lvl < config_.levels; ++lvl) {
    const size_t id = params_.add("codebook." + std::to_string(lvl), {config_.codebook_size, l});
    for (auto& v : params_.value(id).values()) v = scale * (2.0 * rng.uniform() - 1.0);
    codebook_ids_.push_back(id);
  }
  params_.round_to_storage();
}

CodebookStack ClVae::codebooks() const {
  std::vector<const Tensor*> levels;
  for (size_t id : codebook_ids_) levels.push_back(&params_.value(id));
  return CodebookStack(std::move(levels));
}

Tensor& ClVae::codebook(size_t level) { return params_.value(codebook_ids_.at(level)); }

std::pair<Tensor, Tensor> ClVae::encode(const Tensor& x) const {
  if (x.cols() != config_.input_dim) throw ShapeError("encode", x.shape(), {x.rows(), config_.input_dim});
  const Tensor a1 = nn::activation_forward(config_.activation,
                                           nn::linear_forward(x, params_.value(enc_w1_), params_.value(enc_b1_)));
  const Tensor o = nn::linear_forward(a1, params_.value(enc_w2_), params_.value(enc_b2_));
  const size_t b = x.rows(), l = config_.latent_dim;
  Tensor mu({b, l}), logvar({b, l});
  for (size_t i = 0; i < b; ++i) {
    for (size_t j = 0; j < l; ++j) {
      mu.at(i, j) = o.at(i, j);
      logvar.at(i, j) = o.at(i, l + j);
    }
  }
  return {std::move(mu), std::move(logvar)};
}

std::pair<std::vector<double>, std::vector<double>> ClVae::encode(std::span<const float> e) const {
  Tensor x({1, e.size()});
  std::copy(e.begin(), e.end(), x.values().begin());
  auto [mu, logvar] = encode(x);
  return {mu.values(), logvar.values()};
}

Tensor ClVae::reparameterize(const Tensor& mu, const Tensor& logvar, const Tensor& eps) {
  nn::expect_same_shape("reparameterize", mu, logvar);
  nn::expect_same_shape("reparameterize", mu, eps);
  Tensor z = Tensor::zeros_like(mu);
  for (size_t i = 0; i < z.size(); ++i) z[i] = mu[i] + std::exp(0.5 * logvar[i]) * eps[i];
  return z;
}

Tensor ClVae::sample_noise(size_t rows, size_t cols, Rng& rng) {
  Tensor eps({rows, cols});
  for (auto& v : eps.values()) v = rng.normal();
  return eps;
}

Tensor ClVae::decode(const Tensor& z_q) const {
  if (z_q.cols() != config_.latent_dim) throw ShapeError("decode", z_q.shape(), {z_q.rows(), config_.latent_dim});
  if (config_.identity_decoder) return z_q;
  const Tensor a = nn::activation_forward(config_.activation,
                                          nn::linear_forward(z_q, params_.value(dec_w1_), params_.value(dec_b1_)));
  return nn::linear_forward(a, params_.value(dec_w2_), params_.value(dec_b2_));
}

BatchResult ClVae::forward_backward(const Tensor& x, const Tensor& eps, size_t active, bool backward,
                                    const StopGradSnapshot* replay, StopGradSnapshot* capture) {
  const size_t b = x.rows(), l = config_.latent_dim, d_in = config_.input_dim;
  if (x.cols() != d_in) throw ShapeError("forward_backward", x.shape(), {b, d_in});
  if (eps.rows() != b || eps.cols() != l) throw ShapeError("forward_backward eps", eps.shape(), {b, l});
  if (active == 0 || active > config_.levels) throw Error(ErrorKind::kState, "forward_backward: bad active level count");
  const double inv_b = 1.0 / static_cast<double>(b);
  const auto act = config_.activation;

  // Encoder.
  const Tensor h1 = nn::linear_forward(x, params_.value(enc_w1_), params_.value(enc_b1_));
  const Tensor a1 = nn::activation_forward(act, h1);
  const Tensor o = nn::linear_forward(a1, params_.value(enc_w2_), params_.value(enc_b2_));
  Tensor z({b, l}), sigma({b, l});
  for (size_t i = 0; i < b; ++i) {
    for (size_t j = 0; j < l; ++j) {
      sigma.at(i, j) = std::exp(0.5 * o.at(i, l + j));
      z.at(i, j) = o.at(i, j) + sigma.at(i, j) * eps.at(i, j);
    }
  }

  // Quantization: hard codes and stop-gradient values.
  const CodebookStack stack = codebooks();
  StopGradSnapshot snap;
  if (replay) {
    snap = *replay;
  } else {
    snap.indices.resize(b);
    snap.straight_through = Tensor({b, l});
    snap.residuals.assign(active, Tensor({b, l}));
    snap.codewords.assign(active, Tensor({b, l}));
    for (size_t i = 0; i < b; ++i) {
      const auto q = residual_quantize(z.row(i), stack, active);
      snap.indices[i] = q.indices;
      for (size_t lvl = 0; lvl < active; ++lvl) {
        std::copy(q.residuals[lvl].begin(), q.residuals[lvl].end(), snap.residuals[lvl].row(i).begin());
        const auto code = stack.level(lvl).row(q.indices[lvl]);
        std::copy(code.begin(), code.end(), snap.codewords[lvl].row(i).begin());
      }
      for (size_t j = 0; j < l; ++j) snap.straight_through.at(i, j) = q.z_q[j] - z.at(i, j);
    }
  }
  if (snap.indices.size() != b || snap.residuals.size() != active) {
    throw Error(ErrorKind::kState, "forward_backward: snapshot does not match batch");
  }

  // Residuals on the differentiable path: r_d = z - sum_{d' < d} sg[e_{c_d'}].
  std::vector<Tensor> resid(active, Tensor({b, l}));
  resid[0] = z;
  for (size_t lvl = 1; lvl < active; ++lvl) {
    for (size_t k = 0; k < b * l; ++k) resid[lvl][k] = resid[lvl - 1][k] - snap.codewords[lvl - 1][k];
  }

  // Straight-through: z_q = z + sg[z_q - z].
  Tensor zq = nn::add(z, snap.straight_through);

  // Decoder.
  Tensor g1, a2, x_hat;
  if (config_.identity_decoder) {
    x_hat = zq;
  } else {
    g1 = nn::linear_forward(zq, params_.value(dec_w1_), params_.value(dec_b1_));
    a2 = nn::activation_forward(act, g1);
    x_hat = nn::linear_forward(a2, params_.value(dec_w2_), params_.value(dec_b2_));
  }

  BatchResult res;
  auto& loss = res.loss;
  for (size_t i = 0; i < b; ++i) loss.reconstruction += reconstruction_loss(x.row(i), x_hat.row(i));
  loss.reconstruction *= inv_b;

  for (size_t lvl = 0; lvl < active; ++lvl) {
    const auto& book = stack.level(lvl);
    for (size_t i = 0; i < b; ++i) {
      const uint32_t c = snap.indices[i][lvl];
      for (size_t j = 0; j < l; ++j) {
        const double codebook_term = snap.residuals[lvl].at(i, j) - book.at(c, j);
        const double commit_term = resid[lvl].at(i, j) - snap.codewords[lvl].at(i, j);
        loss.quantization += codebook_term * codebook_term + config_.beta * commit_term * commit_term;
      }
    }
  }
  loss.quantization *= inv_b;

  // Soft usage per level for the entropy term.
  const size_t k_codes = config_.codebook_size;
  std::vector<Tensor> soft(active);
  std::vector<std::vector<double>> usage(active);
  for (size_t lvl = 0; lvl < active; ++lvl) {
    const auto& book = stack.level(lvl);
    soft[lvl] = Tensor({b, k_codes});
    usage[lvl].assign(k_codes, 0.0);
    for (size_t i = 0; i < b; ++i) {
      auto s = soft[lvl].row(i);
      double mx = -std::numeric_limits<double>::infinity();
      for (size_t j = 0; j < k_codes; ++j) {
        double dist = 0.0;
        for (size_t c = 0; c < l; ++c) {
          const double diff = resid[lvl].at(i, c) - book.at(j, c);
          dist += diff * diff;
        }
        s[j] = -dist;
        mx = std::max(mx, s[j]);
      }
      double sum = 0.0;
      for (size_t j = 0; j < k_codes; ++j) {
        s[j] = std::exp(s[j] - mx);
        sum += s[j];
      }
      for (size_t j = 0; j < k_codes; ++j) {
        s[j] /= sum;
        usage[lvl][j] += s[j] * inv_b;
      }
    }
    loss.entropy -= usage_entropy(usage[lvl]);
  }

  if (config_.kl_weight > 0.0) {
    for (size_t i = 0; i < b; ++i) {
      for (size_t j = 0; j < l; ++j) {
        const double mu = o.at(i, j), lv = o.at(i, l + j);
        loss.kl += -0.5 * (1.0 + lv - mu * mu - std::exp(lv));
      }
    }
    loss.kl *= inv_b;
  }
  loss.total = loss.reconstruction + loss.quantization + config_.gamma * loss.entropy + config_.kl_weight * loss.kl;

  res.indices = snap.indices;
  res.z = z;
  if (capture) *capture = snap;
  if (!backward) return res;

  // Backward.
  Tensor dx_hat = Tensor::zeros_like(x_hat);
  for (size_t k = 0; k < dx_hat.size(); ++k) dx_hat[k] = 2.0 * (x_hat[k] - x[k]) * inv_b;
  Tensor dz;
  if (config_.identity_decoder) {
    dz = dx_hat;
  } else {
    const Tensor da2 = nn::linear_backward(a2, params_.value(dec_w2_), dx_hat, params_.grad(dec_w2_), params_.grad(dec_b2_));
    const Tensor dg1 = nn::activation_backward(act, g1, da2);
    dz = nn::linear_backward(zq, params_.value(dec_w1_), dg1, params_.grad(dec_w1_), params_.grad(dec_b1_));
  }

  for (size_t lvl = 0; lvl < active; ++lvl) {
    auto& gbook = params_.grad(codebook_ids_[lvl]);
    const auto& book = stack.level(lvl);
    for (size_t i = 0; i < b; ++i) {
      const uint32_t c = snap.indices[i][lvl];
      for (size_t j = 0; j < l; ++j) {
        dz.at(i, j) += 2.0 * config_.beta * (resid[lvl].at(i, j) - snap.codewords[lvl].at(i, j)) * inv_b;
        gbook.at(c, j) += 2.0 * (book.at(c, j) - snap.residuals[lvl].at(i, j)) * inv_b;
      }
    }
  }

  if (config_.gamma > 0.0) {
    std::vector<double> g(k_codes);
    for (size_t lvl = 0; lvl < active; ++lvl) {
      auto& gbook = params_.grad(codebook_ids_[lvl]);
      const auto& book = stack.level(lvl);
      // dL_E/dp_j for L_E = sum_j p_j ln(p_j + eps), scaled by gamma / B.
      for (size_t j = 0; j < k_codes; ++j) {
        const double p = usage[lvl][j];
        g[j] = config_.gamma * (std::log(p + kEntropyEps) + p / (p + kEntropyEps)) * inv_b;
      }
      for (size_t i = 0; i < b; ++i) {
        const auto q = soft[lvl].row(i);
        double dot = 0.0;
        for (size_t j = 0; j < k_codes; ++j) dot += q[j] * g[j];
        for (size_t j = 0; j < k_codes; ++j) {
          const double ds = q[j] * (g[j] - dot);  // d loss / d score, score = -|r - e_j|^2
          if (ds == 0.0) continue;
          for (size_t c = 0; c < l; ++c) {
            const double diff = resid[lvl].at(i, c) - book.at(j, c);
            dz.at(i, c) -= 2.0 * ds * diff;
            gbook.at(j, c) += 2.0 * ds * diff;
          }
        }
      }
    }
  }

  Tensor d_o({b, 2 * l});
  for (size_t i = 0; i < b; ++i) {
    for (size_t j = 0; j < l; ++j) {
      const double mu = o.at(i, j), lv = o.at(i, l + j);
      double dmu = dz.at(i, j);
      double dlv = dz.at(i, j) * eps.at(i, j) * 0.5 * sigma.at(i, j);
      if (config_.kl_weight > 0.0) {
        dmu += config_.kl_weight * mu * inv_b;
        dlv += config_.kl_weight * -0.5 * (1.0 - std::exp(lv)) * inv_b;
      }
      d_o.at(i, j) = dmu;
      d_o.at(i, l + j) = dlv;
    }
  }
  const Tensor da1 = nn::linear_backward(a1, params_.value(enc_w2_), d_o, params_.grad(enc_w2_), params_.grad(enc_b2_));
  const Tensor dh1 = nn::activation_backward(act, h1, da1);
  nn::linear_backward(x, params_.value(enc_w1_), dh1, params_.grad(enc_w1_), params_.grad(enc_b1_));
  return res;
}

EpochMetrics ClVae::run_epoch(const Tensor& data, const nn::AdamConfig& adam) {
  const size_t n = data.rows(), l = config_.latent_dim, epoch = epochs_done_;
  const size_t active = active_levels();

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  Rng(config_.seed, "clvae/shuffle", epoch).shuffle(order.begin(), order.end());
  const Rng noise_root(config_.seed, "clvae/eps", epoch);

  EpochMetrics m;
  m.epoch = epoch;
  m.used_level = curriculum_.used_level;
  m.active_levels = active;
  std::vector<ConceptId> ids(n);
  Tensor latents({n, l});

  const nn::ParameterStore last_good = params_;
  for (size_t start = 0, batch = 0; start < n; start += config_.batch_size, ++batch) {
    const size_t stop = std::min(n, start + config_.batch_size);
    const std::span<const size_t> rows(order.data() + start, stop - start);
    const Tensor x = rows_of(data, rows);
    Rng noise = noise_root.split("batch", batch);
    const Tensor eps = sample_noise(rows.size(), l, noise);

    params_.zero_grad();
    const auto res = forward_backward(x, eps, active, true);
    if (!all_finite(res.loss)) {
      params_ = last_good;
      throw Error(ErrorKind::kDivergence, "tokenizer training diverged at epoch " + std::to_string(epoch) +
                                              " batch " + std::to_string(batch) + " (non-finite loss)");
    }
    nn::adam_step(params_, adam);

    const double w = static_cast<double>(rows.size()) / static_cast<double>(n);
    m.loss.total += w * res.loss.total;
    m.loss.reconstruction += w * res.loss.reconstruction;
    m.loss.quantization += w * res.loss.quantization;
    m.loss.entropy += w * res.loss.entropy;
    m.loss.kl += w * res.loss.kl;
    for (size_t i = 0; i < rows.size(); ++i) {
      ids[rows[i]].codes = res.indices[i];
      std::copy_n(res.z.data() + i * l, l, latents.data() + rows[i] * l);
    }
  }

  const auto diag = diagnostics(config_.codebook_size, ids);
  m.utilization = diag.utilization;
  m.collision_rate = diag.collision_rate;

  const auto reinit = maybe_reinit_codebook(codebook(0), latents, m.utilization[0], epoch, config_.epochs,
                                            config_.reinit, config_.seed);
  if (reinit.reinitialized) {
    params_.reset_moments(codebook_ids_[0]);
    ++reinit_events_;
    m.reinitialized = true;
    m.reinit_utilization_before = reinit.utilization_before;
    m.reinit_utilization_after = reinit.utilization_after;
  }

  if (active == config_.levels) trained_ = true;
  const auto update = curriculum_step(curriculum_, m.loss.total, config_.curriculum, config_.levels);
  curriculum_ = update.state;
  m.unlock = update.reason;
  m.stalled_epochs = curriculum_.stalled_epochs;
  ++epochs_done_;
  return m;
}

TrainReport ClVae::train(const data::EmbeddingMatrix& matrix, const std::function<void(const EpochMetrics&)>& on_epoch) {
  if (matrix.rows() == 0) throw Error(ErrorKind::kData, "tokenizer training: empty embedding matrix");
  if (matrix.dim() != config_.input_dim) {
    throw Error(ErrorKind::kMismatch, "tokenizer training: embedding dim " + std::to_string(matrix.dim()) +
                                          " != configured input_dim " + std::to_string(config_.input_dim));
  }
  const Tensor data = to_tensor(matrix);
  nn::AdamConfig adam;
  adam.learning_rate = config_.learning_rate;
  TrainReport report;
  const size_t reinit_before = reinit_events_;
  while (epochs_done_ < config_.epochs) {
    auto m = run_epoch(data, adam);
    if (m.unlock != UnlockReason::kNone) report.unlock_epochs.push_back(m.epoch);
    if (on_epoch) on_epoch(m);
    report.epochs.push_back(std::move(m));
  }
  report.reinit_events = reinit_events_ - reinit_before;
  return report;
}

ConceptId ClVae::tokenize_item(std::span<const float> e) const {
  if (!trained_) throw Error(ErrorKind::kState, "tokenizer is untrained: not every level has been active");
  if (e.size() != config_.input_dim) throw ShapeError("tokenize_item", {e.size()}, {config_.input_dim});
  const auto [mu, logvar] = encode(e);
  return ConceptId{residual_quantize(mu, codebooks(), config_.levels).indices};
}

CatalogTokens ClVae::tokenize_catalog(const data::EmbeddingMatrix& matrix) const {
  if (!trained_) throw Error(ErrorKind::kState, "tokenizer is untrained: not every level has been active");
  if (matrix.dim() != config_.input_dim) throw ShapeError("tokenize_catalog", {matrix.dim()}, {config_.input_dim});
  if (matrix.rows() == 0) throw Error(ErrorKind::kData, "tokenize_catalog: empty matrix");
  CatalogTokens out;
  out.item_ids = matrix.ids();
  const auto [mu, logvar] = encode(to_tensor(matrix));
  const auto stack = codebooks();
  out.ids.reserve(matrix.rows());
  for (size_t i = 0; i < matrix.rows(); ++i) {
    out.ids.push_back(ConceptId{residual_quantize(mu.row(i), stack, config_.levels).indices});
  }
  out.diagnostics = diagnostics(config_.codebook_size, out.ids);
  return out;
}

json ClVae::metadata() const {
  json meta;
  meta["kind"] = "clvae";
  meta["config"] = to_json(config_);
  meta["curriculum"] = curriculum_json(curriculum_);
  meta["epochs_done"] = epochs_done_;
  meta["trained"] = trained_;
  meta["reinit_events"] = reinit_events_;
  meta["rng_label"] = "clvae";
  return meta;
}

void ClVae::save(const std::filesystem::path& path, const json& extra) const {
  json meta = metadata();
  for (const auto& [k, v] : extra.items()) meta[k] = v;
  nn::save_checkpoint(path, params_, meta);
}

std::string ClVae::serialize() const { return nn::serialize_checkpoint(params_, metadata()); }

ClVae ClVae::load(const std::filesystem::path& path, json* meta_out) {
  auto ck = nn::load_checkpoint(path);
  if (ck.meta.value("kind", "") != "clvae") throw Error(ErrorKind::kMismatch, path.string() + " is not a tokenizer checkpoint");
  ClVae model(quantizer_config_from_json(ck.meta.at("config")));
  nn::assign_parameters(model.params_, ck.store);
  model.curriculum_ = curriculum_from(ck.meta.at("curriculum"));
  model.epochs_done_ = ck.meta.at("epochs_done").get<size_t>();
  model.trained_ = ck.meta.at("trained").get<bool>();
  model.reinit_events_ = ck.meta.at("reinit_events").get<size_t>();
  if (meta_out) *meta_out = std::move(ck.meta);
  return model;
}

}  // namespace recbase::tok
