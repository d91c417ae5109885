#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "recbase/curriculum.hpp"
#include "recbase/data_pipeline.hpp"
#include "recbase/layers.hpp"
#include "recbase/optim.hpp"
#include "recbase/quantizer.hpp"
#include "recbase/rng.hpp"

namespace recbase::tok {

struct ReinitConfig {
  bool enabled = true;
  double utilization_threshold = 0.5;
  double warmup_fraction = 0.5;
  size_t kmeans_iters = 25;
};

struct QuantizerConfig {
  size_t input_dim = 0;
  size_t latent_dim = 32;
  size_t hidden_dim = 128;
  size_t levels = 4;            // m
  size_t codebook_size = 2048;  // K
  double beta = 0.25;
  double gamma = 0.01;
  double kl_weight = 0.0;
  /// Codewords start uniform in [-scale, scale]; 0 means 1/K.
  double codebook_init_scale = 0.0;
  bool identity_decoder = false;  // requires latent_dim == input_dim
  nn::Activation activation = nn::Activation::kGelu;
  CurriculumConfig curriculum;
  ReinitConfig reinit;
  size_t epochs = 80;
  size_t batch_size = 64;
  double learning_rate = 1e-3;
  uint64_t seed = 42;

  void validate() const;
};

nlohmann::json to_json(const QuantizerConfig& c);
QuantizerConfig quantizer_config_from_json(const nlohmann::json& j);

/// Stop-gradient values and code choices captured from one forward pass.
/// Replaying a pass with a snapshot makes the loss a smooth function of the
/// parameters, which is what finite-difference checks need.
struct StopGradSnapshot {
  std::vector<std::vector<uint32_t>> indices;  // [B][active]
  nn::Tensor straight_through;                 // [B, L]: z_q - z
  std::vector<nn::Tensor> residuals;           // per level [B, L]: sg[r_d]
  std::vector<nn::Tensor> codewords;           // per level [B, L]: sg[e_{c_d}]
};

struct BatchResult {
  LossBreakdown loss;  // batch means; entropy is the batch-level term
  std::vector<std::vector<uint32_t>> indices;
  nn::Tensor z;  // sampled latents [B, L]
};

struct EpochMetrics {
  size_t epoch = 0;
  size_t used_level = 0;
  size_t active_levels = 0;
  LossBreakdown loss;
  std::vector<double> utilization;  // active levels
  double collision_rate = 0.0;
  bool reinitialized = false;
  double reinit_utilization_before = 0.0;
  double reinit_utilization_after = 0.0;
  UnlockReason unlock = UnlockReason::kNone;
  size_t stalled_epochs = 0;
};

nlohmann::json to_json(const EpochMetrics& m);

struct TrainReport {
  std::vector<EpochMetrics> epochs;
  size_t reinit_events = 0;
  std::vector<size_t> unlock_epochs;
};

struct ReinitOutcome {
  bool reinitialized = false;
  bool subsampled = false;  // batch smaller than K was resampled with replacement
  double utilization_before = 0.0;
  double utilization_after = 0.0;
};

/// Level-0 utilization of `latents` under `codebook`.
double level0_utilization(const nn::Tensor& codebook, const nn::Tensor& latents);

/// Replaces `codebook` with k-means centroids of `latents` when
/// `utilization` < threshold and `epoch` lies inside the warmup window
/// (epoch < warmup_fraction * total_epochs). Fewer latents than codes are
/// topped up by deterministic resampling with replacement.
ReinitOutcome maybe_reinit_codebook(nn::Tensor& codebook, const nn::Tensor& latents, double utilization,
                                    size_t epoch, size_t total_epochs, const ReinitConfig& config,
                                    uint64_t seed);

struct CatalogTokens {
  std::vector<std::string> item_ids;
  std::vector<ConceptId> ids;
  CodebookDiagnostics diagnostics;
};

/// Curriculum-learning residual-quantized VAE.
class ClVae {
 public:
  explicit ClVae(QuantizerConfig config);

  const QuantizerConfig& config() const { return config_; }
  nn::ParameterStore& params() { return params_; }
  const nn::ParameterStore& params() const { return params_; }
  const CurriculumState& curriculum() const { return curriculum_; }
  void set_curriculum(const CurriculumState& s) { curriculum_ = s; }
  size_t epochs_done() const { return epochs_done_; }
  size_t active_levels() const { return curriculum_.used_level + 1; }
  /// All levels have been active for at least one completed epoch.
  bool trained() const { return trained_; }
  CodebookStack codebooks() const;
  nn::Tensor& codebook(size_t level);

  /// Encoder: rows of x[B, D] -> (mu, logvar), each [B, L].
  std::pair<nn::Tensor, nn::Tensor> encode(const nn::Tensor& x) const;
  std::pair<std::vector<double>, std::vector<double>> encode(std::span<const float> e) const;
  /// z = mu + exp(logvar / 2) * eps.
  static nn::Tensor reparameterize(const nn::Tensor& mu, const nn::Tensor& logvar, const nn::Tensor& eps);
  static nn::Tensor sample_noise(size_t rows, size_t cols, Rng& rng);
  nn::Tensor decode(const nn::Tensor& z_q) const;

  /// Full loss of a batch. With `backward`, accumulates parameter gradients
  /// (zero them first). With `replay`, code choices and stop-gradient values
  /// come from the snapshot instead of the current parameters.
  BatchResult forward_backward(const nn::Tensor& x, const nn::Tensor& eps, size_t active_levels,
                               bool backward, const StopGradSnapshot* replay = nullptr,
                               StopGradSnapshot* capture = nullptr);

  /// Runs epochs until config().epochs have completed. Resumable: training
  /// continues from epochs_done(). Throws ErrorKind::kDivergence on a
  /// non-finite loss after restoring the last good parameters.
  TrainReport train(const data::EmbeddingMatrix& data, const std::function<void(const EpochMetrics&)>& on_epoch = {});

  /// Inference-mode mapping through mu and all m levels.
  ConceptId tokenize_item(std::span<const float> e) const;
  CatalogTokens tokenize_catalog(const data::EmbeddingMatrix& matrix) const;

  nlohmann::json metadata() const;
  void save(const std::filesystem::path& path, const nlohmann::json& extra = {}) const;
  static ClVae load(const std::filesystem::path& path, nlohmann::json* meta = nullptr);
  std::string serialize() const;

 private:
  void init_parameters();
  EpochMetrics run_epoch(const nn::Tensor& data, const nn::AdamConfig& adam);

  QuantizerConfig config_;
  nn::ParameterStore params_;
  CurriculumState curriculum_;
  size_t epochs_done_ = 0;
  bool trained_ = false;
  size_t reinit_events_ = 0;

  size_t enc_w1_ = 0, enc_b1_ = 0, enc_w2_ = 0, enc_b2_ = 0;
  size_t dec_w1_ = 0, dec_b1_ = 0, dec_w2_ = 0, dec_b2_ = 0;
  std::vector<size_t> codebook_ids_;
};

/// Converts float rows into a double tensor [N, D].
nn::Tensor to_tensor(const data::EmbeddingMatrix& matrix);

}  // namespace recbase::tok
