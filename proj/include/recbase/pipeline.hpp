#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "recbase/ar_model.hpp"
#include "recbase/benchmark.hpp"
#include "recbase/clvae.hpp"
#include "recbase/eval.hpp"

namespace recbase::eval {

/// Components that an ablation arm can switch off.
struct AblationFlags {
  bool format = true;  // embeddings of formatted descriptions
  bool init = true;    // k-means codebook reinitialization
  bool cur = true;     // curriculum over quantization levels

  std::string name() const;
};

/// Baseline plus the three single-component ablations.
std::vector<AblationFlags> standard_arms();
AblationFlags parse_arm(const std::string& name);

struct PipelineConfig {
  tok::QuantizerConfig tokenizer;
  ar::ARConfig model;
  ar::FinetuneConfig finetune;
  std::vector<std::string> train_domains;
  std::string eval_domain;
  size_t negatives = 50;
  double finetune_fraction = 0.5;  // eval-domain users used for fine-tuning; the rest are scored
  size_t min_history = data::kDefaultMinHistory;
  size_t max_history = data::kDefaultMaxHistory;
  bool strict = true;
  bool run_finetune = true;
  bool score_untrained = false;
  uint64_t seed = 42;
  size_t threads = 0;
};

/// Inputs fixed across arms.
struct BenchmarkData {
  data::Catalog catalog;
  data::EmbeddingMatrix formatted;
  data::EmbeddingMatrix unformatted;
  std::vector<data::InteractionSequence> sequences;
};

BenchmarkData benchmark_data(const data::SyntheticBenchmark& bench, const PipelineConfig& config);

struct ArmResult {
  AblationFlags flags;
  tok::TrainReport tokenizer_report;
  tok::CodebookDiagnostics diagnostics;  // over the full catalog
  std::vector<size_t> used_level_trace;
  std::vector<ar::EpochNll> pretrain_nll;
  MetricReport zero_shot;
  std::optional<MetricReport> untrained;
  std::optional<MetricReport> finetuned;
  std::string tokenizer_hash;
  std::string model_hash;
  std::string finetuned_hash;
};

nlohmann::json to_json(const ArmResult& r);

/// Trains tokenizer and model on the training domains with the arm's
/// components disabled, then scores held-out eval-domain users zero-shot and,
/// when enabled, after fine-tuning on the remaining eval-domain users.
ArmResult run_pipeline(const BenchmarkData& data, const PipelineConfig& config, const AblationFlags& flags = {});

/// One run_pipeline per arm on the same data.
std::vector<ArmResult> run_ablation(const BenchmarkData& data, const PipelineConfig& config,
                                    std::span<const AblationFlags> arms);

/// Applies the arm's switches to the tokenizer configuration.
tok::QuantizerConfig arm_tokenizer_config(tok::QuantizerConfig config, const AblationFlags& flags);

}  // namespace recbase::eval
