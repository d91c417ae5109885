#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "recbase/transformer.hpp"
#include "recbase/vocab.hpp"

namespace recbase::ar {

struct ScoredCandidate {
  std::string item_id;
  double log_prob = 0.0;
  size_t rank = 0;  // 1 = best
};

/// Assigns ranks by descending log_prob; ties keep input order.
void assign_ranks(std::vector<ScoredCandidate>& candidates);

enum class DecodeStrategy { kGreedy, kBeam };

struct GenerateOptions {
  DecodeStrategy strategy = DecodeStrategy::kGreedy;
  size_t beam_width = 4;
};

struct GeneratedId {
  tok::ConceptId id;
  double log_prob = 0.0;
};

struct EpochNll {
  std::string phase;
  size_t epoch = 0;
  double nll = 0.0;  // mean per concept-id token
  size_t tokens = 0;
};

/// Training windows of a stream: (start offset, first absolute position whose
/// target counts). Streams longer than the context are cut into windows with
/// stride of half the context, aligned to item boundaries.
std::vector<std::pair<size_t, size_t>> stream_windows(size_t length, size_t context, const TokenVocab& vocab);

/// Concept-id language model: next-token prediction over level tokens.
class ArModel {
 public:
  ArModel(ARConfig config, TokenVocab vocab);

  const ARConfig& config() const { return net_.config(); }
  const TokenVocab& vocab() const { return vocab_; }
  Transformer& net() { return net_; }
  const Transformer& net() const { return net_; }
  const std::string& phase() const { return phase_; }
  size_t phase_epochs_done() const { return phase_epochs_; }

  /// Teacher-forced NLL training. Runs until `epochs` epochs of `phase` have
  /// completed, so a model restored mid-phase resumes where it stopped.
  std::vector<EpochNll> train(const TokenCorpus& corpus, const std::string& phase, size_t epochs,
                              double learning_rate, const std::function<void(const EpochNll&)>& on_epoch = {});
  /// Mean NLL per concept-id token, no dropout.
  double evaluate_nll(const TokenCorpus& corpus) const;

  /// Sum over levels of log P(c_j | history, c_<j), each conditional
  /// normalized over its level block when level masking is on.
  double score_candidate(const TokenStream& history, const tok::ConceptId& candidate) const;
  /// Same as score_candidate per candidate, sharing the history prefix.
  std::vector<double> score_candidates(const TokenStream& history, std::span<const tok::ConceptId> candidates) const;
  /// Per-level log-probabilities of one candidate.
  std::vector<double> candidate_log_probs(const TokenStream& history, const tok::ConceptId& candidate) const;

  GeneratedId generate_next(const TokenStream& history, const GenerateOptions& options = {}) const;

  /// History clipped to fit `context - m` tokens, cut at an item boundary.
  TokenStream clip_history(const TokenStream& history) const;

  nlohmann::json metadata() const;
  void save(const std::filesystem::path& path, const nlohmann::json& extra = {}) const;
  static ArModel load(const std::filesystem::path& path, nlohmann::json* meta = nullptr);
  std::string serialize() const;

 private:
  std::vector<double> level_log_probs(std::span<const double> logits, size_t level) const;
  Transformer::KvState prefix_state(const TokenStream& history, std::vector<double>& next_logits) const;
  void check_candidate(const tok::ConceptId& candidate) const;

  TokenVocab vocab_;
  Transformer net_;
  std::string phase_ = "init";
  size_t phase_epochs_ = 0;
};

/// Pretraining on a multi-domain corpus.
std::vector<EpochNll> pretrain(ArModel& model, const TokenCorpus& corpus);

struct FinetuneConfig {
  size_t epochs = 5;
  double learning_rate = 5e-4;
};

/// Continues NLL training on in-domain streams produced with the same frozen
/// tokenizer; a vocabulary differing from the model's raises kMismatch.
std::vector<EpochNll> finetune(ArModel& model, const TokenCorpus& corpus, const FinetuneConfig& config,
                               const std::function<void(const EpochNll&)>& on_epoch = {});

}  // namespace recbase::ar
