#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "recbase/ar_model.hpp"
#include "recbase/clvae.hpp"
#include "recbase/data_pipeline.hpp"

namespace recbase::eval {

struct EvalRecord {
  std::string user_id;
  std::vector<std::string> history;
  std::string candidate;
  int label = 0;
};

/// Leave-last-out: each sequence's final item is the positive and
/// `negatives_per_positive` distinct items sampled uniformly from `pool`
/// minus the user's history are negatives. Sequences whose held-out item also
/// occurs earlier in the history are skipped.
std::vector<EvalRecord> build_eval_set(std::span<const data::InteractionSequence> sequences,
                                       const data::Catalog& pool, size_t negatives_per_positive, uint64_t seed);

/// Probability that a random positive outscores a random negative, ties
/// counted one half, via the Mann-Whitney rank sum.
double auc(std::span<const double> scores, std::span<const int> labels);

struct ScoreSummary {
  double mean = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct MetricReport {
  std::string dataset;
  double auc = 0.0;
  size_t records = 0;
  size_t positives = 0;
  size_t negatives = 0;
  ScoreSummary scores;
  std::string config_fingerprint;
};

nlohmann::json to_json(const MetricReport& r);
std::string summarize(const MetricReport& r);

struct ScoredRecord {
  std::string user_id;
  std::string item_id;
  double log_prob = 0.0;
  size_t rank = 0;
  int label = 0;
};

nlohmann::json to_json(const ScoredRecord& r);

/// Scores every record with the model; records sharing a user and history are
/// scored against one shared prefix. Parallel over users with `threads`
/// workers (0 = hardware concurrency); results do not depend on the count.
std::vector<ScoredRecord> score_records(const ar::ArModel& model, const ar::IdTable& ids,
                                        std::span<const EvalRecord> records, size_t threads = 0);

MetricReport make_report(const std::string& dataset, std::span<const ScoredRecord> scored,
                         const std::string& fingerprint);

struct ZeroShotOptions {
  std::string dataset;
  bool strict = true;
  std::vector<std::string> training_domains;  // from the tokenizer/model manifests
  std::string fingerprint;
  size_t threads = 0;
};

struct EvalOutput {
  MetricReport report;
  std::vector<ScoredRecord> scored;
  ar::IdTable ids;
};

/// Tokenizes every referenced item with the frozen tokenizer, scores each
/// record and reports AUC. In strict mode a referenced item whose domain
/// appears in `training_domains` is a configuration error.
EvalOutput zero_shot_eval(const ar::ArModel& model, const tok::ClVae& tokenizer, const data::Catalog& catalog,
                          const data::EmbeddingMatrix& embeddings, std::span<const EvalRecord> records,
                          const ZeroShotOptions& options);

/// Throws ErrorKind::kConfig when any record's items belong to a training domain.
void check_zero_shot(const data::Catalog& catalog, std::span<const EvalRecord> records,
                     std::span<const std::string> training_domains);

struct LatencyRecord {
  size_t batch_size = 0;
  size_t candidates = 0;
  size_t repeats = 0;
  double mean_us_per_candidate = 0.0;
  double stddev_us_per_candidate = 0.0;
  double candidates_per_second = 0.0;
};

nlohmann::json to_json(const LatencyRecord& r);

/// Wall-clock scoring cost per candidate when candidates of one history are
/// scored in groups of each batch size (the history prefix is computed once
/// per group). One untimed warmup pass precedes the timed repeats.
std::vector<LatencyRecord> latency_report(const ar::ArModel& model, const ar::IdTable& ids,
                                          std::span<const EvalRecord> records, std::span<const size_t> batch_sizes,
                                          size_t repeats = 3);

}  // namespace recbase::eval
