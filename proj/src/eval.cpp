#include "recbase/eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <numeric>
#include <thread>
#include <unordered_set>

#include "recbase/error.hpp"
#include "recbase/rng.hpp"

namespace recbase::eval {

std::vector<EvalRecord> build_eval_set(std::span<const data::InteractionSequence> sequences,
                                       const data::Catalog& pool, size_t negatives_per_positive, uint64_t seed) {
  std::vector<EvalRecord> out;
  for (size_t s = 0; s < sequences.size(); ++s) {
    const auto& seq = sequences[s];
    if (seq.items.size() < 2) {
      throw Error(ErrorKind::kData, "build_eval_set: user '" + seq.user_id + "' has fewer than 2 items");
    }
    std::vector<std::string> history(seq.items.begin(), seq.items.end() - 1);
    const std::string& positive = seq.items.back();
    if (std::find(history.begin(), history.end(), positive) != history.end()) continue;

    std::unordered_set<std::string> seen(seq.items.begin(), seq.items.end());
    std::vector<size_t> allowed;
    for (size_t i = 0; i < pool.size(); ++i) {
      if (!seen.contains(pool.at(i).item_id)) allowed.push_back(i);
    }
    if (allowed.size() < negatives_per_positive) {
      throw Error(ErrorKind::kData, "build_eval_set: user '" + seq.user_id + "' has only " +
                                        std::to_string(allowed.size()) + " candidate negatives, need " +
                                        std::to_string(negatives_per_positive));
    }
    Rng rng(seed, "eval/negatives", s);
    // Partial Fisher-Yates: the first n slots become a uniform sample without replacement.
    for (size_t i = 0; i < negatives_per_positive; ++i) {
      std::swap(allowed[i], allowed[i + rng.uniform_int(allowed.size() - i)]);
    }
    out.push_back({seq.user_id, history, positive, 1});
    for (size_t i = 0; i < negatives_per_positive; ++i) {
      out.push_back({seq.user_id, history, pool.at(allowed[i]).item_id, 0});
    }
  }
  return out;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ShapeError("auc: scores/labels", {scores.size()}, {labels.size()});
  }
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  for (double s : scores) {
    if (!std::isfinite(s)) throw Error(ErrorKind::kMetric, "auc: non-finite score");
  }
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // Ranks are doubled so tied (half-integer) average ranks stay integral.
  int64_t rank_sum_x2 = 0;
  int64_t positives = 0;
  for (size_t i = 0; i < order.size();) {
    size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const auto avg_rank_x2 = static_cast<int64_t>(i + 1 + j);  // 2 * mean of ranks i+1..j
    for (size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        rank_sum_x2 += avg_rank_x2;
        ++positives;
      } else if (labels[order[k]] != 0) {
        throw Error(ErrorKind::kMetric, "auc: labels must be 0 or 1");
      }
    }
    i = j;
  }
  const auto negatives = static_cast<int64_t>(scores.size()) - positives;
  if (positives == 0 || negatives == 0) {
    throw Error(ErrorKind::kMetric, "auc: need at least one positive and one negative (got " +
                                        std::to_string(positives) + " positives, " + std::to_string(negatives) +
                                        " negatives)");
  }
  const int64_t u_x2 = rank_sum_x2 - positives * (positives + 1);
  return static_cast<double>(u_x2) / static_cast<double>(2 * positives * negatives);
}

nlohmann::json to_json(const MetricReport& r) {
  return {{"dataset", r.dataset},
          {"auc", r.auc},
          {"records", r.records},
          {"positives", r.positives},
          {"negatives", r.negatives},
          {"score_mean", r.scores.mean},
          {"score_stddev", r.scores.stddev},
          {"score_min", r.scores.min},
          {"score_max", r.scores.max},
          {"config_fingerprint", r.config_fingerprint}};
}

std::string summarize(const MetricReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s: AUC=%.4f records=%zu (pos=%zu neg=%zu) score mean=%.3f sd=%.3f",
                r.dataset.c_str(), r.auc, r.records, r.positives, r.negatives, r.scores.mean, r.scores.stddev);
  return buf;
}

nlohmann::json to_json(const ScoredRecord& r) {
  return {{"user_id", r.user_id}, {"item_id", r.item_id}, {"log_prob", r.log_prob}, {"rank", r.rank},
          {"label", r.label}};
}

namespace {

// Consecutive records of one user with identical history form a group.
std::vector<std::pair<size_t, size_t>> history_groups(std::span<const EvalRecord> records) {
  std::vector<std::pair<size_t, size_t>> groups;
  for (size_t i = 0; i < records.size();) {
    size_t j = i + 1;
    while (j < records.size() && records[j].user_id == records[i].user_id &&
           records[j].history == records[i].history) {
      ++j;
    }
    groups.emplace_back(i, j);
    i = j;
  }
  return groups;
}

const tok::ConceptId& lookup(const ar::IdTable& ids, const std::string& item) {
  auto it = ids.find(item);
  if (it == ids.end()) throw Error(ErrorKind::kData, "no concept id for item '" + item + "'");
  return it->second;
}

template <typename Fn>
void parallel_for(size_t n, size_t threads, Fn&& fn) {
  if (threads == 0) threads = std::max<size_t>(1, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  for (size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

std::vector<ScoredRecord> score_records(const ar::ArModel& model, const ar::IdTable& ids,
                                        std::span<const EvalRecord> records, size_t threads) {
  std::vector<ScoredRecord> out(records.size());
  const auto groups = history_groups(records);
  parallel_for(groups.size(), threads, [&](size_t g) {
    const auto [begin, end] = groups[g];
    const auto stream = ar::tokenize_items(records[begin].history, ids, model.vocab());
    std::vector<tok::ConceptId> candidates;
    for (size_t i = begin; i < end; ++i) candidates.push_back(lookup(ids, records[i].candidate));
    const auto scores = model.score_candidates(stream, candidates);

    std::vector<ar::ScoredCandidate> ranked;
    for (size_t i = begin; i < end; ++i) ranked.push_back({records[i].candidate, scores[i - begin], 0});
    ar::assign_ranks(ranked);
    for (size_t i = begin; i < end; ++i) {
      out[i] = {records[i].user_id, records[i].candidate, scores[i - begin], ranked[i - begin].rank, records[i].label};
    }
  });
  return out;
}

MetricReport make_report(const std::string& dataset, std::span<const ScoredRecord> scored,
                         const std::string& fingerprint) {
  MetricReport r;
  r.dataset = dataset;
  r.config_fingerprint = fingerprint;
  r.records = scored.size();
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& s : scored) {
    scores.push_back(s.log_prob);
    labels.push_back(s.label);
    (s.label == 1 ? r.positives : r.negatives) += 1;
  }
  r.auc = auc(scores, labels);
  const double n = static_cast<double>(scores.size());
  r.scores.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / n;
  double var = 0.0;
  for (double s : scores) var += (s - r.scores.mean) * (s - r.scores.mean);
  r.scores.stddev = std::sqrt(var / n);
  r.scores.min = *std::min_element(scores.begin(), scores.end());
  r.scores.max = *std::max_element(scores.begin(), scores.end());
  return r;
}

void check_zero_shot(const data::Catalog& catalog, std::span<const EvalRecord> records,
                     std::span<const std::string> training_domains) {
  auto check = [&](const std::string& item) {
    const auto idx = catalog.find(item);
    if (!idx) throw Error(ErrorKind::kData, "eval item '" + item + "' is not in the catalog");
    const auto& tag = catalog.at(*idx).domain_tag;
    if (std::find(training_domains.begin(), training_domains.end(), tag) != training_domains.end()) {
      throw Error(ErrorKind::kConfig, "zero-shot violation: item '" + item + "' belongs to training domain '" +
                                          tag + "'");
    }
  };
  for (const auto& r : records) {
    check(r.candidate);
    for (const auto& h : r.history) check(h);
  }
}

EvalOutput zero_shot_eval(const ar::ArModel& model, const tok::ClVae& tokenizer, const data::Catalog& catalog,
                          const data::EmbeddingMatrix& embeddings, std::span<const EvalRecord> records,
                          const ZeroShotOptions& options) {
  if (records.empty()) throw Error(ErrorKind::kMetric, "zero_shot_eval: no evaluation records");
  if (options.strict) check_zero_shot(catalog, records, options.training_domains);
  if (tokenizer.config().levels != model.vocab().levels ||
      tokenizer.config().codebook_size != model.vocab().codebook_size) {
    throw Error(ErrorKind::kMismatch, "zero_shot_eval: tokenizer shape (m, K) differs from the model vocabulary");
  }

  EvalOutput out;
  std::vector<std::string> needed;
  for (const auto& r : records) {
    if (out.ids.emplace(r.candidate, tok::ConceptId{}).second) needed.push_back(r.candidate);
    for (const auto& h : r.history) {
      if (out.ids.emplace(h, tok::ConceptId{}).second) needed.push_back(h);
    }
  }
  const auto tokens = tokenizer.tokenize_catalog(embeddings.select(needed));
  for (size_t i = 0; i < tokens.item_ids.size(); ++i) out.ids[tokens.item_ids[i]] = tokens.ids[i];

  out.scored = score_records(model, out.ids, records, options.threads);
  out.report = make_report(options.dataset, out.scored, options.fingerprint);
  return out;
}

nlohmann::json to_json(const LatencyRecord& r) {
  return {{"batch_size", r.batch_size},
          {"candidates", r.candidates},
          {"repeats", r.repeats},
          {"mean_us_per_candidate", r.mean_us_per_candidate},
          {"stddev_us_per_candidate", r.stddev_us_per_candidate},
          {"candidates_per_second", r.candidates_per_second}};
}

std::vector<LatencyRecord> latency_report(const ar::ArModel& model, const ar::IdTable& ids,
                                          std::span<const EvalRecord> records, std::span<const size_t> batch_sizes,
                                          size_t repeats) {
  std::vector<LatencyRecord> out;
  if (records.empty()) return out;
  if (repeats == 0) throw Error(ErrorKind::kConfig, "latency_report: repeats must be positive");

  struct Chunk {
    ar::TokenStream history;
    std::vector<tok::ConceptId> candidates;
  };
  const auto groups = history_groups(records);
  for (size_t b : batch_sizes) {
    if (b == 0) throw Error(ErrorKind::kConfig, "latency_report: batch size must be positive");
    std::vector<Chunk> chunks;
    for (const auto& [begin, end] : groups) {
      const auto stream = ar::tokenize_items(records[begin].history, ids, model.vocab());
      for (size_t i = begin; i < end; i += b) {
        Chunk c{stream, {}};
        for (size_t k = i; k < std::min(end, i + b); ++k) c.candidates.push_back(lookup(ids, records[k].candidate));
        chunks.push_back(std::move(c));
      }
    }
    auto run = [&] {
      double sink = 0.0;
      for (const auto& c : chunks) sink += model.score_candidates(c.history, c.candidates).front();
      return sink;
    };
    volatile double guard = run();  // warmup
    std::vector<double> per_candidate;
    for (size_t r = 0; r < repeats; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      guard = guard + run();
      const auto t1 = std::chrono::steady_clock::now();
      per_candidate.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count() /
                              static_cast<double>(records.size()));
    }
    LatencyRecord rec;
    rec.batch_size = b;
    rec.candidates = records.size();
    rec.repeats = repeats;
    rec.mean_us_per_candidate =
        std::accumulate(per_candidate.begin(), per_candidate.end(), 0.0) / static_cast<double>(repeats);
    double var = 0.0;
    for (double v : per_candidate) var += (v - rec.mean_us_per_candidate) * (v - rec.mean_us_per_candidate);
    rec.stddev_us_per_candidate = std::sqrt(var / static_cast<double>(repeats));
    rec.candidates_per_second = 1e6 / rec.mean_us_per_candidate;
    out.push_back(rec);
  }
  return out;
}

}  // namespace recbase::eval
