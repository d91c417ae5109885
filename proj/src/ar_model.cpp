#include "recbase/ar_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "recbase/checkpoint.hpp"
#include "recbase/error.hpp"

namespace recbase::ar {

using nn::Tensor;

void assign_ranks(std::vector<ScoredCandidate>& candidates) {
  std::vector<size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return candidates[a].log_prob > candidates[b].log_prob; });
  for (size_t r = 0; r < order.size(); ++r) candidates[order[r]].rank = r + 1;
}

std::vector<std::pair<size_t, size_t>> stream_windows(size_t length, size_t context, const TokenVocab& vocab) {
  if (length <= context) return {{0, 1}};
  const size_t period = vocab.period();
  const size_t stride = std::max(period, (context / 2) / period * period);
  std::vector<std::pair<size_t, size_t>> out{{0, 1}};
  size_t covered = context;  // targets at positions < covered are counted
  for (size_t start = 1 + stride; covered < length; start += stride) {
    out.emplace_back(start, covered);
    covered = start + context;
  }
  return out;
}

namespace {

ARConfig validated(ARConfig config, const TokenVocab& vocab) {
  config.validate(vocab.period());
  return config;
}

}  // namespace

ArModel::ArModel(ARConfig config, TokenVocab vocab) : vocab_(vocab), net_(validated(config, vocab), vocab.size()) {
  if (vocab_.levels == 0 || vocab_.codebook_size == 0) throw Error(ErrorKind::kConfig, "vocabulary needs m, K > 0");
}

namespace {

struct Window {
  size_t stream;
  size_t start;
  size_t count_from;
};

std::vector<Window> make_windows(const TokenCorpus& corpus, size_t context) {
  std::vector<Window> out;
  for (size_t s = 0; s < corpus.streams.size(); ++s) {
    for (auto [start, from] : stream_windows(corpus.streams[s].size(), context, corpus.vocab)) {
      out.push_back({s, start, from});
    }
  }
  return out;
}

/// Local token span and targets (concept-id tokens only) for one window.
std::pair<std::span<const int>, std::vector<int>> window_data(const TokenCorpus& corpus, const Window& w,
                                                              size_t context) {
  const auto& stream = corpus.streams[w.stream];
  const size_t end = std::min(stream.size(), w.start + context);
  std::span<const int> tokens(stream.data() + w.start, end - w.start);
  std::vector<int> targets(tokens.size(), nn::kIgnoreTarget);
  for (size_t i = 0; i + 1 < tokens.size(); ++i) {
    const size_t pos = w.start + i + 1;
    if (pos >= w.count_from && corpus.vocab.level_at(pos) >= 0) targets[i] = stream[pos];
  }
  return {tokens, std::move(targets)};
}

size_t count_targets(const std::vector<int>& targets) {
  return static_cast<size_t>(std::count_if(targets.begin(), targets.end(), [](int t) { return t != nn::kIgnoreTarget; }));
}

}  // namespace

std::vector<EpochNll> ArModel::train(const TokenCorpus& corpus, const std::string& phase, size_t epochs,
                                     double learning_rate, const std::function<void(const EpochNll&)>& on_epoch) {
  if (!(corpus.vocab == vocab_)) {
    throw Error(ErrorKind::kMismatch, "corpus vocabulary (m=" + std::to_string(corpus.vocab.levels) + ", K=" +
                                          std::to_string(corpus.vocab.codebook_size) +
                                          ") does not match the model's (m=" + std::to_string(vocab_.levels) +
                                          ", K=" + std::to_string(vocab_.codebook_size) + ")");
  }
  if (corpus.streams.empty()) throw Error(ErrorKind::kData, "training corpus is empty");
  std::vector<EpochNll> history;
  if (phase_epochs_ >= epochs && phase == phase_) return history;
  if (epochs == 0) return history;
  auto& store = net_.params();
  if (phase != phase_) {
    for (size_t i = 0; i < store.size(); ++i) store.reset_moments(i);
    store.set_step(0);
    phase_ = phase;
    phase_epochs_ = 0;
  }

  const auto& cfg = net_.config();
  nn::AdamConfig adam;
  adam.learning_rate = learning_rate;
  adam.clip_norm = cfg.clip_norm;
  const auto windows = make_windows(corpus, cfg.context);

  while (phase_epochs_ < epochs) {
    const size_t epoch = phase_epochs_;
    std::vector<size_t> order(windows.size());
    std::iota(order.begin(), order.end(), size_t{0});
    Rng(cfg.seed, "ar/shuffle/" + phase, epoch).shuffle(order.begin(), order.end());
    const Rng dropout_root(cfg.seed, "ar/dropout/" + phase, epoch);
    const nn::ParameterStore last_good = store;

    double loss_sum = 0.0;
    size_t token_count = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<std::pair<std::span<const int>, std::vector<int>>> batch;
      size_t batch_targets = 0;
      for (size_t k = start; k < stop; ++k) {
        batch.push_back(window_data(corpus, windows[order[k]], cfg.context));
        batch_targets += count_targets(batch.back().second);
      }
      if (batch_targets == 0) continue;
      store.zero_grad();
      double batch_loss = 0.0;
      for (size_t k = 0; k < batch.size(); ++k) {
        Transformer::ForwardCache cache;
        Rng drop = dropout_root.split("window", start + k);
        const Tensor logits = net_.forward(batch[k].first, &cache, cfg.dropout > 0.0 ? &drop : nullptr);
        auto xent = nn::softmax_cross_entropy(logits, batch[k].second);
        if (xent.count == 0) continue;
        const double inv = 1.0 / static_cast<double>(batch_targets);
        for (auto& g : xent.dlogits.values()) g *= inv;
        net_.backward(cache, xent.dlogits);
        batch_loss += xent.loss_sum;
      }
      if (!std::isfinite(batch_loss)) {
        store = last_good;
        throw Error(ErrorKind::kDivergence, "model training diverged in phase '" + phase + "' epoch " +
                                                std::to_string(epoch) + " (non-finite loss)");
      }
      nn::adam_step(store, adam);
      loss_sum += batch_loss;
      token_count += batch_targets;
    }
    ++phase_epochs_;
    EpochNll rec{phase, epoch, token_count ? loss_sum / static_cast<double>(token_count) : 0.0, token_count};
    if (on_epoch) on_epoch(rec);
    history.push_back(rec);
  }
  return history;
}

double ArModel::evaluate_nll(const TokenCorpus& corpus) const {
  const auto& cfg = net_.config();
  double loss_sum = 0.0;
  size_t count = 0;
  for (const auto& w : make_windows(corpus, cfg.context)) {
    const auto [tokens, targets] = window_data(corpus, w, cfg.context);
    const auto xent = nn::softmax_cross_entropy(net_.forward(tokens), targets);
    loss_sum += xent.loss_sum;
    count += xent.count;
  }
  if (count == 0) throw Error(ErrorKind::kData, "evaluate_nll: corpus has no concept-id targets");
  return loss_sum / static_cast<double>(count);
}

std::vector<double> ArModel::level_log_probs(std::span<const double> logits, size_t level) const {
  const size_t begin = vocab_.level_begin(level), end = vocab_.level_end(level);
  if (net_.config().level_masking) return nn::log_softmax(logits.subspan(begin, end - begin));
  const auto all = nn::log_softmax(logits);
  return {all.begin() + static_cast<std::ptrdiff_t>(begin), all.begin() + static_cast<std::ptrdiff_t>(end)};
}

TokenStream ArModel::clip_history(const TokenStream& history) const {
  const size_t limit = net_.config().context - vocab_.levels;
  if (history.size() <= limit) return history;
  const size_t period = vocab_.period();
  size_t start = history.size() - limit;
  start += (period - (start - 1) % period) % period;  // next item boundary
  return TokenStream(history.begin() + static_cast<std::ptrdiff_t>(start), history.end());
}

Transformer::KvState ArModel::prefix_state(const TokenStream& history, std::vector<double>& next_logits) const {
  const TokenStream clipped = history.empty() ? TokenStream{TokenVocab::kBos} : clip_history(history);
  auto state = net_.new_state();
  for (int tok : clipped) next_logits = net_.step(state, tok);
  return state;
}

void ArModel::check_candidate(const tok::ConceptId& candidate) const {
  if (candidate.size() != vocab_.levels) {
    throw Error(ErrorKind::kMismatch, "candidate has " + std::to_string(candidate.size()) + " levels, model expects " +
                                          std::to_string(vocab_.levels));
  }
  for (size_t d = 0; d < candidate.size(); ++d) {
    if (candidate[d] >= vocab_.codebook_size) {
      throw Error(ErrorKind::kMismatch, "candidate code " + std::to_string(candidate[d]) + " >= K=" +
                                            std::to_string(vocab_.codebook_size));
    }
  }
}

std::vector<double> ArModel::score_candidates(const TokenStream& history,
                                              std::span<const tok::ConceptId> candidates) const {
  for (const auto& c : candidates) check_candidate(c);
  std::vector<double> first_logits;
  auto state = prefix_state(history, first_logits);
  const size_t base = state.length;
  const auto first = level_log_probs(first_logits, 0);
  std::vector<double> out;
  out.reserve(candidates.size());
  for (const auto& cand : candidates) {
    double total = first[cand[0]];
    for (size_t j = 1; j < vocab_.levels; ++j) {
      const auto logits = net_.step(state, vocab_.token(j - 1, cand[j - 1]));
      total += level_log_probs(logits, j)[cand[j]];
    }
    state.truncate(base, net_.config().hidden);
    out.push_back(total);
  }
  return out;
}

double ArModel::score_candidate(const TokenStream& history, const tok::ConceptId& candidate) const {
  return score_candidates(history, std::span<const tok::ConceptId>(&candidate, 1)).front();
}

std::vector<double> ArModel::candidate_log_probs(const TokenStream& history, const tok::ConceptId& candidate) const {
  check_candidate(candidate);
  std::vector<double> logits;
  auto state = prefix_state(history, logits);
  std::vector<double> out;
  for (size_t j = 0; j < vocab_.levels; ++j) {
    if (j > 0) logits = net_.step(state, vocab_.token(j - 1, candidate[j - 1]));
    out.push_back(level_log_probs(logits, j)[candidate[j]]);
  }
  return out;
}

GeneratedId ArModel::generate_next(const TokenStream& history, const GenerateOptions& options) const {
  const size_t m = vocab_.levels, k = vocab_.codebook_size;
  std::vector<double> logits;
  auto state = prefix_state(history, logits);

  if (options.strategy == DecodeStrategy::kGreedy) {
    GeneratedId out;
    for (size_t j = 0; j < m; ++j) {
      if (j > 0) logits = net_.step(state, vocab_.token(j - 1, out.id.codes.back()));
      const auto lp = level_log_probs(logits, j);
      const auto best = static_cast<uint32_t>(std::max_element(lp.begin(), lp.end()) - lp.begin());
      out.id.codes.push_back(best);
      out.log_prob += lp[best];
    }
    return out;
  }

  if (options.beam_width == 0) throw Error(ErrorKind::kConfig, "beam width must be positive");
  struct Beam {
    std::vector<uint32_t> codes;
    double log_prob;
    Transformer::KvState state;
    std::vector<double> logits;
  };
  std::vector<Beam> beams;
  beams.push_back({{}, 0.0, std::move(state), std::move(logits)});
  for (size_t j = 0; j < m; ++j) {
    struct Expansion {
      size_t beam;
      uint32_t code;
      double log_prob;
    };
    std::vector<Expansion> expansions;
    expansions.reserve(beams.size() * k);
    for (size_t b = 0; b < beams.size(); ++b) {
      const auto lp = level_log_probs(beams[b].logits, j);
      for (uint32_t c = 0; c < k; ++c) expansions.push_back({b, c, beams[b].log_prob + lp[c]});
    }
    // Beams are kept in lexicographic order of their codes, so (beam, code)
    // order is lexicographic order of the extended prefixes.
    std::stable_sort(expansions.begin(), expansions.end(),
                     [](const Expansion& a, const Expansion& b) { return a.log_prob > b.log_prob; });
    expansions.resize(std::min(expansions.size(), options.beam_width));
    std::sort(expansions.begin(), expansions.end(), [](const Expansion& a, const Expansion& b) {
      return a.beam != b.beam ? a.beam < b.beam : a.code < b.code;
    });
    std::vector<Beam> next;
    next.reserve(expansions.size());
    for (const auto& e : expansions) {
      Beam nb{beams[e.beam].codes, e.log_prob, {}, {}};
      nb.codes.push_back(e.code);
      if (j + 1 < m) {
        nb.state = beams[e.beam].state;
        nb.logits = net_.step(nb.state, vocab_.token(j, e.code));
      }
      next.push_back(std::move(nb));
    }
    beams = std::move(next);
  }
  // Lowest code sequence wins ties: beams are in lexicographic order.
  const auto best = std::max_element(beams.begin(), beams.end(),
                                     [](const Beam& a, const Beam& b) { return a.log_prob < b.log_prob; });
  return {tok::ConceptId{best->codes}, best->log_prob};
}

nlohmann::json ArModel::metadata() const {
  return {{"kind", "ar_model"},
          {"config", to_json(net_.config())},
          {"vocab", to_json(vocab_)},
          {"phase", phase_},
          {"phase_epochs", phase_epochs_}};
}

void ArModel::save(const std::filesystem::path& path, const nlohmann::json& extra) const {
  auto meta = metadata();
  for (const auto& [k, v] : extra.items()) meta[k] = v;
  nn::save_checkpoint(path, net_.params(), meta);
}

std::string ArModel::serialize() const { return nn::serialize_checkpoint(net_.params(), metadata()); }

ArModel ArModel::load(const std::filesystem::path& path, nlohmann::json* meta_out) {
  auto ck = nn::load_checkpoint(path);
  if (ck.meta.value("kind", "") != "ar_model") throw Error(ErrorKind::kMismatch, path.string() + " is not a model checkpoint");
  ArModel model(ar_config_from_json(ck.meta.at("config")), vocab_from_json(ck.meta.at("vocab")));
  nn::assign_parameters(model.net_.params(), ck.store);
  model.phase_ = ck.meta.at("phase").get<std::string>();
  model.phase_epochs_ = ck.meta.at("phase_epochs").get<size_t>();
  if (meta_out) *meta_out = std::move(ck.meta);
  return model;
}

std::vector<EpochNll> pretrain(ArModel& model, const TokenCorpus& corpus) {
  return model.train(corpus, "pretrain", model.config().epochs, model.config().learning_rate);
}

std::vector<EpochNll> finetune(ArModel& model, const TokenCorpus& corpus, const FinetuneConfig& config,
                               const std::function<void(const EpochNll&)>& on_epoch) {
  if (!(corpus.vocab == model.vocab())) {
    throw Error(ErrorKind::kMismatch, "fine-tuning corpus was tokenized with a different vocabulary than the checkpoint");
  }
  return model.train(corpus, "finetune", config.epochs, config.learning_rate, on_epoch);
}

}  // namespace recbase::ar
