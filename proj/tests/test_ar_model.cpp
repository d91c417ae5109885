#include <cmath>
#include <set>

#include "doctest.h"
#include "recbase/ar_model.hpp"
#include "recbase/error.hpp"
#include "recbase/grad_check.hpp"
#include "recbase/layers.hpp"
#include "test_util.hpp"

using namespace recbase;
using namespace recbase::ar;
using tok::ConceptId;

namespace {

ARConfig tiny_config(uint64_t seed = 1) {
  ARConfig c;
  c.hidden = 16;
  c.layers = 2;
  c.heads = 2;
  c.context = 64;
  c.batch_size = 4;
  c.learning_rate = 3e-3;
  c.seed = seed;
  return c;
}

TokenStream random_stream(const TokenVocab& vocab, size_t items, Rng& rng) {
  std::vector<std::string> ids;
  IdTable table;
  for (size_t i = 0; i < items; ++i) {
    ConceptId id;
    for (size_t d = 0; d < vocab.levels; ++d) id.codes.push_back(static_cast<uint32_t>(rng.uniform_int(vocab.codebook_size)));
    ids.push_back("i" + std::to_string(i));
    table[ids.back()] = id;
  }
  return tokenize_items(ids, table, vocab);
}

std::vector<ConceptId> all_ids(size_t m, size_t k) {
  std::vector<ConceptId> out(1);
  for (size_t d = 0; d < m; ++d) {
    std::vector<ConceptId> next;
    for (const auto& prefix : out) {
      for (uint32_t c = 0; c < k; ++c) {
        auto id = prefix;
        id.codes.push_back(c);
        next.push_back(id);
      }
    }
    out = std::move(next);
  }
  return out;
}

// Makes a freshly built model non-trivial so scores differ across candidates.
void scramble(ArModel& model, uint64_t seed, double scale = 0.5) {
  Rng rng(seed, "scramble");
  for (auto& p : model.net().params().params()) {
    for (auto& v : p.value.values()) v = static_cast<double>(static_cast<float>(scale * rng.normal()));
  }
}

}  // namespace

TEST_CASE("token vocabulary layout") {
  const TokenVocab v{4, 8, true};
  CHECK(v.size() == 3 + 32);
  std::set<int> seen;
  for (size_t d = 0; d < 4; ++d) {
    for (uint32_t c = 0; c < 8; ++c) {
      const int t = v.token(d, c);
      CHECK(seen.insert(t).second);
      CHECK(static_cast<size_t>(t) >= v.level_begin(d));
      CHECK(static_cast<size_t>(t) < v.level_end(d));
      CHECK(v.code_of(t) == std::pair<size_t, uint32_t>{d, c});
    }
  }
  CHECK_THROWS(v.token(0, 8));
  CHECK_THROWS(v.token(4, 0));
  CHECK_THROWS(v.code_of(TokenVocab::kSep));
  CHECK(v.level_at(0) == -1);
  CHECK(v.level_at(1) == 0);
  CHECK(v.level_at(4) == 3);
  CHECK(v.level_at(5) == -1);
  CHECK(v.level_at(6) == 0);
}

TEST_CASE("token streams") {
  const TokenVocab v{4, 8, true};
  IdTable table = {{"a", {{1, 2, 3, 4}}}, {"b", {{7, 0, 0, 5}}}};
  CHECK(tokenize_items(std::vector<std::string>{}, table, v) == TokenStream{TokenVocab::kBos});
  const std::vector<std::string> items = {"a", "b"};
  const auto s = tokenize_items(items, table, v);
  CHECK(s.size() == 11);
  CHECK(s[5] == TokenVocab::kSep);
  const auto parsed = parse_stream(s, v);
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[0] == table["a"]);
  CHECK(parsed[1] == table["b"]);
  CHECK_THROWS_AS(tokenize_items(std::vector<std::string>{"zz"}, table, v), Error);

  const TokenVocab nosep{4, 8, false};
  const auto compact = tokenize_items(items, table, nosep);
  CHECK(compact.size() == 9);
  CHECK(parse_stream(compact, nosep)[1] == table["b"]);

  data::InteractionSequence seq{"u", items, "A"};
  CHECK(tokenize_sequence(seq, table, v) == s);

  testutil::TempDir dir("ids");
  const std::vector<std::string> names = {"a", "b"};
  const std::vector<ConceptId> ids = {table["a"], table["b"]};
  write_id_table(dir / "ids.jsonl", names, ids);
  size_t levels = 0;
  const auto back = load_id_table(dir / "ids.jsonl", &levels);
  CHECK(levels == 4);
  CHECK(back.at("b") == table["b"]);
}

TEST_CASE("sliding windows count every target once") {
  const TokenVocab v{2, 4, true};
  for (size_t items : {3, 20, 57}) {
    const size_t length = 1 + items * v.period();
    const auto windows = stream_windows(length, 24, v);
    std::vector<int> counted(length, 0);
    for (const auto& [start, from] : windows) {
      CHECK((start == 0 || (start - 1) % v.period() == 0));
      for (size_t pos = std::max(start + 1, from); pos < std::min(length, start + 24); ++pos) counted[pos]++;
    }
    for (size_t pos = 1; pos < length; ++pos) CHECK(counted[pos] == 1);
  }
}

TEST_CASE("transformer gradients match finite differences") {
  for (uint64_t trial = 0; trial < 6; ++trial) {
    auto cfg = tiny_config(trial);
    cfg.hidden = 8;
    cfg.heads = 1 + trial % 2;
    cfg.layers = 1 + trial % 2;
    cfg.dropout = trial >= 4 ? 0.2 : 0.0;
    cfg.init_std = 0.3;
    Transformer net(cfg, 11);
    Rng rng(5, "grad/transformer", trial);
    std::vector<int> tokens(5);
    std::vector<int> targets(5);
    for (auto& t : tokens) t = static_cast<int>(rng.uniform_int(11));
    for (auto& t : targets) t = static_cast<int>(rng.uniform_int(11));
    targets[1] = nn::kIgnoreTarget;

    const Rng drop_seed(9, "drop", trial);
    Transformer::ForwardCache cache;
    Rng d0 = drop_seed;
    const auto logits = net.forward(tokens, &cache, cfg.dropout > 0 ? &d0 : nullptr);
    const auto xent = nn::softmax_cross_entropy(logits, targets);
    net.params().zero_grad();
    net.backward(cache, xent.dlogits);

    std::vector<nn::GradCheckTarget> targets_gc;
    for (auto& p : net.params().params()) targets_gc.push_back({p.name, p.value.values(), p.grad.values()});
    auto loss = [&] {
      Rng d = drop_seed;
      return nn::Tensor({1}, nn::softmax_cross_entropy(net.forward(tokens, nullptr, cfg.dropout > 0 ? &d : nullptr), targets).loss_sum);
    };
    const auto rep = nn::grad_check(loss, targets_gc);
    INFO("trial " << trial << " worst " << rep.worst << " rel " << rep.max_rel_error);
    CHECK(rep.passed);
  }
}

TEST_CASE("causality and incremental decoding") {
  auto cfg = tiny_config();
  cfg.init_std = 0.3;
  Transformer net(cfg, 20);
  std::vector<int> tokens = {1, 5, 9, 2, 7, 11, 3};
  const auto full = net.forward(tokens);
  auto altered = tokens;
  altered[5] = 19;
  const auto changed = net.forward(altered);
  for (size_t i = 0; i < 5 * 20; ++i) CHECK(full[i] == changed[i]);

  auto state = net.new_state();
  for (size_t t = 0; t < tokens.size(); ++t) {
    const auto row = net.step(state, tokens[t]);
    for (size_t j = 0; j < 20; ++j) CHECK(row[j] == doctest::Approx(full.at(t, j)).epsilon(1e-12));
  }
  CHECK_THROWS(net.forward(std::vector<int>(65, 1)));
  CHECK_THROWS(net.forward(std::vector<int>{1, 20}));
}

TEST_CASE("uniform model scores and NLL") {
  const TokenVocab v{3, 5, true};
  auto cfg = tiny_config();
  cfg.zero_init_output = true;
  ArModel model(cfg, v);
  Rng rng(2, "uniform");
  const auto history = random_stream(v, 4, rng);
  CHECK(model.score_candidate(history, ConceptId{{1, 2, 3}}) == doctest::Approx(-3.0 * std::log(5.0)).epsilon(1e-12));

  TokenCorpus corpus{v, {history, random_stream(v, 6, rng)}};
  CHECK(std::abs(model.evaluate_nll(corpus) - std::log(static_cast<double>(v.size()))) < 1e-6);
  CHECK_THROWS_AS(model.score_candidate(history, ConceptId{{1, 5, 0}}), Error);
  CHECK_THROWS_AS(model.score_candidate(history, ConceptId{{1, 2}}), Error);
}

TEST_CASE("scores are shift invariant and batched scoring is exact") {
  const TokenVocab v{2, 6, true};
  ArModel model(tiny_config(), v);
  scramble(model, 3);
  Rng rng(4, "batch");
  const auto history = random_stream(v, 5, rng);
  std::vector<ConceptId> candidates;
  for (int i = 0; i < 50; ++i) {
    candidates.push_back({{static_cast<uint32_t>(rng.uniform_int(6)), static_cast<uint32_t>(rng.uniform_int(6))}});
  }
  const auto batch = model.score_candidates(history, candidates);
  for (size_t i = 0; i < candidates.size(); ++i) {
    CHECK(batch[i] == model.score_candidate(history, candidates[i]));
    CHECK(batch[i] <= 0.0);
  }

  auto& bias = model.net().params().at("head.bias").value;
  for (auto& b : bias.values()) b += 3.0;
  for (size_t i = 0; i < 5; ++i) CHECK(model.score_candidate(history, candidates[i]) == doctest::Approx(batch[i]).epsilon(1e-9));
}

TEST_CASE("joint probabilities over all candidates sum to one") {
  const TokenVocab v{2, 4, true};
  for (bool masking : {true, false}) {
    auto cfg = tiny_config();
    cfg.level_masking = masking;
    ArModel model(cfg, v);
    scramble(model, 11);
    const auto everything = all_ids(2, 4);
    for (uint64_t h = 0; h < 10; ++h) {
      Rng rng(6, "eq8", h);
      const auto history = random_stream(v, h % 4, rng);
      double total = 0.0;
      for (double lp : model.score_candidates(history, everything)) total += std::exp(lp);
      if (masking) {
        CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
      } else {
        CHECK(total < 1.0);
      }
    }
  }
}

TEST_CASE("greedy and beam decoding") {
  const TokenVocab v{2, 4, true};
  ArModel model(tiny_config(), v);
  scramble(model, 21);
  const auto everything = all_ids(2, 4);
  for (uint64_t h = 0; h < 8; ++h) {
    Rng rng(8, "decode", h);
    const auto history = random_stream(v, 1 + h % 3, rng);
    const auto greedy = model.generate_next(history);
    const auto level0 = model.candidate_log_probs(history, greedy.id);
    for (uint32_t c = 0; c < 4; ++c) {
      CHECK(model.candidate_log_probs(history, ConceptId{{c, 0}})[0] <= level0[0]);
    }
    const auto width1 = model.generate_next(history, {DecodeStrategy::kBeam, 1});
    CHECK(width1.id == greedy.id);
    CHECK(width1.log_prob == doctest::Approx(greedy.log_prob));

    const auto scores = model.score_candidates(history, everything);
    const auto best = std::max_element(scores.begin(), scores.end()) - scores.begin();
    const auto beam = model.generate_next(history, {DecodeStrategy::kBeam, 16});
    CHECK(beam.id == everything[best]);
    CHECK(beam.log_prob == doctest::Approx(scores[best]).epsilon(1e-12));
  }
}

TEST_CASE("ranking") {
  std::vector<ScoredCandidate> c = {{"a", -3.0, 0}, {"b", -1.0, 0}, {"c", -3.0, 0}, {"d", -0.5, 0}};
  assign_ranks(c);
  CHECK(c[3].rank == 1);
  CHECK(c[1].rank == 2);
  CHECK(c[0].rank == 3);
  CHECK(c[2].rank == 4);
  auto t = c;
  for (auto& x : t) x.log_prob = std::exp(x.log_prob) * 10.0 - 7.0;
  assign_ranks(t);
  for (size_t i = 0; i < c.size(); ++i) CHECK(t[i].rank == c[i].rank);
}

TEST_CASE("overfitting a single repeated stream") {
  const TokenVocab v{2, 4, true};
  Rng rng(12, "overfit");
  const auto stream = random_stream(v, 6, rng);
  TokenCorpus corpus{v, std::vector<TokenStream>(4, stream)};
  auto cfg = tiny_config();
  cfg.hidden = 32;
  cfg.learning_rate = 1e-2;
  cfg.clip_norm = 1.0;
  ArModel model(cfg, v);
  double last = INFINITY;
  size_t epochs = 0;
  model.train(corpus, "pretrain", 200, cfg.learning_rate, [&](const EpochNll& e) {
    last = e.nll;
    epochs = e.epoch + 1;
  });
  CHECK(epochs == 200);
  CHECK(last < 0.05);
  CHECK(model.evaluate_nll(corpus) < 0.05);
}

TEST_CASE("training is deterministic and resumable") {
  const TokenVocab v{2, 8, true};
  Rng rng(13, "corpus");
  TokenCorpus corpus{v, {}};
  for (int i = 0; i < 12; ++i) corpus.streams.push_back(random_stream(v, 8 + i % 5, rng));
  auto cfg = tiny_config(4);
  cfg.dropout = 0.1;
  cfg.context = 24;

  ArModel a(cfg, v), b(cfg, v);
  const auto ha = a.train(corpus, "pretrain", 6, cfg.learning_rate);
  b.train(corpus, "pretrain", 6, cfg.learning_rate);
  CHECK(a.serialize() == b.serialize());
  for (size_t e = 1; e < 5; ++e) CHECK(ha[e].nll < ha[0].nll);

  testutil::TempDir dir("ar");
  ArModel c(cfg, v);
  c.train(corpus, "pretrain", 3, cfg.learning_rate);
  c.save(dir / "mid.ckpt");
  auto resumed = ArModel::load(dir / "mid.ckpt");
  CHECK(resumed.phase_epochs_done() == 3);
  resumed.train(corpus, "pretrain", 6, cfg.learning_rate);
  CHECK(resumed.serialize() == a.serialize());

  // Fine-tuning: zero epochs is a no-op, mid-phase resume matches.
  const auto before = a.serialize();
  finetune(a, corpus, {0, 1e-3});
  CHECK(a.serialize() == before);
  ArModel f1 = ArModel::load(dir / "mid.ckpt");
  f1.train(corpus, "pretrain", 6, cfg.learning_rate);
  finetune(f1, corpus, {4, 1e-3});
  ArModel f2 = ArModel::load(dir / "mid.ckpt");
  f2.train(corpus, "pretrain", 6, cfg.learning_rate);
  finetune(f2, corpus, {2, 1e-3});
  f2.save(dir / "ft.ckpt");
  auto f3 = ArModel::load(dir / "ft.ckpt");
  finetune(f3, corpus, {4, 1e-3});
  CHECK(f3.serialize() == f1.serialize());

  TokenCorpus other{TokenVocab{2, 4, true}, {}};
  other.streams.push_back({TokenVocab::kBos});
  try {
    finetune(f3, other, {1, 1e-3});
    FAIL("expected a vocabulary mismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kMismatch);
  }
  CHECK_THROWS_AS(a.train(TokenCorpus{v, {}}, "pretrain", 7, 1e-3), Error);
}

TEST_CASE("config validation") {
  const TokenVocab v{2, 4, true};
  auto cfg = tiny_config();
  cfg.heads = 3;
  CHECK_THROWS_AS(ArModel(cfg, v), Error);
  cfg = tiny_config();
  cfg.context = 6;
  CHECK_THROWS_AS(ArModel(cfg, v), Error);
  cfg = tiny_config();
  const auto j = to_json(cfg);
  CHECK(to_json(ar_config_from_json(j)) == j);
}
