// Acceptance suite: one PASS/FAIL line per criterion.
//   acceptance            run everything
//   acceptance 3 7        run selected criteria

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "recbase/ar_model.hpp"
#include "recbase/benchmark.hpp"
#include "recbase/cli.hpp"
#include "recbase/clvae.hpp"
#include "recbase/error.hpp"
#include "recbase/eval.hpp"
#include "recbase/grad_check.hpp"
#include "recbase/layers.hpp"
#include "recbase/pipeline.hpp"
#include "recbase/quantizer.hpp"
#include "recbase/rng.hpp"
#include "recbase/run_config.hpp"

#ifndef RECBASE_SOURCE_DIR
#define RECBASE_SOURCE_DIR "."
#endif

using namespace recbase;
using nlohmann::json;
using nn::Tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor random_tensor(std::vector<size_t> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

Tensor weighted_sum(const Tensor& y, const Tensor& r) {
  double s = 0.0;
  for (size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return Tensor({1}, s);
}

cli::RunConfig reference_config() {
  const std::vector<std::string> none;
  return cli::typed_config(cli::resolve_config(std::string(RECBASE_SOURCE_DIR) + "/configs/reference.json", none));
}

// --- 1 ---------------------------------------------------------------------------

std::vector<uint32_t> brute_force_codes(std::vector<double> r, const std::vector<Tensor>& books) {
  std::vector<uint32_t> codes;
  for (const auto& book : books) {
    uint32_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < book.rows(); ++k) {
      double d = 0.0;
      for (size_t j = 0; j < r.size(); ++j) d += (r[j] - book.at(k, j)) * (r[j] - book.at(k, j));
      if (d < best_d) best_d = d, best = static_cast<uint32_t>(k);
    }
    codes.push_back(best);
    for (size_t j = 0; j < r.size(); ++j) r[j] -= book.at(best, j);
  }
  return codes;
}

Outcome quantizer_oracle() {
  size_t mismatches = 0, identity_failures = 0;
  double worst = 0.0;
  for (uint64_t trial = 0; trial < 1000; ++trial) {
    Rng rng(1001, "accept/rq", trial);
    const size_t m = 1 + rng.uniform_int(4), k = 1 + rng.uniform_int(64), dim = 1 + rng.uniform_int(8);
    std::vector<Tensor> books;
    std::vector<const Tensor*> ptrs;
    for (size_t d = 0; d < m; ++d) books.push_back(random_tensor({k, dim}, rng, 1.0 / static_cast<double>(d + 1)));
    for (const auto& b : books) ptrs.push_back(&b);
    std::vector<double> z(dim);
    for (auto& v : z) v = rng.normal();
    const auto q = tok::residual_quantize(z, tok::CodebookStack(ptrs), m);
    if (q.indices != brute_force_codes(z, books)) ++mismatches;
    bool ok = true;
    for (size_t d = 0; d < m; ++d) {
      const auto code = books[d].row(q.indices[d]);
      for (size_t j = 0; j < dim; ++j) {
        const double err = std::abs(q.residuals[d + 1][j] + code[j] - q.residuals[d][j]);
        worst = std::max(worst, err);
        if (err > 1e-6) ok = false;
      }
    }
    for (size_t j = 0; j < dim; ++j) {
      const double err = std::abs(z[j] - q.z_q[j] - q.residuals[m][j]);
      worst = std::max(worst, err);
      if (err > 1e-6) ok = false;
    }
    if (!ok) ++identity_failures;
  }
  return {mismatches == 0 && identity_failures == 0,
          fmt("1000 instances, %zu index mismatches, %zu identity failures, max residual error %.1e", mismatches,
              identity_failures, worst)};
}

// --- 2 ---------------------------------------------------------------------------

struct GradTally {
  size_t configs = 0;
  size_t failed = 0;
  double worst = 0.0;
  std::string worst_where;

  void add(const std::string& op, const nn::GradCheckReport& rep) {
    ++configs;
    if (!rep.passed || rep.checked == 0) ++failed;
    if (rep.max_rel_error > worst) worst = rep.max_rel_error, worst_where = op + ":" + rep.worst;
  }
};

nn::GradCheckTarget target(const char* name, Tensor& value, const Tensor& grad) {
  return {name, value.values(), grad.values()};
}

Outcome gradient_suite() {
  constexpr size_t kConfigs = 20;
  GradTally tally;
  std::set<std::string> ops;

  for (uint64_t trial = 0; trial < kConfigs; ++trial) {
    Rng rng(2001, "accept/grad", trial);
    const size_t n = 1 + rng.uniform_int(4), in = 1 + rng.uniform_int(5), out = 1 + rng.uniform_int(5);

    {
      Tensor x = random_tensor({n, in}, rng), w = random_tensor({in, out}, rng), b = random_tensor({out}, rng);
      const Tensor r = random_tensor({n, out}, rng);
      Tensor dw({in, out}), db({out});
      const Tensor dx = nn::linear_backward(x, w, r, dw, db);
      tally.add("linear", nn::grad_check([&] { return weighted_sum(nn::linear_forward(x, w, b), r); },
                                         std::vector{target("x", x, dx), target("w", w, dw), target("b", b, db)}));
      ops.insert("linear");
    }
    for (auto act : {nn::Activation::kGelu, nn::Activation::kRelu}) {
      Tensor x = random_tensor({n, out}, rng);
      for (auto& v : x.values()) v += v >= 0 ? 0.1 : -0.1;  // away from the ReLU kink
      const Tensor r = random_tensor({n, out}, rng);
      const Tensor dx = nn::activation_backward(act, x, r);
      const std::string name = act == nn::Activation::kGelu ? "gelu" : "relu";
      tally.add(name, nn::grad_check([&] { return weighted_sum(nn::activation_forward(act, x), r); },
                                     std::vector{target("x", x, dx)}));
      ops.insert(name);
    }
    {
      const size_t d = 2 + rng.uniform_int(5);
      Tensor x = random_tensor({n, d}, rng), g = random_tensor({d}, rng), b = random_tensor({d}, rng);
      const Tensor r = random_tensor({n, d}, rng);
      nn::LayerNormCache cache;
      nn::layer_norm_forward(x, g, b, cache);
      Tensor dg({d}), db({d});
      const Tensor dx = nn::layer_norm_backward(x, g, cache, r, dg, db);
      auto loss = [&] {
        nn::LayerNormCache c;
        return weighted_sum(nn::layer_norm_forward(x, g, b, c), r);
      };
      tally.add("layer_norm",
                nn::grad_check(loss, std::vector{target("x", x, dx), target("gamma", g, dg), target("beta", b, db)}));
      ops.insert("layer_norm");
    }
    {
      const size_t classes = 2 + rng.uniform_int(6);
      Tensor logits = random_tensor({n, classes}, rng);
      std::vector<int> targets(n);
      for (auto& t : targets) t = static_cast<int>(rng.uniform_int(classes));
      if (n > 1) targets[0] = nn::kIgnoreTarget;
      const auto res = nn::softmax_cross_entropy(logits, targets);
      tally.add("cross_entropy",
                nn::grad_check([&] { return Tensor({1}, nn::softmax_cross_entropy(logits, targets).loss_sum); },
                               std::vector{target("logits", logits, res.dlogits)}));
      ops.insert("cross_entropy");
    }
    {
      const size_t t = 1 + rng.uniform_int(5), heads = 1 + rng.uniform_int(2), hidden = heads * (1 + rng.uniform_int(3));
      Tensor qkv = random_tensor({t, 3 * hidden}, rng);
      const Tensor r = random_tensor({t, hidden}, rng);
      nn::AttentionCache cache;
      nn::causal_self_attention_forward(qkv, heads, cache);
      const Tensor dqkv = nn::causal_self_attention_backward(qkv, cache, r);
      auto loss = [&] {
        nn::AttentionCache c;
        return weighted_sum(nn::causal_self_attention_forward(qkv, heads, c), r);
      };
      tally.add("attention", nn::grad_check(loss, std::vector{target("qkv", qkv, dqkv)}));
      ops.insert("attention");
    }
    {
      ar::ARConfig cfg;
      cfg.hidden = 4 * (1 + rng.uniform_int(2));
      cfg.heads = 1 + rng.uniform_int(2);
      cfg.layers = 1 + rng.uniform_int(2);
      cfg.context = 8;
      cfg.init_std = 0.3;
      cfg.dropout = trial % 4 == 3 ? 0.2 : 0.0;
      cfg.seed = trial;
      const size_t vocab = 5 + rng.uniform_int(6);
      ar::Transformer net(cfg, vocab);
      const size_t len = 2 + rng.uniform_int(5);
      std::vector<int> tokens(len), targets(len);
      for (auto& t : tokens) t = static_cast<int>(rng.uniform_int(vocab));
      for (auto& t : targets) t = static_cast<int>(rng.uniform_int(vocab));
      const Rng drop(2002, "accept/drop", trial);
      Rng d0 = drop;
      ar::Transformer::ForwardCache cache;
      const auto logits = net.forward(tokens, &cache, cfg.dropout > 0 ? &d0 : nullptr);
      net.params().zero_grad();
      net.backward(cache, nn::softmax_cross_entropy(logits, targets).dlogits);
      std::vector<nn::GradCheckTarget> gc;
      for (auto& p : net.params().params()) gc.push_back({p.name, p.value.values(), p.grad.values()});
      auto loss = [&] {
        Rng d = drop;
        return Tensor({1}, nn::softmax_cross_entropy(net.forward(tokens, nullptr, cfg.dropout > 0 ? &d : nullptr),
                                                     targets)
                               .loss_sum);
      };
      tally.add("transformer", nn::grad_check(loss, gc));
      ops.insert("transformer");
    }
    {
      tok::QuantizerConfig cfg;
      cfg.input_dim = 2 + rng.uniform_int(4);
      cfg.latent_dim = 2 + rng.uniform_int(3);
      cfg.hidden_dim = 3 + rng.uniform_int(4);
      cfg.levels = 1 + rng.uniform_int(3);
      cfg.codebook_size = 2 + rng.uniform_int(6);
      cfg.codebook_init_scale = 0.7;
      cfg.gamma = 0.05 * static_cast<double>(1 + rng.uniform_int(2));
      cfg.kl_weight = trial % 2 == 0 ? 0.0 : 0.1;
      cfg.activation = trial % 3 == 0 ? nn::Activation::kRelu : nn::Activation::kGelu;
      cfg.seed = 3000 + trial;
      tok::ClVae vae(cfg);
      const size_t batch = 1 + rng.uniform_int(4);
      const Tensor x = random_tensor({batch, cfg.input_dim}, rng);
      const Tensor eps = random_tensor({batch, cfg.latent_dim}, rng);
      const size_t active = 1 + rng.uniform_int(cfg.levels);
      tok::StopGradSnapshot snap;
      vae.params().zero_grad();
      vae.forward_backward(x, eps, active, true, nullptr, &snap);
      std::vector<nn::GradCheckTarget> gc;
      for (auto& p : vae.params().params()) {
        if (p.trainable) gc.push_back({p.name, p.value.values(), p.grad.values()});
      }
      auto loss = [&] { return Tensor({1}, vae.forward_backward(x, eps, active, false, &snap).loss.total); };
      tally.add("clvae_loss", nn::grad_check(loss, gc));
      ops.insert("clvae_loss");
    }
  }
  return {tally.failed == 0, fmt("%zu ops x %zu configs, %zu failed, worst rel %.2e at %s", ops.size(), kConfigs,
                                 tally.failed, tally.worst, tally.worst_where.c_str())};
}

// --- 3 ---------------------------------------------------------------------------

Outcome eq8_normalization() {
  const ar::TokenVocab vocab{2, 4, true};
  ar::ARConfig cfg;
  cfg.hidden = 16;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.context = 64;
  cfg.seed = 3;
  ar::ArModel model(cfg, vocab);
  Rng scramble(3001, "accept/scramble");
  for (auto& p : model.net().params().params()) {
    for (auto& v : p.value.values()) v = static_cast<double>(static_cast<float>(0.5 * scramble.normal()));
  }
  std::vector<tok::ConceptId> all;
  for (uint32_t a = 0; a < 4; ++a) {
    for (uint32_t b = 0; b < 4; ++b) all.push_back({{a, b}});
  }
  double worst = 0.0;
  for (uint64_t h = 0; h < 10; ++h) {
    Rng rng(3002, "accept/history", h);
    const size_t items = rng.uniform_int(6);
    std::vector<std::string> names;
    ar::IdTable table;
    for (size_t i = 0; i < items; ++i) {
      names.push_back("h" + std::to_string(i));
      table[names.back()] = all[rng.uniform_int(all.size())];
    }
    const auto history = ar::tokenize_items(names, table, vocab);
    double total = 0.0;
    for (const auto& c : all) total += std::exp(model.score_candidate(history, c));
    worst = std::max(worst, std::abs(total - 1.0));
  }
  return {worst <= 1e-6, fmt("10 histories, max |sum - 1| = %.2e", worst)};
}

// --- 4 ---------------------------------------------------------------------------

double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0.0;
  size_t pairs = 0;
  for (size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      ++pairs;
      num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return num / static_cast<double>(pairs);
}

Outcome auc_oracle() {
  const double hand = eval::auc(std::vector<double>{0.9, 0.8, 0.7, 0.6}, std::vector<int>{1, 0, 1, 0});
  size_t mismatches = 0;
  for (uint64_t trial = 0; trial < 500; ++trial) {
    Rng rng(4001, "accept/auc", trial);
    const size_t p = 1 + rng.uniform_int(200), n = 1 + rng.uniform_int(200);
    const size_t levels = 1 + rng.uniform_int(40);  // coarse scores force ties
    std::vector<double> s;
    std::vector<int> y;
    for (size_t i = 0; i < p + n; ++i) {
      s.push_back(trial % 2 ? static_cast<double>(rng.uniform_int(levels)) / 7.0 : rng.normal());
      y.push_back(i < p ? 1 : 0);
    }
    for (size_t i = s.size(); i > 1; --i) {
      const size_t j = rng.uniform_int(i);
      std::swap(s[i - 1], s[j]);
      std::swap(y[i - 1], y[j]);
    }
    if (eval::auc(s, y) != pairwise_auc(s, y)) ++mismatches;
  }
  return {hand == 0.75 && mismatches == 0,
          fmt("hand case %.4f, %zu/500 random instances differ from pairwise", hand, mismatches)};
}

// --- 5 ---------------------------------------------------------------------------

Outcome codebook_health() {
  const auto rc = reference_config();
  const auto bench = data::synth_benchmark(rc.benchmark);

  tok::QuantizerConfig cl = rc.pipeline.tokenizer;
  cl.input_dim = bench.embeddings.dim();
  cl.levels = 4;
  cl.codebook_size = 256;
  auto plain = cl;
  plain.curriculum.enabled = false;
  plain.reinit.enabled = false;
  plain.gamma = 0.0;

  tok::ClVae a(cl), b(plain);
  a.train(bench.embeddings);
  b.train(bench.embeddings);
  const auto da = a.tokenize_catalog(bench.embeddings).diagnostics;
  const auto db = b.tokenize_catalog(bench.embeddings).diagnostics;
  const double gain = da.utilization[0] - db.utilization[0];
  const bool pass_a = gain >= 0.10;

  bool pass_b = da.collision_rate_by_depth.size() == 4;
  for (size_t m = 1; m < da.collision_rate_by_depth.size(); ++m) {
    pass_b = pass_b && da.collision_rate_by_depth[m] <= da.collision_rate_by_depth[m - 1];
  }

  // Same benchmark family with enough items that neither codebook size is
  // capped by the item count at level 0.
  auto big = rc.benchmark;
  big.items_per_domain = 2400;
  big.users_per_domain = 1;
  big.min_length = big.max_length = 2;
  const auto big_bench = data::synth_benchmark(big);
  auto kcfg = rc.pipeline.tokenizer;
  kcfg.input_dim = big_bench.embeddings.dim();
  kcfg.latent_dim = 8;
  kcfg.batch_size = 256;
  kcfg.epochs = 8;
  kcfg.curriculum.max_epochs_per_level = 4;
  std::vector<double> util;
  for (size_t k : {2048, 4096}) {
    kcfg.codebook_size = k;
    tok::ClVae v(kcfg);
    v.train(big_bench.embeddings);
    util.push_back(v.tokenize_catalog(big_bench.embeddings).diagnostics.utilization[0]);
  }
  const bool pass_c = util[1] <= util[0];

  std::string collisions;
  for (double c : da.collision_rate_by_depth) collisions += fmt("%.3f ", c);
  collisions.pop_back();
  return {pass_a && pass_b && pass_c,
          fmt("(a) level-0 utilization CL-VAE %.3f vs RQ-VAE %.3f (+%.1f pts) %s; (b) collision m=1..4 %s %s; "
              "(c) utilization K=2048 %.3f, K=4096 %.3f on %zu items %s",
              da.utilization[0], db.utilization[0], 100 * gain, pass_a ? "ok" : "FAIL", collisions.c_str(),
              pass_b ? "ok" : "FAIL", util[0], util[1], big_bench.catalog.size(), pass_c ? "ok" : "FAIL")};
}

// --- 6 ---------------------------------------------------------------------------

Outcome curriculum_mechanics() {
  const auto rc = reference_config();
  const auto bench = data::synth_benchmark(rc.benchmark);
  tok::QuantizerConfig cfg = rc.pipeline.tokenizer;
  cfg.input_dim = bench.embeddings.dim();
  cfg.levels = 4;
  cfg.codebook_size = 64;
  cfg.epochs = 50;
  cfg.curriculum.max_epochs_per_level = 12;

  std::vector<tok::EpochMetrics> trace;
  tok::ClVae vae(cfg);
  vae.train(bench.embeddings, [&](const tok::EpochMetrics& m) { trace.push_back(m); });

  // Independent replay of the unlock rule from the logged losses.
  const auto& cc = cfg.curriculum;
  size_t level = 0, in_level = 0, stalls = 0, increments = 0, violations = 0, converged = 0;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& m : trace) {
    if (m.used_level != level) ++violations;
    ++in_level;
    if (in_level > 1) stalls = (best - m.loss.total) / std::abs(best) < cc.rel_improvement_eps ? stalls + 1 : 0;
    best = std::min(best, m.loss.total);
    bool unlock = false;
    if (level + 1 < cfg.levels && (stalls >= cc.patience_epochs || in_level >= cc.max_epochs_per_level)) {
      unlock = true;
      if (stalls >= cc.patience_epochs) ++converged;
    }
    if (unlock != (m.unlock != tok::UnlockReason::kNone)) ++violations;
    if (unlock) {
      ++level, ++increments;
      in_level = stalls = 0;
      best = std::numeric_limits<double>::infinity();
    }
  }

  auto off = eval::arm_tokenizer_config(cfg, eval::parse_arm("wo-cur"));
  off.epochs = 10;
  tok::ClVae flat(off);
  size_t not_full = 0;
  flat.train(bench.embeddings, [&](const tok::EpochMetrics& m) {
    if (m.used_level != cfg.levels - 1 || m.active_levels != cfg.levels) ++not_full;
  });
  return {violations == 0 && increments == cfg.levels - 1 && not_full == 0,
          fmt("%zu unlocks (%zu by patience, %zu by cap) all matching the replayed rule (%zu violations); "
              "w/o cur: %zu epochs not at full depth",
              increments, converged, increments - converged, violations, not_full)};
}

// --- 7 and 8 ---------------------------------------------------------------------

struct ReferenceRun {
  bool done = false;
  eval::ArmResult result;
  double seconds = 0.0;
};

ReferenceRun& reference_run() {
  static ReferenceRun run;
  if (!run.done) {
    const auto t0 = std::chrono::steady_clock::now();
    auto rc = reference_config();
    rc.pipeline.score_untrained = true;
    rc.pipeline.run_finetune = true;
    const auto bench = data::synth_benchmark(rc.benchmark);
    const auto d = eval::benchmark_data(bench, rc.pipeline);
    run.result = eval::run_pipeline(d, rc.pipeline, rc.flags);
    run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    run.done = true;
  }
  return run;
}

Outcome zero_shot_signal() {
  const auto& run = reference_run();
  const auto& r = run.result;
  const bool ok = r.zero_shot.auc > 0.55 && r.untrained && r.untrained->auc >= 0.45 && r.untrained->auc <= 0.55 &&
                  r.untrained->records >= 2000 && run.seconds < 600;
  return {ok, fmt("zero-shot AUC %.4f on %zu records; untrained AUC %.4f; pipeline %.0f s", r.zero_shot.auc,
                  r.zero_shot.records, r.untrained ? r.untrained->auc : -1.0, run.seconds)};
}

Outcome finetune_direction() {
  const auto& r = reference_run().result;
  if (!r.finetuned) return {false, "no fine-tuned report"};
  const double lift = r.finetuned->auc - r.zero_shot.auc;
  return {lift >= 0.02, fmt("fine-tuned %.4f vs zero-shot %.4f (%+.4f)", r.finetuned->auc, r.zero_shot.auc, lift)};
}

// --- 9 ---------------------------------------------------------------------------

Outcome overfit_sanity() {
  const ar::TokenVocab vocab{2, 4, true};
  Rng rng(9001, "accept/overfit");
  std::vector<std::string> names;
  ar::IdTable table;
  for (size_t i = 0; i < 6; ++i) {
    names.push_back("o" + std::to_string(i));
    table[names.back()] = {{static_cast<uint32_t>(rng.uniform_int(4)), static_cast<uint32_t>(rng.uniform_int(4))}};
  }
  const auto stream = ar::tokenize_items(names, table, vocab);
  const ar::TokenCorpus corpus{vocab, std::vector<ar::TokenStream>(4, stream)};

  ar::ARConfig cfg;
  cfg.hidden = 32;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.context = 64;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e-2;
  cfg.seed = 1;
  ar::ArModel model(cfg, vocab);
  size_t reached = 0;
  double last = 0.0;
  model.train(corpus, "pretrain", 200, cfg.learning_rate, [&](const ar::EpochNll& e) {
    last = e.nll;
    if (!reached && e.nll < 0.05) reached = e.epoch + 1;
  });
  const double final_nll = model.evaluate_nll(corpus);

  auto zcfg = cfg;
  zcfg.zero_init_output = true;
  const ar::ArModel fresh(zcfg, vocab);
  const double zero_nll = fresh.evaluate_nll(corpus);
  const double expected = std::log(static_cast<double>(vocab.size()));
  return {reached > 0 && final_nll < 0.05 && std::abs(zero_nll - expected) <= 1e-6,
          fmt("NLL < 0.05 first at epoch %zu (final %.4f); zero-init NLL %.9f vs ln %zu = %.9f", reached, final_nll,
              zero_nll, vocab.size(), expected)};
}

// --- 10 --------------------------------------------------------------------------

int cli_quiet(const std::vector<std::string>& args) {
  std::ostringstream sink;
  auto* old = std::cerr.rdbuf(sink.rdbuf());
  const int code = cli::run(args);
  std::cerr.rdbuf(old);
  if (code != 0) std::cerr << sink.str();
  return code;
}

json read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  return json::parse(in);
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / ("recbase-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(root);
  const std::string config = std::string(RECBASE_SOURCE_DIR) + "/configs/reference.json";
  const std::vector<std::string> common = {"--config", config, "--set", "benchmark.users_per_domain=80",
                                           "--set", "tokenizer.epochs=24", "--set", "tokenizer.curriculum.max_epochs_per_level=8",
                                           "--set", "model.epochs=2", "--set", "finetune.epochs=2"};
  const std::vector<std::string> stages = {"data", "tok", "ids", "pre", "ft", "eval-zs", "eval-ft", "diag"};

  auto pipeline = [&](const fs::path& dir) {
    auto p = [&](const char* s) { return (dir / s).string(); };
    const std::vector<std::vector<std::string>> steps = {
        {"synth-data", "--out", p("data")},
        {"tokenizer-train", "--data", p("data"), "--out", p("tok")},
        {"tokenize", "--data", p("data"), "--tokenizer", p("tok"), "--out", p("ids")},
        {"pretrain", "--data", p("data"), "--ids", p("ids"), "--out", p("pre")},
        {"finetune", "--data", p("data"), "--ids", p("ids"), "--model", p("pre"), "--out", p("ft")},
        {"eval", "--data", p("data"), "--tokenizer", p("tok"), "--model", p("pre"), "--out", p("eval-zs")},
        {"eval", "--data", p("data"), "--tokenizer", p("tok"), "--model", p("ft"), "--out", p("eval-ft")},
        {"diagnose", "--data", p("data"), "--tokenizer", p("tok"), "--out", p("diag")},
    };
    for (auto step : steps) {
      step.insert(step.end(), common.begin(), common.end());
      if (const int code = cli_quiet(step); code != 0) {
        throw Error(ErrorKind::kState, "command " + step[0] + " exited with " + std::to_string(code));
      }
    }
  };
  pipeline(root / "run1");
  pipeline(root / "run2");

  size_t files = 0, differing = 0;
  std::string first_diff;
  for (const auto& stage : stages) {
    const auto a = read_manifest(root / "run1" / stage).at("outputs");
    const auto b = read_manifest(root / "run2" / stage).at("outputs");
    for (const auto& [name, hash] : a.items()) {
      ++files;
      if (!b.contains(name) || b.at(name) != hash) {
        ++differing;
        if (first_diff.empty()) first_diff = stage + "/" + name;
      }
    }
  }
  // Rerunning a command in place reproduces its output hashes.
  const auto before = read_manifest(root / "run1" / "pre").at("outputs");
  std::vector<std::string> again = {"pretrain", "--data", (root / "run1" / "data").string(), "--ids",
                                    (root / "run1" / "ids").string(), "--out", (root / "run1" / "pre").string()};
  again.insert(again.end(), common.begin(), common.end());
  const bool rerun_ok = cli_quiet(again) == 0 && read_manifest(root / "run1" / "pre").at("outputs") == before;
  fs::remove_all(root);
  return {files > 0 && differing == 0 && rerun_ok,
          fmt("%zu output files across %zu commands, %zu differ%s; in-place rerun %s", files, stages.size(), differing,
              first_diff.empty() ? "" : (" (first: " + first_diff + ")").c_str(), rerun_ok ? "identical" : "DIFFERS")};
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;  // 0 = no stated limit
  Outcome (*fn)();
};

}  // namespace

int main(int argc, char** argv) {
  const Criterion criteria[] = {
      {1, "quantizer oracle equivalence", 10, quantizer_oracle},
      {2, "gradient suite", 60, gradient_suite},
      {3, "candidate probabilities sum to one", 0, eq8_normalization},
      {4, "AUC oracle", 0, auc_oracle},
      {5, "codebook health trends", 300, codebook_health},
      {6, "curriculum mechanics", 0, curriculum_mechanics},
      {7, "end-to-end zero-shot signal", 600, zero_shot_signal},
      {8, "fine-tuning direction", 0, finetune_direction},
      {9, "overfit sanity", 0, overfit_sanity},
      {10, "determinism", 0, determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.fn();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_seconds > 0 && secs >= c.budget_seconds) {
      out.pass = false;
      out.detail += fmt("; over the %.0f s budget", c.budget_seconds);
    }
    std::printf("%s [%d] %s: %s (%.1f s)\n", out.pass ? "PASS" : "FAIL", c.id, c.name, out.detail.c_str(), secs);
    std::fflush(stdout);
    if (!out.pass) ++failures;
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
