#include <cmath>

#include "doctest.h"
#include "recbase/checkpoint.hpp"
#include "recbase/error.hpp"
#include "recbase/grad_check.hpp"
#include "recbase/layers.hpp"
#include "recbase/optim.hpp"
#include "recbase/rng.hpp"
#include "test_util.hpp"

using namespace recbase;
using namespace recbase::nn;

namespace {

Tensor random_tensor(std::vector<size_t> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

// sum(y * r): a scalar whose gradient w.r.t. y is r.
Tensor weighted_sum(const Tensor& y, const Tensor& r) {
  double s = 0.0;
  for (size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return Tensor({1}, s);
}

GradCheckTarget target(const char* name, Tensor& value, const Tensor& grad) {
  return {name, value.values(), grad.values()};
}

void check_report(const GradCheckReport& rep) {
  INFO("worst " << rep.worst << " rel " << rep.max_rel_error);
  CHECK(rep.passed);
  CHECK(rep.checked > 0);
}

}  // namespace

TEST_CASE("linear layer identity and gradients") {
  Tensor eye({3, 3});
  for (size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  Tensor x({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  const auto y = linear_forward(x, eye, Tensor({3}));
  CHECK(y.values() == x.values());
  CHECK_THROWS_AS(linear_forward(x, Tensor({2, 3}), Tensor({3})), ShapeError);

  for (uint64_t trial = 0; trial < 5; ++trial) {
    Rng rng(7, "grad/linear", trial);
    const size_t n = 1 + rng.uniform_int(4), in = 1 + rng.uniform_int(5), out = 1 + rng.uniform_int(5);
    Tensor xi = random_tensor({n, in}, rng), w = random_tensor({in, out}, rng), b = random_tensor({out}, rng);
    const Tensor r = random_tensor({n, out}, rng);
    Tensor dw({in, out}), db({out});
    const Tensor dx = linear_backward(xi, w, r, dw, db);
    auto loss = [&] { return weighted_sum(linear_forward(xi, w, b), r); };
    const std::vector targets = {target("x", xi, dx), target("w", w, dw), target("b", b, db)};
    check_report(grad_check(loss, targets));
  }
}

TEST_CASE("activations") {
  for (auto act : {Activation::kGelu, Activation::kRelu}) {
    Rng rng(3, "grad/act", static_cast<uint64_t>(act));
    Tensor x = random_tensor({4, 5}, rng);
    // ReLU is not differentiable at 0; keep samples away from the kink.
    for (auto& v : x.values()) v += v >= 0 ? 0.1 : -0.1;
    const Tensor r = random_tensor({4, 5}, rng);
    const Tensor dx = activation_backward(act, x, r);
    check_report(grad_check([&] { return weighted_sum(activation_forward(act, x), r); },
                            std::vector{target("x", x, dx)}));
  }
  const auto g = activation_forward(Activation::kGelu, Tensor({3}, std::vector<double>{0.0, 10.0, -10.0}));
  CHECK(g[0] == 0.0);
  CHECK(g[1] == doctest::Approx(10.0));
  CHECK(std::abs(g[2]) < 1e-12);
}

TEST_CASE("layer norm") {
  for (uint64_t trial = 0; trial < 4; ++trial) {
    Rng rng(5, "grad/ln", trial);
    Tensor x = random_tensor({3, 6}, rng), gamma = random_tensor({6}, rng), beta = random_tensor({6}, rng);
    const Tensor r = random_tensor({3, 6}, rng);
    LayerNormCache cache;
    const Tensor y = layer_norm_forward(x, gamma, beta, cache);
    Tensor dg({6}), db({6});
    const Tensor dx = layer_norm_backward(x, gamma, cache, r, dg, db);
    auto loss = [&] {
      LayerNormCache c;
      return weighted_sum(layer_norm_forward(x, gamma, beta, c), r);
    };
    check_report(grad_check(loss, std::vector{target("x", x, dx), target("gamma", gamma, dg), target("beta", beta, db)}));
    (void)y;
  }
  Tensor ones({1, 4}, std::vector<double>{1, 2, 3, 4});
  LayerNormCache c;
  const auto y = layer_norm_forward(ones, Tensor({4}, 1.0), Tensor({4}), c);
  double mean = 0.0, var = 0.0;
  for (double v : y.values()) mean += v / 4;
  for (double v : y.values()) var += (v - mean) * (v - mean) / 4;
  CHECK(std::abs(mean) < 1e-12);
  CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("softmax cross-entropy") {
  Rng rng(9, "grad/xent");
  Tensor logits = random_tensor({4, 7}, rng);
  const std::vector<int> targets = {3, kIgnoreTarget, 0, 6};
  const auto res = softmax_cross_entropy(logits, targets);
  CHECK(res.count == 3);
  for (size_t j = 0; j < 7; ++j) CHECK(res.dlogits.at(1, j) == 0.0);
  check_report(grad_check([&] { return Tensor({1}, softmax_cross_entropy(logits, targets).loss_sum); },
                          std::vector{target("logits", logits, res.dlogits)}));

  // Uniform logits give ln V per counted row.
  const auto uniform = softmax_cross_entropy(Tensor({2, 10}), std::vector<int>{1, 9});
  CHECK(uniform.loss_sum / 2 == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  const auto ls = log_softmax(std::vector<double>{1000.0, 1000.0});
  CHECK(ls[0] == doctest::Approx(-std::log(2.0)));
  CHECK_THROWS(softmax_cross_entropy(logits, std::vector<int>{1, 2}));
  CHECK_THROWS(softmax_cross_entropy(logits, std::vector<int>{1, 2, 3, 7}));
}

TEST_CASE("causal self-attention") {
  for (uint64_t trial = 0; trial < 4; ++trial) {
    Rng rng(13, "grad/attn", trial);
    const size_t t = 1 + rng.uniform_int(5), heads = 1 + rng.uniform_int(2), hidden = heads * 3;
    Tensor qkv = random_tensor({t, 3 * hidden}, rng);
    const Tensor r = random_tensor({t, hidden}, rng);
    AttentionCache cache;
    causal_self_attention_forward(qkv, heads, cache);
    const Tensor dqkv = causal_self_attention_backward(qkv, cache, r);
    auto loss = [&] {
      AttentionCache c;
      return weighted_sum(causal_self_attention_forward(qkv, heads, c), r);
    };
    check_report(grad_check(loss, std::vector{target("qkv", qkv, dqkv)}));
  }

  // Causality: changing the last row leaves earlier outputs untouched.
  Rng rng(14, "attn/causal");
  Tensor qkv = random_tensor({4, 12}, rng);
  AttentionCache c1, c2;
  const auto a = causal_self_attention_forward(qkv, 2, c1);
  for (size_t j = 0; j < 12; ++j) qkv.at(3, j) += 1.0;
  const auto b = causal_self_attention_forward(qkv, 2, c2);
  for (size_t i = 0; i < 3 * 4; ++i) CHECK(a[i] == b[i]);
  CHECK_THROWS_AS(causal_self_attention_forward(Tensor({2, 10}), 2, c1), ShapeError);
}

TEST_CASE("composed MLP on random configurations") {
  for (uint64_t trial = 0; trial < 20; ++trial) {
    Rng rng(17, "grad/mlp", trial);
    const size_t n = 1 + rng.uniform_int(3), d = 2 + rng.uniform_int(4), h = 2 + rng.uniform_int(5);
    Tensor x = random_tensor({n, d}, rng), w1 = random_tensor({d, h}, rng, 0.5), b1 = random_tensor({h}, rng, 0.1);
    Tensor w2 = random_tensor({h, 3}, rng, 0.5), b2 = random_tensor({3}, rng, 0.1);
    Tensor gamma = random_tensor({d}, rng), beta = random_tensor({d}, rng);
    std::vector<int> targets(n);
    for (auto& t : targets) t = static_cast<int>(rng.uniform_int(3));

    auto forward = [&](LayerNormCache& lc, Tensor& ln, Tensor& pre, Tensor& act) {
      ln = layer_norm_forward(x, gamma, beta, lc);
      pre = linear_forward(ln, w1, b1);
      act = activation_forward(Activation::kGelu, pre);
      return linear_forward(act, w2, b2);
    };
    LayerNormCache lc;
    Tensor ln, pre, act;
    const auto logits = forward(lc, ln, pre, act);
    const auto xent = softmax_cross_entropy(logits, targets);
    Tensor dw1({d, h}), db1({h}), dw2({h, 3}), db2({3}), dg({d}), dbeta({d});
    const auto dact = linear_backward(act, w2, xent.dlogits, dw2, db2);
    const auto dpre = activation_backward(Activation::kGelu, pre, dact);
    const auto dln = linear_backward(ln, w1, dpre, dw1, db1);
    const auto dx = layer_norm_backward(x, gamma, lc, dln, dg, dbeta);

    auto loss = [&] {
      LayerNormCache c;
      Tensor a, b, e;
      return Tensor({1}, softmax_cross_entropy(forward(c, a, b, e), targets).loss_sum);
    };
    check_report(grad_check(loss, std::vector{target("x", x, dx), target("w1", w1, dw1), target("b1", b1, db1),
                                              target("w2", w2, dw2), target("b2", b2, db2),
                                              target("gamma", gamma, dg), target("beta", beta, dbeta)}));
  }
}

TEST_CASE("grad_check flags wrong gradients and non-scalar losses") {
  Tensor x({3}, std::vector<double>{1.0, 2.0, 3.0});
  Tensor wrong({3}, std::vector<double>{2.0, 4.0, 7.0});  // d/dx sum x^2 = 2x, last entry wrong
  auto loss = [&] {
    double s = 0.0;
    for (double v : x.values()) s += v * v;
    return Tensor({1}, s);
  };
  const auto rep = grad_check(loss, std::vector{target("x", x, wrong)});
  CHECK_FALSE(rep.passed);
  CHECK(rep.worst == "x[2]");
  CHECK(x.values() == std::vector<double>{1.0, 2.0, 3.0});
  CHECK_THROWS_AS(grad_check([&] { return Tensor({2}); }, std::vector{target("x", x, wrong)}), ShapeError);
}

TEST_CASE("adam matches a hand-computed first step") {
  ParameterStore store;
  const auto id = store.add("w", {2});
  store.value(id).values() = {1.0, -2.0};
  store.zero_grad();
  store.grad(id).values() = {0.5, -0.25};
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  adam_step(store, cfg);
  // Step 1: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps).
  CHECK(store.value(id)[0] == static_cast<double>(static_cast<float>(1.0 - 0.1 * 0.5 / (0.5 + 1e-8))));
  CHECK(store.value(id)[1] == static_cast<double>(static_cast<float>(-2.0 + 0.1 * 0.25 / (0.25 + 1e-8))));
  CHECK(store.at(id).m[0] == static_cast<double>(static_cast<float>(0.1 * 0.5)));
  CHECK(store.at(id).v[1] == static_cast<double>(static_cast<float>(0.001 * 0.0625)));
  CHECK(store.step() == 1);
}

TEST_CASE("adam minimizes (x - 3)^2") {
  ParameterStore store;
  const auto id = store.add("x", {1});
  AdamConfig cfg;
  cfg.learning_rate = 0.05;
  for (int i = 0; i < 2000; ++i) {
    store.zero_grad();
    store.grad(id)[0] = 2.0 * (store.value(id)[0] - 3.0);
    adam_step(store, cfg);
  }
  CHECK(store.value(id)[0] == doctest::Approx(3.0).epsilon(1e-3));
}

TEST_CASE("adam clipping, frozen parameters and missing gradients") {
  ParameterStore store;
  const auto a = store.add("a", {2});
  const auto frozen = store.add("frozen", {1}, false);
  store.value(frozen)[0] = 4.0;
  store.zero_grad();
  store.grad(a).values() = {30.0, 40.0};
  CHECK(gradient_norm(store) == doctest::Approx(50.0));
  AdamConfig cfg;
  cfg.clip_norm = 1.0;
  adam_step(store, cfg);
  CHECK(store.at(a).m[0] == doctest::Approx(0.1 * 0.6).epsilon(1e-6));
  CHECK(store.value(frozen)[0] == 4.0);

  ParameterStore fresh;
  fresh.add("w", {1});
  try {
    adam_step(fresh, cfg);
    FAIL("expected missing gradient error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("'w'") != std::string::npos);
  }
  CHECK_THROWS_AS(fresh.add("w", {2}), Error);
}

TEST_CASE("checkpoint round trip is exact") {
  testutil::TempDir dir("ckpt");
  ParameterStore store;
  const auto w = store.add("enc.weight", {2, 3});
  store.add("enc.bias", {3}, false);
  Rng rng(1, "ckpt");
  for (auto& v : store.value(w).values()) v = rng.normal();
  store.zero_grad();
  for (auto& v : store.grad(w).values()) v = rng.normal();
  adam_step(store, AdamConfig{});
  save_checkpoint(dir / "a.ckpt", store, {{"kind", "test"}, {"epochs", 3}});
  const auto ck = load_checkpoint(dir / "a.ckpt");
  CHECK(ck.meta["epochs"] == 3);
  CHECK(ck.store.step() == 1);
  CHECK(ck.store.at("enc.weight").value.values() == store.value(w).values());
  CHECK(ck.store.at("enc.weight").m.values() == store.at(w).m.values());
  CHECK(ck.store.at("enc.weight").v.values() == store.at(w).v.values());
  CHECK_FALSE(ck.store.at("enc.bias").trainable);
  CHECK(serialize_checkpoint(ck.store, ck.meta) == testutil::read_bytes(dir / "a.ckpt"));

  auto bytes = testutil::read_bytes(dir / "a.ckpt");
  testutil::write_bytes(dir / "cut.ckpt", bytes.substr(0, bytes.size() - 5));
  CHECK_THROWS_AS(load_checkpoint(dir / "cut.ckpt"), Error);
  bytes[0] = 9;
  CHECK_THROWS_AS(deserialize_checkpoint(bytes), Error);

  ParameterStore other;
  other.add("enc.weight", {3, 2});
  CHECK_THROWS_AS(assign_parameters(other, ck.store), Error);
}
