#include "recbase/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "recbase/error.hpp"

namespace recbase::nn {
namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

void check_linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2 || x.cols() != w.rows()) throw ShapeError("linear", x.shape(), w.shape());
  if (b.size() != w.cols()) throw ShapeError("linear bias", w.shape(), b.shape());
}

}  // namespace

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_linear(x, w, b);
  const size_t n = x.rows(), in = w.rows(), out = w.cols();
  Tensor y({n, out});
  for (size_t i = 0; i < n; ++i) {
    double* yr = y.data() + i * out;
    for (size_t j = 0; j < out; ++j) yr[j] = b[j];
    const double* xr = x.data() + i * in;
    for (size_t k = 0; k < in; ++k) {
      const double xv = xr[k];
      const double* wr = w.data() + k * out;
      for (size_t j = 0; j < out; ++j) yr[j] += xv * wr[j];
    }
  }
  return y;
}

Tensor linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dw, Tensor& db) {
  const size_t n = x.rows(), in = w.rows(), out = w.cols();
  if (dy.rows() != n || dy.cols() != out) throw ShapeError("linear_backward dy", dy.shape(), {n, out});
  expect_same_shape("linear_backward dw", dw, w);
  Tensor dx({n, in});
  for (size_t i = 0; i < n; ++i) {
    const double* dyr = dy.data() + i * out;
    const double* xr = x.data() + i * in;
    double* dxr = dx.data() + i * in;
    for (size_t k = 0; k < in; ++k) {
      const double* wr = w.data() + k * out;
      double* dwr = dw.data() + k * out;
      const double xv = xr[k];
      double acc = 0.0;
      for (size_t j = 0; j < out; ++j) {
        acc += dyr[j] * wr[j];
        dwr[j] += xv * dyr[j];
      }
      dxr[k] = acc;
    }
    for (size_t j = 0; j < out; ++j) db[j] += dyr[j];
  }
  return dx;
}

Tensor activation_forward(Activation act, const Tensor& x) {
  Tensor y = Tensor::zeros_like(x);
  for (size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    if (act == Activation::kRelu) {
      y[i] = v > 0.0 ? v : 0.0;
    } else {
      y[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
    }
  }
  return y;
}

Tensor activation_backward(Activation act, const Tensor& x, const Tensor& dy) {
  expect_same_shape("activation_backward", x, dy);
  Tensor dx = Tensor::zeros_like(x);
  for (size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    double d;
    if (act == Activation::kRelu) {
      d = v > 0.0 ? 1.0 : 0.0;
    } else {
      const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
    }
    dx[i] = d * dy[i];
  }
  return dx;
}

Tensor layer_norm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                          LayerNormCache& cache) {
  const size_t n = x.rows(), d = x.cols();
  if (gamma.size() != d || beta.size() != d) throw ShapeError("layer_norm", x.shape(), gamma.shape());
  cache.mean.assign(n, 0.0);
  cache.rstd.assign(n, 0.0);
  Tensor y = Tensor::zeros_like(x);
  for (size_t i = 0; i < n; ++i) {
    auto xr = x.row(i);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.mean[i] = mean;
    cache.rstd[i] = rstd;
    auto yr = y.row(i);
    for (size_t j = 0; j < d; ++j) yr[j] = (xr[j] - mean) * rstd * gamma[j] + beta[j];
  }
  return y;
}

Tensor layer_norm_backward(const Tensor& x, const Tensor& gamma, const LayerNormCache& cache,
                           const Tensor& dy, Tensor& dgamma, Tensor& dbeta) {
  expect_same_shape("layer_norm_backward", x, dy);
  const size_t n = x.rows(), d = x.cols();
  Tensor dx = Tensor::zeros_like(x);
  std::vector<double> xhat(d), dxhat(d);
  for (size_t i = 0; i < n; ++i) {
    auto xr = x.row(i);
    auto dyr = dy.row(i);
    const double mean = cache.mean[i], rstd = cache.rstd[i];
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (size_t j = 0; j < d; ++j) {
      xhat[j] = (xr[j] - mean) * rstd;
      dxhat[j] = dyr[j] * gamma[j];
      dgamma[j] += dyr[j] * xhat[j];
      dbeta[j] += dyr[j];
      sum_dxhat += dxhat[j];
      sum_dxhat_xhat += dxhat[j] * xhat[j];
    }
    auto dxr = dx.row(i);
    const double inv_d = 1.0 / static_cast<double>(d);
    for (size_t j = 0; j < d; ++j) {
      dxr[j] = rstd * (dxhat[j] - inv_d * sum_dxhat - xhat[j] * inv_d * sum_dxhat_xhat);
    }
  }
  return dx;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

CrossEntropyResult softmax_cross_entropy(const Tensor& logits, std::span<const int> targets) {
  const size_t n = logits.rows(), v = logits.cols();
  if (targets.size() != n) throw ShapeError("softmax_cross_entropy", logits.shape(), {targets.size()});
  CrossEntropyResult res;
  res.dlogits = Tensor::zeros_like(logits);
  for (size_t i = 0; i < n; ++i) {
    const int t = targets[i];
    if (t == kIgnoreTarget) continue;
    if (t < 0 || static_cast<size_t>(t) >= v) {
      throw ShapeError("softmax_cross_entropy target", {static_cast<size_t>(t)}, {v});
    }
    auto lp = log_softmax(logits.row(i));
    res.loss_sum -= lp[static_cast<size_t>(t)];
    ++res.count;
    auto dr = res.dlogits.row(i);
    for (size_t j = 0; j < v; ++j) dr[j] = std::exp(lp[j]);
    dr[static_cast<size_t>(t)] -= 1.0;
  }
  return res;
}

Tensor causal_self_attention_forward(const Tensor& qkv, size_t heads, AttentionCache& cache) {
  const size_t t_len = qkv.rows();
  if (heads == 0 || qkv.cols() % (3 * heads) != 0) {
    throw ShapeError("causal_self_attention", qkv.shape(), {heads});
  }
  const size_t hidden = qkv.cols() / 3, hd = hidden / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  cache.heads = heads;
  cache.probs = Tensor({heads, t_len, t_len});
  Tensor out({t_len, hidden});
  std::vector<double> scores(t_len);
  for (size_t h = 0; h < heads; ++h) {
    const size_t qo = h * hd, ko = hidden + h * hd, vo = 2 * hidden + h * hd;
    for (size_t t = 0; t < t_len; ++t) {
      const double* q = qkv.data() + t * qkv.cols() + qo;
      double mx = -std::numeric_limits<double>::infinity();
      for (size_t u = 0; u <= t; ++u) {
        const double* k = qkv.data() + u * qkv.cols() + ko;
        double s = 0.0;
        for (size_t c = 0; c < hd; ++c) s += q[c] * k[c];
        scores[u] = s * scale;
        mx = std::max(mx, scores[u]);
      }
      double sum = 0.0;
      for (size_t u = 0; u <= t; ++u) {
        scores[u] = std::exp(scores[u] - mx);
        sum += scores[u];
      }
      double* p = cache.probs.data() + (h * t_len + t) * t_len;
      double* o = out.data() + t * hidden + h * hd;
      for (size_t u = 0; u <= t; ++u) {
        p[u] = scores[u] / sum;
        const double* v = qkv.data() + u * qkv.cols() + vo;
        for (size_t c = 0; c < hd; ++c) o[c] += p[u] * v[c];
      }
    }
  }
  return out;
}

Tensor causal_self_attention_backward(const Tensor& qkv, const AttentionCache& cache, const Tensor& dout) {
  const size_t t_len = qkv.rows(), heads = cache.heads;
  const size_t hidden = qkv.cols() / 3, hd = hidden / heads;
  if (dout.rows() != t_len || dout.cols() != hidden) {
    throw ShapeError("causal_self_attention_backward", dout.shape(), {t_len, hidden});
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const size_t stride = qkv.cols();
  Tensor dqkv = Tensor::zeros_like(qkv);
  std::vector<double> dp(t_len);
  for (size_t h = 0; h < heads; ++h) {
    const size_t qo = h * hd, ko = hidden + h * hd, vo = 2 * hidden + h * hd;
    for (size_t t = 0; t < t_len; ++t) {
      const double* p = cache.probs.data() + (h * t_len + t) * t_len;
      const double* d_o = dout.data() + t * hidden + h * hd;
      double dot = 0.0;
      for (size_t u = 0; u <= t; ++u) {
        const double* v = qkv.data() + u * stride + vo;
        double* dv = dqkv.data() + u * stride + vo;
        double s = 0.0;
        for (size_t c = 0; c < hd; ++c) {
          s += d_o[c] * v[c];
          dv[c] += p[u] * d_o[c];
        }
        dp[u] = s;
        dot += p[u] * s;
      }
      const double* q = qkv.data() + t * stride + qo;
      double* dq = dqkv.data() + t * stride + qo;
      for (size_t u = 0; u <= t; ++u) {
        const double ds = p[u] * (dp[u] - dot) * scale;
        const double* k = qkv.data() + u * stride + ko;
        double* dk = dqkv.data() + u * stride + ko;
        for (size_t c = 0; c < hd; ++c) {
          dq[c] += ds * k[c];
          dk[c] += ds * q[c];
        }
      }
    }
  }
  return dqkv;
}

void add_inplace(Tensor& dst, const Tensor& src) {
  expect_same_shape("add", dst, src);
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  add_inplace(out, b);
  return out;
}

}  // namespace recbase::nn
