#pragma once

// Independent loop-based forward pass of the transformer, used as an oracle.
// Computes every position with an explicit causal mask and returns the
// query-position logits and attention rows.

#include <cmath>
#include <vector>

#include "hmslab/model.hpp"

namespace hmslab::testing {

struct ReferenceOutput {
  std::vector<double> logits;                   // vocab
  std::vector<std::vector<double>> attention;   // layer * heads, each T
};

using Mat = std::vector<std::vector<double>>;

inline Mat mat_mul(const Mat& a, const ad::Tensor& b) {
  Mat out(a.size(), std::vector<double>(b.cols(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < b.rows(); ++k) {
      for (std::size_t j = 0; j < b.cols(); ++j) out[i][j] += a[i][k] * b(k, j);
    }
  }
  return out;
}

inline Mat layer_norm(const Mat& x, const ad::Tensor& gain, const ad::Tensor& bias) {
  Mat out = x;
  for (auto& row : out) {
    double mu = 0.0, var = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(row.size());
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(row.size());
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - mu) * inv * gain[j] + bias[j];
  }
  return out;
}

inline double gelu_ref(double x) {
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
}

// `zero_attention` drops every attention block's contribution to the residual.
inline ReferenceOutput reference_forward(const BaseWeights& w, const AdapterSet* a,
                                         const TokenSequence& seq, bool zero_attention = false) {
  const ModelConfig& c = w.config;
  const std::size_t T = seq.size(), d = c.d_model(), hd = c.head_dim;
  Mat x(T, std::vector<double>(d));
  for (std::size_t i = 0; i < T; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      x[i][j] = w.tok_emb(seq.token_ids[i], j) + w.pos_emb(seq.position_ids[i], j);
    }
  }
  ReferenceOutput out;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const LayerWeights& lw = w.layers[l];
    const Mat h = layer_norm(x, lw.ln1_gain, lw.ln1_bias);
    Mat q = mat_mul(h, lw.wq);
    if (a) {
      const Mat dq = mat_mul(mat_mul(h, a->layers[l].q_down), a->layers[l].q_up);
      for (std::size_t i = 0; i < T; ++i) {
        for (std::size_t j = 0; j < d; ++j) q[i][j] += dq[i][j];
      }
    }
    const Mat k = mat_mul(h, lw.wk);
    const Mat v = mat_mul(h, lw.wv);
    Mat ctx(T, std::vector<double>(d, 0.0));
    for (std::size_t head = 0; head < c.n_query_heads; ++head) {
      const std::size_t grp = head / (c.n_query_heads / c.n_kv_heads);
      for (std::size_t i = 0; i < T; ++i) {
        std::vector<double> s(i + 1);
        double mx = -1e300;
        for (std::size_t j = 0; j <= i; ++j) {
          double dot = 0.0;
          for (std::size_t e = 0; e < hd; ++e) dot += q[i][head * hd + e] * k[j][grp * hd + e];
          s[j] = dot / std::sqrt(static_cast<double>(hd));
          mx = std::max(mx, s[j]);
        }
        double z = 0.0;
        for (double& sv : s) z += (sv = std::exp(sv - mx));
        for (double& sv : s) sv /= z;
        if (i == T - 1) {
          std::vector<double> row(T, 0.0);
          for (std::size_t j = 0; j <= i; ++j) row[j] = s[j];
          out.attention.push_back(row);
        }
        for (std::size_t j = 0; j <= i; ++j) {
          for (std::size_t e = 0; e < hd; ++e) ctx[i][head * hd + e] += s[j] * v[j][grp * hd + e];
        }
      }
    }
    if (!zero_attention) {
      Mat o = mat_mul(ctx, lw.wo);
      if (a) {
        const Mat dout = mat_mul(mat_mul(ctx, a->layers[l].o_down), a->layers[l].o_up);
        for (std::size_t i = 0; i < T; ++i) {
          for (std::size_t j = 0; j < d; ++j) o[i][j] += dout[i][j];
        }
      }
      for (std::size_t i = 0; i < T; ++i) {
        for (std::size_t j = 0; j < d; ++j) x[i][j] += o[i][j];
      }
    }
    const Mat h2 = layer_norm(x, lw.ln2_gain, lw.ln2_bias);
    Mat f1 = mat_mul(h2, lw.w1);
    for (auto& row : f1) {
      for (std::size_t j = 0; j < row.size(); ++j) row[j] = gelu_ref(row[j] + lw.b1[j]);
    }
    const Mat f2 = mat_mul(f1, lw.w2);
    for (std::size_t i = 0; i < T; ++i) {
      for (std::size_t j = 0; j < d; ++j) x[i][j] += f2[i][j] + lw.b2[j];
    }
  }
  const Mat xf = layer_norm(x, w.lnf_gain, w.lnf_bias);
  const Mat logits = mat_mul({xf.back()}, w.w_out);
  out.logits = logits[0];
  return out;
}

}  // namespace hmslab::testing
