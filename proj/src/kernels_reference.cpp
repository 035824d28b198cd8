#include <cmath>
#include <vector>

#include "xabr/kernels.hpp"

namespace xabr::kernels::reference {

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const Scalar* a, const Scalar* b, Scalar* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Accum sum = 0;
      for (std::size_t t = 0; t < k; ++t) sum += Accum(a[i * k + t]) * Accum(b[t * n + j]);
      c[i * n + j] = Scalar(sum);
    }
  }
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const Scalar* a, const Scalar* b, Scalar* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Accum sum = 0;
      for (std::size_t t = 0; t < k; ++t) sum += Accum(a[i * k + t]) * Accum(b[j * k + t]);
      c[i * n + j] = Scalar(sum);
    }
  }
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const Scalar* a, const Scalar* b, Scalar* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Accum sum = 0;
      for (std::size_t t = 0; t < k; ++t) sum += Accum(a[t * m + i]) * Accum(b[t * n + j]);
      c[i * n + j] = Scalar(sum);
    }
  }
}

void softmax_rows(std::size_t rows, std::size_t n, const Scalar* in, Scalar* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* x = in + r * n;
    Accum mx = x[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, Accum(x[j]));
    std::vector<Accum> e(n);
    Accum sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      e[j] = std::exp(Accum(x[j]) - mx);
      sum += e[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = Scalar(e[j] / sum);
  }
}

void attention_forward(const AttentionShape& s, const MaskRule& mask, const Scalar* q,
                       const Scalar* k, const Scalar* v, Scalar* probs, Scalar* out) {
  const std::size_t hd = s.head_dim();
  const Accum scale = 1.0 / std::sqrt(Accum(hd));
  std::vector<Accum> logits(s.kv_len);
  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t h = 0; h < s.heads; ++h) {
      for (std::size_t i = 0; i < s.q_len; ++i) {
        const Scalar* qi = q + (b * s.q_len + i) * s.width + h * hd;
        for (std::size_t j = 0; j < s.kv_len; ++j) {
          if (!mask.permits(b, s.kv_len, i, j)) {
            logits[j] = kMaskedLogit;
            continue;
          }
          const Scalar* kj = k + (b * s.kv_len + j) * s.width + h * hd;
          Accum dot = 0;
          for (std::size_t c = 0; c < hd; ++c) dot += Accum(qi[c]) * Accum(kj[c]);
          logits[j] = dot * scale;
        }
        Accum mx = logits[0];
        for (std::size_t j = 1; j < s.kv_len; ++j) mx = std::max(mx, logits[j]);
        Accum sum = 0;
        for (std::size_t j = 0; j < s.kv_len; ++j) {
          logits[j] = std::exp(logits[j] - mx);
          sum += logits[j];
        }
        Scalar* p = probs + ((b * s.heads + h) * s.q_len + i) * s.kv_len;
        for (std::size_t j = 0; j < s.kv_len; ++j) p[j] = Scalar(logits[j] / sum);
        Scalar* oi = out + (b * s.q_len + i) * s.width + h * hd;
        for (std::size_t c = 0; c < hd; ++c) {
          Accum acc = 0;
          for (std::size_t j = 0; j < s.kv_len; ++j)
            acc += Accum(p[j]) * Accum(v[(b * s.kv_len + j) * s.width + h * hd + c]);
          oi[c] = Scalar(acc);
        }
      }
    }
  }
}

void attention_backward(const AttentionShape& s, const Scalar* q, const Scalar* k,
                        const Scalar* v, const Scalar* probs, const Scalar* dout, Scalar* dq,
                        Scalar* dk, Scalar* dv) {
  const std::size_t hd = s.head_dim();
  const Accum scale = 1.0 / std::sqrt(Accum(hd));
  std::vector<Accum> dk_acc(s.kv_len * hd), dv_acc(s.kv_len * hd), dp(s.kv_len);
  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t h = 0; h < s.heads; ++h) {
      std::fill(dk_acc.begin(), dk_acc.end(), 0.0);
      std::fill(dv_acc.begin(), dv_acc.end(), 0.0);
      for (std::size_t i = 0; i < s.q_len; ++i) {
        const Scalar* p = probs + ((b * s.heads + h) * s.q_len + i) * s.kv_len;
        const Scalar* doi = dout + (b * s.q_len + i) * s.width + h * hd;
        const Scalar* qi = q + (b * s.q_len + i) * s.width + h * hd;
        Accum row = 0;
        for (std::size_t j = 0; j < s.kv_len; ++j) {
          const Scalar* vj = v + (b * s.kv_len + j) * s.width + h * hd;
          Accum d = 0;
          for (std::size_t c = 0; c < hd; ++c) d += Accum(doi[c]) * Accum(vj[c]);
          dp[j] = d;
          row += Accum(p[j]) * d;
        }
        for (std::size_t c = 0; c < hd; ++c) {
          Accum acc = 0;
          for (std::size_t j = 0; j < s.kv_len; ++j) {
            const Accum ds = Accum(p[j]) * (dp[j] - row) * scale;
            acc += ds * Accum(k[(b * s.kv_len + j) * s.width + h * hd + c]);
          }
          dq[(b * s.q_len + i) * s.width + h * hd + c] = Scalar(acc);
        }
        for (std::size_t j = 0; j < s.kv_len; ++j) {
          const Accum ds = Accum(p[j]) * (dp[j] - row) * scale;
          for (std::size_t c = 0; c < hd; ++c) {
            dk_acc[j * hd + c] += ds * Accum(qi[c]);
            dv_acc[j * hd + c] += Accum(p[j]) * Accum(doi[c]);
          }
        }
      }
      for (std::size_t j = 0; j < s.kv_len; ++j) {
        for (std::size_t c = 0; c < hd; ++c) {
          dk[(b * s.kv_len + j) * s.width + h * hd + c] = Scalar(dk_acc[j * hd + c]);
          dv[(b * s.kv_len + j) * s.width + h * hd + c] = Scalar(dv_acc[j * hd + c]);
        }
      }
    }
  }
}

}  // namespace xabr::kernels::reference
