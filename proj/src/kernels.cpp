#include <algorithm>
#include <cmath>
#include <vector>

#include "xabr/kernels.hpp"

namespace xabr::kernels {
namespace {

// Below this many multiply-adds the fork/join cost dominates.
constexpr std::size_t kParallelWork = 1u << 15;

// acc[0..n) = Σ_t a_row[t] · b[t, 0..n), t ascending.
inline void row_times_matrix(std::size_t k, std::size_t n, const Scalar* a_row, const Scalar* b,
                             Accum* acc) {
  std::fill(acc, acc + n, 0.0);
  for (std::size_t t = 0; t < k; ++t) {
    const Accum a = a_row[t];
    const Scalar* b_row = b + t * n;
#pragma omp simd
    for (std::size_t j = 0; j < n; ++j) acc[j] += a * Accum(b_row[j]);
  }
}

std::vector<Scalar> transpose(std::size_t rows, std::size_t cols, const Scalar* x) {
  std::vector<Scalar> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = x[r * cols + c];
  return t;
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const Scalar* a, const Scalar* b, Scalar* c) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel if (m * k * n > kParallelWork)
  {
    std::vector<Accum> acc(n);
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
      row_times_matrix(k, n, a + i * k, b, acc.data());
      Scalar* c_row = c + i * n;
      for (std::size_t j = 0; j < n; ++j) c_row[j] = Scalar(acc[j]);
    }
  }
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const Scalar* a, const Scalar* b, Scalar* c) {
  const std::vector<Scalar> bt = transpose(n, k, b);
  gemm_nn(m, k, n, a, bt.data(), c);
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const Scalar* a, const Scalar* b, Scalar* c) {
  const std::vector<Scalar> at = transpose(k, m, a);
  gemm_nn(m, k, n, at.data(), b, c);
}

void softmax_rows(std::size_t rows, std::size_t n, const Scalar* in, Scalar* out) {
  const auto count = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel if (rows * n > kParallelWork)
  {
    std::vector<Accum> e(n);
#pragma omp for schedule(static)
    for (std::ptrdiff_t r = 0; r < count; ++r) {
      const Scalar* x = in + r * n;
      Accum mx = x[0];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, Accum(x[j]));
      Accum sum = 0;
      for (std::size_t j = 0; j < n; ++j) {
        e[j] = std::exp(Accum(x[j]) - mx);
        sum += e[j];
      }
      for (std::size_t j = 0; j < n; ++j) out[r * n + j] = Scalar(e[j] / sum);
    }
  }
}

void attention_forward(const AttentionShape& s, const MaskRule& mask, const Scalar* q,
                       const Scalar* k, const Scalar* v, Scalar* probs, Scalar* out) {
  const std::size_t hd = s.head_dim();
  const Accum scale = 1.0 / std::sqrt(Accum(hd));
  const auto pairs = static_cast<std::ptrdiff_t>(s.batch * s.heads);
  const std::size_t work = s.batch * s.q_len * s.kv_len * s.width;
#pragma omp parallel if (work > kParallelWork)
  {
    std::vector<Accum> logits(s.kv_len), acc(hd);
#pragma omp for schedule(static)
    for (std::ptrdiff_t bh = 0; bh < pairs; ++bh) {
      const std::size_t b = bh / s.heads, h = bh % s.heads;
      const Scalar* kb = k + b * s.kv_len * s.width + h * hd;
      const Scalar* vb = v + b * s.kv_len * s.width + h * hd;
      for (std::size_t i = 0; i < s.q_len; ++i) {
        const Scalar* qi = q + (b * s.q_len + i) * s.width + h * hd;
        Accum mx = kMaskedLogit;
        for (std::size_t j = 0; j < s.kv_len; ++j) {
          if (!mask.permits(b, s.kv_len, i, j)) {
            logits[j] = kMaskedLogit;
            continue;
          }
          const Scalar* kj = kb + j * s.width;
          Accum dot = 0;
          for (std::size_t c = 0; c < hd; ++c) dot += Accum(qi[c]) * Accum(kj[c]);
          logits[j] = dot * scale;
          mx = std::max(mx, logits[j]);
        }
        Accum sum = 0;
        for (std::size_t j = 0; j < s.kv_len; ++j) {
          logits[j] = std::exp(logits[j] - mx);
          sum += logits[j];
        }
        Scalar* p = probs + (bh * s.q_len + i) * s.kv_len;
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t j = 0; j < s.kv_len; ++j) {
          p[j] = Scalar(logits[j] / sum);
          const Accum pj = p[j];
          const Scalar* vj = vb + j * s.width;
          for (std::size_t c = 0; c < hd; ++c) acc[c] += pj * Accum(vj[c]);
        }
        Scalar* oi = out + (b * s.q_len + i) * s.width + h * hd;
        for (std::size_t c = 0; c < hd; ++c) oi[c] = Scalar(acc[c]);
      }
    }
  }
}

void attention_backward(const AttentionShape& s, const Scalar* q, const Scalar* k,
                        const Scalar* v, const Scalar* probs, const Scalar* dout, Scalar* dq,
                        Scalar* dk, Scalar* dv) {
  const std::size_t hd = s.head_dim();
  const Accum scale = 1.0 / std::sqrt(Accum(hd));
  const auto pairs = static_cast<std::ptrdiff_t>(s.batch * s.heads);
  const std::size_t work = s.batch * s.q_len * s.kv_len * s.width;
#pragma omp parallel if (work > kParallelWork)
  {
    std::vector<Accum> dk_acc(s.kv_len * hd), dv_acc(s.kv_len * hd), dp(s.kv_len), ds(s.kv_len),
        dq_acc(hd);
#pragma omp for schedule(static)
    for (std::ptrdiff_t bh = 0; bh < pairs; ++bh) {
      const std::size_t b = bh / s.heads, h = bh % s.heads;
      const Scalar* kb = k + b * s.kv_len * s.width + h * hd;
      const Scalar* vb = v + b * s.kv_len * s.width + h * hd;
      std::fill(dk_acc.begin(), dk_acc.end(), 0.0);
      std::fill(dv_acc.begin(), dv_acc.end(), 0.0);
      for (std::size_t i = 0; i < s.q_len; ++i) {
        const Scalar* p = probs + (bh * s.q_len + i) * s.kv_len;
        const Scalar* doi = dout + (b * s.q_len + i) * s.width + h * hd;
        const Scalar* qi = q + (b * s.q_len + i) * s.width + h * hd;
        Accum row = 0;
        for (std::size_t j = 0; j < s.kv_len; ++j) {
          const Scalar* vj = vb + j * s.width;
          Accum d = 0;
          for (std::size_t c = 0; c < hd; ++c) d += Accum(doi[c]) * Accum(vj[c]);
          dp[j] = d;
          row += Accum(p[j]) * d;
        }
        std::fill(dq_acc.begin(), dq_acc.end(), 0.0);
        for (std::size_t j = 0; j < s.kv_len; ++j) {
          ds[j] = Accum(p[j]) * (dp[j] - row) * scale;
          const Scalar* kj = kb + j * s.width;
          for (std::size_t c = 0; c < hd; ++c) dq_acc[c] += ds[j] * Accum(kj[c]);
        }
        Scalar* dqi = dq + (b * s.q_len + i) * s.width + h * hd;
        for (std::size_t c = 0; c < hd; ++c) dqi[c] = Scalar(dq_acc[c]);
        for (std::size_t j = 0; j < s.kv_len; ++j) {
          const Accum pj = p[j];
          if (pj == 0) continue;  // masked pair: ds and p·dO are exactly zero
          Accum* dkj = dk_acc.data() + j * hd;
          Accum* dvj = dv_acc.data() + j * hd;
          for (std::size_t c = 0; c < hd; ++c) {
            dkj[c] += ds[j] * Accum(qi[c]);
            dvj[c] += pj * Accum(doi[c]);
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

}  // namespace xabr::kernels
