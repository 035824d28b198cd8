#include "xabr/ops.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "xabr/errors.hpp"

namespace xabr {
namespace {

using ImplPtr = std::shared_ptr<TensorImpl>;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
}

std::vector<Scalar> scaled(std::span<const Scalar> g, Scalar factor) {
  std::vector<Scalar> out(g.begin(), g.end());
  for (auto& x : out) x *= factor;
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() != 2)
    throw DimensionError("matmul: expected a[...,k] and b[k,n], got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  const std::size_t k = a.last_dim();
  if (b.dim(0) != k)
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " · " +
                         shape_str(b.shape()));
  const std::size_t m = a.numel() / k, n = b.dim(1);
  std::vector<Scalar> out(m * n);
  kernels::gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data());
  Shape shape = a.shape();
  shape.back() = n;
  ImplPtr ai = a.impl(), bi = b.impl();
  return record_op("matmul", std::move(shape), std::move(out), {&a, &b},
                   [ai, bi, m, k, n](const TensorImpl& o) {
                     if (ai->requires_grad) {
                       std::vector<Scalar> da(m * k);
                       kernels::gemm_nt(m, n, k, o.grad.data(), bi->data.data(), da.data());
                       ai->accumulate_grad(da);
                     }
                     if (bi->requires_grad) {
                       std::vector<Scalar> db(k * n);
                       kernels::gemm_tn(k, m, n, ai->data.data(), o.grad.data(), db.data());
                       bi->accumulate_grad(db);
                     }
                   });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<Scalar> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  ImplPtr ai = a.impl(), bi = b.impl();
  return record_op("add", a.shape(), std::move(out), {&a, &b}, [ai, bi](const TensorImpl& o) {
    ai->accumulate_grad(o.grad);
    bi->accumulate_grad(o.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<Scalar> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  ImplPtr ai = a.impl(), bi = b.impl();
  return record_op("sub", a.shape(), std::move(out), {&a, &b}, [ai, bi](const TensorImpl& o) {
    ai->accumulate_grad(o.grad);
    if (bi->requires_grad) bi->accumulate_grad(scaled(o.grad, Scalar(-1)));
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<Scalar> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  ImplPtr ai = a.impl(), bi = b.impl();
  return record_op("mul", a.shape(), std::move(out), {&a, &b}, [ai, bi](const TensorImpl& o) {
    const std::size_t n = o.grad.size();
    if (ai->requires_grad) {
      std::vector<Scalar> g(n);
      for (std::size_t i = 0; i < n; ++i) g[i] = o.grad[i] * bi->data[i];
      ai->accumulate_grad(g);
    }
    if (bi->requires_grad) {
      std::vector<Scalar> g(n);
      for (std::size_t i = 0; i < n; ++i) g[i] = o.grad[i] * ai->data[i];
      bi->accumulate_grad(g);
    }
  });
}

Tensor scale(const Tensor& x, Scalar factor) {
  ImplPtr xi = x.impl();
  return record_op("scale", x.shape(), scaled(x.data(), factor), {&x},
                   [xi, factor](const TensorImpl& o) { xi->accumulate_grad(scaled(o.grad, factor)); });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || bias.dim(0) != x.last_dim())
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match trailing dim of " +
                         shape_str(x.shape()));
  const std::size_t d = bias.dim(0), rows = x.numel() / d;
  std::vector<Scalar> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x.at(r * d + j) + bias.at(j);
  ImplPtr xi = x.impl(), bi = bias.impl();
  return record_op("add_bias", x.shape(), std::move(out), {&x, &bias},
                   [xi, bi, rows, d](const TensorImpl& o) {
                     xi->accumulate_grad(o.grad);
                     if (bi->requires_grad) {
                       std::vector<Accum> acc(d, 0.0);
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < d; ++j) acc[j] += o.grad[r * d + j];
                       bi->accumulate_grad(std::vector<Scalar>(acc.begin(), acc.end()));
                     }
                   });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<Scalar> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = Scalar(1.0 / (1.0 + std::exp(-Accum(x.at(i)))));
  ImplPtr xi = x.impl();
  auto y = std::make_shared<std::vector<Scalar>>(out);
  return record_op("sigmoid", x.shape(), std::move(out), {&x}, [xi, y](const TensorImpl& o) {
    std::vector<Scalar> g(o.grad.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = o.grad[i] * (*y)[i] * (Scalar(1) - (*y)[i]);
    xi->accumulate_grad(g);
  });
}

namespace {
constexpr Accum kGeluC = 0.044715;
const Accum kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);
}  // namespace

Tensor gelu(const Tensor& x) {
  std::vector<Scalar> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Accum v = x.at(i);
    out[i] = Scalar(0.5 * v * (1.0 + std::tanh(kSqrt2OverPi * (v + kGeluC * v * v * v))));
  }
  ImplPtr xi = x.impl();
  return record_op("gelu", x.shape(), std::move(out), {&x}, [xi](const TensorImpl& o) {
    std::vector<Scalar> g(o.grad.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Accum v = xi->data[i];
      const Accum t = std::tanh(kSqrt2OverPi * (v + kGeluC * v * v * v));
      const Accum dt = (1.0 - t * t) * kSqrt2OverPi * (1.0 + 3.0 * kGeluC * v * v);
      g[i] = Scalar(o.grad[i] * (0.5 * (1.0 + t) + 0.5 * v * dt));
    }
    xi->accumulate_grad(g);
  });
}

Tensor softmax_lastdim(const Tensor& x) {
  const std::size_t n = x.last_dim(), rows = x.numel() / n;
  std::vector<Scalar> out(x.numel());
  kernels::softmax_rows(rows, n, x.data().data(), out.data());
  ImplPtr xi = x.impl();
  auto y = std::make_shared<std::vector<Scalar>>(out);
  return record_op("softmax", x.shape(), std::move(out), {&x}, [xi, y, rows, n](const TensorImpl& o) {
    std::vector<Scalar> g(o.grad.size());
    for (std::size_t r = 0; r < rows; ++r) {
      Accum dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += Accum(o.grad[r * n + j]) * (*y)[r * n + j];
      for (std::size_t j = 0; j < n; ++j)
        g[r * n + j] = Scalar((*y)[r * n + j] * (o.grad[r * n + j] - dot));
    }
    xi->accumulate_grad(g);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Scalar eps) {
  const std::size_t d = x.last_dim(), rows = x.numel() / d;
  if (gain.numel() != d || bias.numel() != d)
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                         " do not match width " + std::to_string(d));
  std::vector<Scalar> out(x.numel());
  auto xhat = std::make_shared<std::vector<Accum>>(x.numel());
  auto rstd = std::make_shared<std::vector<Accum>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* row = x.data().data() + r * d;
    Accum mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= Accum(d);
    Accum var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= Accum(d);
    const Accum inv = 1.0 / std::sqrt(var + Accum(eps));
    (*rstd)[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const Accum h = (row[j] - mu) * inv;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = Scalar(h * gain.at(j) + bias.at(j));
    }
  }
  ImplPtr xi = x.impl(), gi = gain.impl(), bi = bias.impl();
  return record_op("layer_norm", x.shape(), std::move(out), {&x, &gain, &bias},
                   [xi, gi, bi, xhat, rstd, rows, d](const TensorImpl& o) {
                     std::vector<Accum> dgain(d, 0.0), dbias(d, 0.0);
                     std::vector<Scalar> dx(xi->requires_grad ? rows * d : 0);
                     for (std::size_t r = 0; r < rows; ++r) {
                       Accum mean_g = 0, mean_gx = 0;
                       for (std::size_t j = 0; j < d; ++j) {
                         const Accum dy = o.grad[r * d + j];
                         const Accum h = (*xhat)[r * d + j];
                         dgain[j] += dy * h;
                         dbias[j] += dy;
                         const Accum g = dy * gi->data[j];
                         mean_g += g;
                         mean_gx += g * h;
                       }
                       if (!xi->requires_grad) continue;
                       mean_g /= Accum(d);
                       mean_gx /= Accum(d);
                       for (std::size_t j = 0; j < d; ++j) {
                         const Accum g = Accum(o.grad[r * d + j]) * gi->data[j];
                         dx[r * d + j] = Scalar((*rstd)[r] * (g - mean_g - (*xhat)[r * d + j] * mean_gx));
                       }
                     }
                     if (xi->requires_grad) xi->accumulate_grad(dx);
                     gi->accumulate_grad(std::vector<Scalar>(dgain.begin(), dgain.end()));
                     bi->accumulate_grad(std::vector<Scalar>(dbias.begin(), dbias.end()));
                   });
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::int32_t> ids) {
  if (table.rank() != 2) throw DimensionError("embedding_lookup: table must be [V, d], got " + shape_str(table.shape()));
  if (ids.empty()) throw DimensionError("embedding_lookup: empty id list");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<Scalar> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      throw IndexError("embedding_lookup: token id " + std::to_string(id) + " outside [0, " +
                       std::to_string(vocab) + ")");
    std::copy_n(table.data().begin() + static_cast<std::size_t>(id) * d, d, out.begin() + i * d);
  }
  ImplPtr ti = table.impl();
  auto saved = std::make_shared<std::vector<std::int32_t>>(ids.begin(), ids.end());
  return record_op("embedding", {ids.size(), d}, std::move(out), {&table}, [ti, saved, d](const TensorImpl& o) {
    std::vector<Scalar> g(ti->data.size(), Scalar(0));
    for (std::size_t i = 0; i < saved->size(); ++i)
      for (std::size_t j = 0; j < d; ++j) g[static_cast<std::size_t>((*saved)[i]) * d + j] += o.grad[i * d + j];
    ti->accumulate_grad(g);
  });
}

Tensor concat_lastdim(const Tensor& a, const Tensor& b) {
  Shape lead_a(a.shape().begin(), a.shape().end() - 1), lead_b(b.shape().begin(), b.shape().end() - 1);
  if (lead_a != lead_b)
    throw DimensionError("concat_lastdim: leading shapes of " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  const std::size_t p = a.last_dim(), q = b.last_dim(), rows = a.numel() / p;
  std::vector<Scalar> out(rows * (p + q));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data().begin() + r * p, p, out.begin() + r * (p + q));
    std::copy_n(b.data().begin() + r * q, q, out.begin() + r * (p + q) + p);
  }
  Shape shape = a.shape();
  shape.back() = p + q;
  ImplPtr ai = a.impl(), bi = b.impl();
  return record_op("concat", std::move(shape), std::move(out), {&a, &b}, [ai, bi, rows, p, q](const TensorImpl& o) {
    std::vector<Scalar> ga(rows * p), gb(rows * q);
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(o.grad.begin() + r * (p + q), p, ga.begin() + r * p);
      std::copy_n(o.grad.begin() + r * (p + q) + p, q, gb.begin() + r * q);
    }
    ai->accumulate_grad(ga);
    bi->accumulate_grad(gb);
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  ImplPtr xi = x.impl();
  return record_op("reshape", std::move(shape), std::vector<Scalar>(x.data().begin(), x.data().end()), {&x},
                   [xi](const TensorImpl& o) { xi->accumulate_grad(o.grad); });
}

Tensor sum(const Tensor& x) {
  Accum total = 0;
  for (auto v : x.data()) total += v;
  ImplPtr xi = x.impl();
  return record_op("sum", {1}, {Scalar(total)}, {&x}, [xi](const TensorImpl& o) {
    xi->accumulate_grad(std::vector<Scalar>(xi->data.size(), o.grad[0]));
  });
}

Tensor mean(const Tensor& x) {
  Accum total = 0;
  for (auto v : x.data()) total += v;
  const std::size_t n = x.numel();
  ImplPtr xi = x.impl();
  return record_op("mean", {1}, {Scalar(total / Accum(n))}, {&x}, [xi, n](const TensorImpl& o) {
    xi->accumulate_grad(std::vector<Scalar>(n, Scalar(Accum(o.grad[0]) / Accum(n))));
  });
}

bool AttentionMask::permits(std::size_t b, std::size_t i, std::size_t j) const { return rule().permits(b, kv_len, i, j); }

std::size_t AttentionMask::permitted_count() const {
  std::size_t count = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < q_len; ++i)
      for (std::size_t j = 0; j < kv_len; ++j) count += permits(b, i, j) ? 1 : 0;
  return count;
}

AttentionMask AttentionMask::with_padding(std::span<const std::uint8_t> pad, std::size_t rows) const {
  if (pad.size() != rows * kv_len)
    throw DimensionError("attention mask: padding mask has " + std::to_string(pad.size()) + " entries, expected " +
                         std::to_string(rows * kv_len));
  AttentionMask out = *this;
  out.batch = rows;
  out.key_valid.assign(rows * kv_len, 1);
  for (std::size_t b = 0; b < rows; ++b)
    for (std::size_t j = 0; j < kv_len; ++j) {
      const bool was_valid = key_valid.empty() || key_valid[(b % batch) * kv_len + j] != 0;
      out.key_valid[b * kv_len + j] = (was_valid && pad[b * kv_len + j] == 0) ? 1 : 0;
    }
  return out;
}

kernels::MaskRule AttentionMask::rule() const {
  kernels::MaskRule r;
  r.key_valid = key_valid.empty() ? nullptr : key_valid.data();
  r.causal = causal;
  r.offset = causal_offset;
  return r;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 const AttentionMask& mask, AttentionProbs* probs_out) {
  if (q.rank() != 3 || k.rank() != 3 || v.shape() != k.shape() || q.dim(0) != k.dim(0) || q.dim(2) != k.dim(2))
    throw DimensionError("attention: incompatible q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                         ", v " + shape_str(v.shape()));
  kernels::AttentionShape s{q.dim(0), q.dim(1), k.dim(1), q.dim(2), heads};
  if (heads == 0 || s.width % heads != 0)
    throw DimensionError("attention: " + std::to_string(heads) + " heads do not divide width " + std::to_string(s.width));
  if (mask.batch != s.batch || mask.q_len != s.q_len || mask.kv_len != s.kv_len ||
      (!mask.key_valid.empty() && mask.key_valid.size() != s.batch * s.kv_len))
    throw DimensionError("attention: mask does not match q " + shape_str(q.shape()) + " / k " + shape_str(k.shape()));
  auto probs = std::make_shared<std::vector<Scalar>>(s.batch * heads * s.q_len * s.kv_len);
  std::vector<Scalar> out(q.numel());
  kernels::attention_forward(s, mask.rule(), q.data().data(), k.data().data(), v.data().data(), probs->data(),
                             out.data());
  if (probs_out != nullptr) {
    probs_out->shape = {s.batch, heads, s.q_len, s.kv_len};
    probs_out->values = *probs;
  }
  ImplPtr qi = q.impl(), ki = k.impl(), vi = v.impl();
  return record_op("attention", q.shape(), std::move(out), {&q, &k, &v}, [qi, ki, vi, probs, s](const TensorImpl& o) {
    std::vector<Scalar> dq(qi->data.size()), dk(ki->data.size()), dv(vi->data.size());
    kernels::attention_backward(s, qi->data.data(), ki->data.data(), vi->data.data(), probs->data(), o.grad.data(),
                                dq.data(), dk.data(), dv.data());
    qi->accumulate_grad(dq);
    ki->accumulate_grad(dk);
    vi->accumulate_grad(dv);
  });
}

}  // namespace xabr
