#include "xabr/loss.hpp"

#include <cmath>
#include <string>

#include "xabr/errors.hpp"

namespace xabr {

std::size_t count_targets(std::span<const std::int32_t> labels, std::int32_t ignore) {
  std::size_t n = 0;
  for (auto l : labels) n += l != ignore ? 1 : 0;
  return n;
}

Tensor cross_entropy_loss(const Tensor& logits, std::span<const std::int32_t> labels, std::int32_t ignore) {
  const std::size_t v = logits.last_dim(), rows = logits.numel() / v;
  if (labels.size() != rows)
    throw DimensionError("cross_entropy_loss: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(rows) + " logit rows");
  const std::size_t count = count_targets(labels, ignore);
  if (count == 0) throw ContractError("cross_entropy_loss: every label is ignored");

  auto probs = std::make_shared<std::vector<Scalar>>(logits.numel(), Scalar(0));
  Accum total = 0;
  const Scalar* x = logits.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const auto label = labels[r];
    if (label == ignore) continue;
    if (label < 0 || static_cast<std::size_t>(label) >= v)
      throw IndexError("cross_entropy_loss: label " + std::to_string(label) + " outside [0, " + std::to_string(v) + ")");
    const Scalar* row = x + r * v;
    Accum mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, Accum(row[j]));
    Accum sum = 0;
    for (std::size_t j = 0; j < v; ++j) sum += std::exp(Accum(row[j]) - mx);
    const Accum lse = mx + std::log(sum);
    total += lse - Accum(row[label]);
    for (std::size_t j = 0; j < v; ++j) (*probs)[r * v + j] = Scalar(std::exp(Accum(row[j]) - lse));
  }
  auto saved = std::make_shared<std::vector<std::int32_t>>(labels.begin(), labels.end());
  auto li = logits.impl();
  return record_op("cross_entropy", {1}, {Scalar(total / Accum(count))}, {&logits},
                   [li, probs, saved, rows, v, count, ignore](const TensorImpl& o) {
                     const Accum g = Accum(o.grad[0]) / Accum(count);
                     std::vector<Scalar> d(rows * v, Scalar(0));
                     for (std::size_t r = 0; r < rows; ++r) {
                       const auto label = (*saved)[r];
                       if (label == ignore) continue;
                       for (std::size_t j = 0; j < v; ++j) d[r * v + j] = Scalar(g * (*probs)[r * v + j]);
                       d[r * v + static_cast<std::size_t>(label)] -= Scalar(g);
                     }
                     li->accumulate_grad(d);
                   });
}

}  // namespace xabr
