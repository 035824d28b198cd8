#include "xabr/optim.hpp"

#include <cmath>

#include "xabr/errors.hpp"

namespace xabr {

std::vector<ParamGroup> make_param_groups(const LanguageModel& model, const TrainConfig& config) {
  std::vector<ParamGroup> groups;
  for (auto& members : model.trainable_groups()) {
    ParamGroup g;
    g.name = members.name;
    g.lr = members.name == "bridge" ? config.lr_bridge : config.lr_receiver;
    g.params = std::move(members.params);
    groups.push_back(std::move(g));
  }
  return groups;
}

bool decays(const NamedParam& p) {
  const auto& n = p.name;
  const bool embedding = n.size() >= 4 && n.compare(n.size() - 4, 4, "_emb") == 0;
  return p.tensor.rank() == 2 && !embedding;
}

double clip_grad_norm(std::span<ParamGroup> groups, double max_norm) {
  Accum sq = 0;
  for (const auto& g : groups)
    for (const auto& p : g.params)
      for (auto x : p.tensor.grad()) sq += Accum(x) * Accum(x);
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const Scalar factor = Scalar(max_norm / (norm + 1e-6));
    for (auto& g : groups)
      for (auto& p : g.params)
        for (auto& x : p.tensor.mutable_grad()) x *= factor;
  }
  return norm;
}

void adamw_step(OptimizerState& state, std::span<ParamGroup> groups, const AdamWHyper& hyper) {
  for (const auto& g : groups)
    for (const auto& p : g.params)
      if (!p.tensor.has_grad())
        throw ContractError("adamw_step: trainable parameter '" + p.name + "' has no gradient");
  const std::uint64_t t = ++state.step;
  const double c1 = 1.0 - std::pow(hyper.beta1, double(t));
  const double c2 = 1.0 - std::pow(hyper.beta2, double(t));
  for (auto& g : groups) {
    for (auto& p : g.params) {
      auto& mom = state.moments[p.name];
      const std::size_t n = p.tensor.numel();
      if (mom.m.size() != n) {
        mom.m.assign(n, Scalar(0));
        mom.v.assign(n, Scalar(0));
      }
      const double wd = decays(p) ? hyper.weight_decay : 0.0;
      auto theta = p.tensor.mutable_data();
      const auto grad = p.tensor.grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double gi = grad[i];
        const double m = hyper.beta1 * mom.m[i] + (1.0 - hyper.beta1) * gi;
        const double v = hyper.beta2 * mom.v[i] + (1.0 - hyper.beta2) * gi * gi;
        mom.m[i] = Scalar(m);
        mom.v[i] = Scalar(v);
        const double m_hat = m / c1, v_hat = v / c2;
        const double th = theta[i];
        theta[i] = Scalar(th - g.lr * wd * th - g.lr * m_hat / (std::sqrt(v_hat) + hyper.eps));
      }
      p.tensor.clear_grad();
    }
  }
}

}  // namespace xabr
