#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "xabr/combined.hpp"
#include "xabr/config.hpp"

namespace xabr {

struct ParamGroup {
  std::string name;
  double lr = 0;
  std::vector<NamedParam> params;
};

struct Moments {
  std::vector<Scalar> m;
  std::vector<Scalar> v;
};

struct OptimizerState {
  std::map<std::string, Moments> moments;
  std::uint64_t step = 0;
};

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Bridge group at lr_bridge, receiver group at lr_receiver (and a lone
// stack's group at lr_receiver). Frozen parameters appear in no group.
std::vector<ParamGroup> make_param_groups(const LanguageModel& model, const TrainConfig& config);

// Decoupled weight decay applies to matrix weights only, never to biases,
// gains or embeddings.
bool decays(const NamedParam& p);

// Scales every group gradient so the global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::span<ParamGroup> groups, double max_norm);

// One AdamW update with bias correction; gradients are cleared afterwards.
// Throws ContractError naming any member that has no gradient.
void adamw_step(OptimizerState& state, std::span<ParamGroup> groups, const AdamWHyper& hyper);

}  // namespace xabr
