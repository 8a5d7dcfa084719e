#pragma once

// Adapter construction and the freeze-policy machinery: every parameter in
// the pipeline belongs to exactly one of four sets, and the optimizer only
// ever sees the trainable three.

#include <set>
#include <string>

#include "tamperseg/nn.hpp"
#include "tamperseg/reasoner.hpp"  // LoraConfig

namespace tamperseg {

// standalone adapted layer from a bare weight; A Gaussian, B zero
template <typename T>
LoraLinear<T> wrap_linear(const Mat<T>& weight, const LoraConfig& cfg, Rng& rng) {
  LoraLinear<T> layer;
  layer.base.W.name = "wrapped.W";
  layer.base.W.value = weight;
  layer.base.W.grad = Mat<T>::Zero(weight.rows(), weight.cols());
  layer.base.b.name = "wrapped.b";
  layer.base.b.init_zero(1, int(weight.rows()));
  layer.attach_adapter(cfg.rank, cfg.alpha, rng, cfg.init_std);
  return layer;
}

// W + (alpha/rank)·B·A
template <typename T>
Mat<T> merge(const LoraLinear<T>& layer) {
  return layer.merged_weight();
}

struct FreezePolicy {
  std::set<std::string> frozen;
  std::set<std::string> lora_adapted;
  std::set<std::string> fully_trainable;
  std::set<std::string> from_scratch;
};

// Marks trainability per the policy and returns the optimizer's view
// (lora ∪ fully-trainable ∪ from-scratch). The four sets must exactly
// partition the model's parameter names.
template <typename T>
ParamList<T> apply_freeze_policy(const ParamList<T>& params,
                                 const FreezePolicy& policy) {
  std::set<std::string> seen;
  for (Param<T>* p : params) seen.insert(p->name);
  for (const auto& set :
       {policy.frozen, policy.lora_adapted, policy.fully_trainable, policy.from_scratch})
    for (const auto& name : set)
      if (!seen.count(name))
        throw config_error("freeze policy names unknown parameter: " + name);

  ParamList<T> trainable;
  for (Param<T>* p : params) {
    int hits = int(policy.frozen.count(p->name)) +
               int(policy.lora_adapted.count(p->name)) +
               int(policy.fully_trainable.count(p->name)) +
               int(policy.from_scratch.count(p->name));
    if (hits != 1)
      throw config_error("freeze policy must cover '" + p->name +
                         "' exactly once (got " + std::to_string(hits) + ")");
    p->trainable = !policy.frozen.count(p->name);
    if (p->trainable) trainable.push_back(p);
  }
  return trainable;
}

}  // namespace tamperseg
