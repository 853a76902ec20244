#pragma once

#include <vector>

#include "phijack/encoder.hpp"
#include "phijack/graph.hpp"

namespace phijack {

// Loss stack for the patch optimization: saliency weighting, suppression,
// semantic anchoring, visual injection, and the alternating total loss.

struct SaliencyMap {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;  // rows*cols, nonnegative
};

struct WeightMap {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;  // entries in [1, 1+alpha]
};

enum class InjectBranch { Semantic, Visual, Joint };

const char* branch_name(InjectBranch b);

struct ScheduleState {
  int t = 0;
  int tau = 1;
  InjectBranch active = InjectBranch::Semantic;
};

struct ObjectiveConfig {
  double alpha = 2.0;    // saliency scale
  double lambda = 0.2;   // injection weight
  int tau = 5;           // alternation period
  int top_k = 2;         // anchors averaged per token
  double epsilon = 1e-8;

  void validate(int anchor_count) const;
};

// S(j): attention mass flowing to token j, averaged over heads and queries,
// on the token grid.
SaliencyMap saliency_from_attention(const TokenFeatures& features);

// W = 1 + alpha * (S - S_min) / (S_max - S_min + eps)
WeightMap weight_map(const SaliencyMap& s, const ObjectiveConfig& cfg);

// Schedule: semantic iff floor(t / tau) is even.
InjectBranch schedule_branch(int t, int tau);

// --- graph builders (the differentiable path) ------------------------------

// z_adv is a [tokens, dim] value; constants enter as views.
Value suppress_loss_node(Graph& g, Value z_adv, const TokenFeatures& z_clean, const WeightMap& w,
                         double eps);
Value semantic_loss_node(Graph& g, Value z_adv, const std::vector<int>& omega,
                         const SemanticAnchors& anchors, int top_k, double eps);
Value visual_loss_node(Graph& g, Value z_adv, const std::vector<int>& omega,
                       const PrototypeVector& proto, double eps);

// --- plain evaluation wrappers ---------------------------------------------

double suppress_loss(const TokenFeatures& z_adv, const TokenFeatures& z_clean, const WeightMap& w,
                     double eps = 1e-8);
double semantic_loss(const TokenFeatures& z_adv, const std::vector<int>& omega,
                     const SemanticAnchors& anchors, int top_k, double eps = 1e-8);
double visual_loss(const TokenFeatures& z_adv, const std::vector<int>& omega,
                   const PrototypeVector& proto, double eps = 1e-8);

struct TotalLoss {
  double total = 0.0;
  double suppress = 0.0;
  double inject = 0.0;
  ScheduleState schedule;
};

// L_total = L_suppress + lambda * L_inject^(t), injection branch picked by
// the schedule.
TotalLoss total_loss(int t, const ObjectiveConfig& cfg, const TokenFeatures& z_adv,
                     const TokenFeatures& z_clean, const WeightMap& w,
                     const std::vector<int>& omega, const SemanticAnchors& anchors,
                     const PrototypeVector& proto);

}  // namespace phijack
