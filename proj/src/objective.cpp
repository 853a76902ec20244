#include "phijack/objective.hpp"

#include <algorithm>
#include <cmath>

namespace phijack {

const char* branch_name(InjectBranch b) {
  switch (b) {
    case InjectBranch::Semantic: return "sem";
    case InjectBranch::Visual: return "vis";
    case InjectBranch::Joint: return "joint";
  }
  return "?";
}

void ObjectiveConfig::validate(int anchor_count) const {
  if (alpha <= 0.0) fail(ErrorKind::Usage, "objective alpha must be positive");
  if (lambda < 0.0) fail(ErrorKind::Usage, "objective lambda must be nonnegative");
  if (tau < 1) fail(ErrorKind::Usage, "objective tau must be at least 1");
  if (top_k < 1 || top_k > anchor_count) {
    fail(ErrorKind::Usage, "objective top_k must lie in [1, anchor_count]");
  }
}

SaliencyMap saliency_from_attention(const TokenFeatures& features) {
  if (!features.has_attention) {
    fail(ErrorKind::State, "token features carry no attention record");
  }
  const auto& a = features.attention;
  SaliencyMap s;
  s.rows = features.token_rows;
  s.cols = features.token_cols;
  s.values.assign(static_cast<size_t>(a.keys), 0.0);
  for (int h = 0; h < a.heads; ++h) {
    for (int q = 0; q < a.queries; ++q) {
      const double* row = a.data.data() + (static_cast<size_t>(h) * a.queries + q) * a.keys;
      for (int k = 0; k < a.keys; ++k) s.values[k] += row[k];
    }
  }
  const double inv = 1.0 / (static_cast<double>(a.heads) * a.queries);
  for (double& v : s.values) v *= inv;
  return s;
}

WeightMap weight_map(const SaliencyMap& s, const ObjectiveConfig& cfg) {
  WeightMap w;
  w.rows = s.rows;
  w.cols = s.cols;
  w.values.resize(s.values.size());
  double lo = s.values[0], hi = s.values[0];
  for (double v : s.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double denom = hi - lo + cfg.epsilon;
  for (size_t i = 0; i < s.values.size(); ++i) {
    w.values[i] = 1.0 + cfg.alpha * (s.values[i] - lo) / denom;
  }
  return w;
}

InjectBranch schedule_branch(int t, int tau) {
  return ((t / tau) % 2 == 0) ? InjectBranch::Semantic : InjectBranch::Visual;
}

// --- graph builders ---------------------------------------------------------

Value suppress_loss_node(Graph& g, Value z_adv, const TokenFeatures& z_clean, const WeightMap& w,
                         double eps) {
  const int tokens = g.rows(z_adv);
  const int dim = g.cols(z_adv);
  if (tokens != z_clean.token_count() || dim != z_clean.dim) {
    fail(ErrorKind::Shape, "suppress loss: adversarial/clean token grids differ");
  }
  if (static_cast<int>(w.values.size()) != tokens) {
    fail(ErrorKind::Shape, "suppress loss: weight map does not match token grid");
  }
  Value zc = g.constant(z_clean.tokens.data(), tokens, dim);
  Value cos = g.rowwise_dot(g.l2normalize_rows(z_adv, eps), g.l2normalize_rows(zc, eps));
  Value wv = g.constant(w.values.data(), tokens, 1);
  double wsum = 0.0;
  for (double x : w.values) wsum += x;
  return g.scale(g.dot_all(cos, wv), 1.0 / wsum);
}

Value semantic_loss_node(Graph& g, Value z_adv, const std::vector<int>& omega,
                         const SemanticAnchors& anchors, int top_k, double eps) {
  if (omega.empty()) fail(ErrorKind::Domain, "semantic loss: empty patch token set");
  if (top_k < 1 || top_k > anchors.anchor_count()) {
    fail(ErrorKind::Domain, "semantic loss: top_k out of range");
  }
  Value zp = g.gather_rows(z_adv, omega);
  Value e = g.constant(anchors.embeddings.v.data(), anchors.embeddings.rows,
                       anchors.embeddings.cols);
  // anchors are stored normalized; normalize again so arbitrary test inputs
  // also satisfy the cosine contract
  Value sims = g.matmul_nt(g.l2normalize_rows(zp, eps), g.l2normalize_rows(e, eps));
  Value top = g.topk_row_mean(sims, top_k);
  return g.add_scalar(g.scale(g.mean_all(top), -1.0), 1.0);
}

Value visual_loss_node(Graph& g, Value z_adv, const std::vector<int>& omega,
                       const PrototypeVector& proto, double eps) {
  if (omega.empty()) fail(ErrorKind::Domain, "visual loss: empty patch token set");
  if (static_cast<int>(proto.vector.size()) != g.cols(z_adv)) {
    fail(ErrorKind::Shape, "visual loss: prototype width mismatch");
  }
  Value zp = g.gather_rows(z_adv, omega);
  Value vp = g.constant(proto.vector.data(), 1, static_cast<int>(proto.vector.size()));
  Value cos = g.matmul_nt(g.l2normalize_rows(zp, eps), g.l2normalize_rows(vp, eps));
  return g.add_scalar(g.scale(g.mean_all(cos), -1.0), 1.0);
}

// --- plain wrappers ----------------------------------------------------------

namespace {
Value features_value(Graph& g, const TokenFeatures& f) {
  return g.constant(f.tokens.data(), f.token_count(), f.dim);
}
}  // namespace

double suppress_loss(const TokenFeatures& z_adv, const TokenFeatures& z_clean, const WeightMap& w,
                     double eps) {
  Graph g;
  return g.scalar_value(suppress_loss_node(g, features_value(g, z_adv), z_clean, w, eps));
}

double semantic_loss(const TokenFeatures& z_adv, const std::vector<int>& omega,
                     const SemanticAnchors& anchors, int top_k, double eps) {
  Graph g;
  return g.scalar_value(semantic_loss_node(g, features_value(g, z_adv), omega, anchors, top_k, eps));
}

double visual_loss(const TokenFeatures& z_adv, const std::vector<int>& omega,
                   const PrototypeVector& proto, double eps) {
  Graph g;
  return g.scalar_value(visual_loss_node(g, features_value(g, z_adv), omega, proto, eps));
}

TotalLoss total_loss(int t, const ObjectiveConfig& cfg, const TokenFeatures& z_adv,
                     const TokenFeatures& z_clean, const WeightMap& w,
                     const std::vector<int>& omega, const SemanticAnchors& anchors,
                     const PrototypeVector& proto) {
  if (t < 0) fail(ErrorKind::Domain, "total loss: negative step index");
  TotalLoss out;
  out.schedule.t = t;
  out.schedule.tau = cfg.tau;
  out.schedule.active = schedule_branch(t, cfg.tau);
  out.suppress = suppress_loss(z_adv, z_clean, w, cfg.epsilon);
  out.inject = out.schedule.active == InjectBranch::Semantic
                   ? semantic_loss(z_adv, omega, anchors, cfg.top_k, cfg.epsilon)
                   : visual_loss(z_adv, omega, proto, cfg.epsilon);
  out.total = out.suppress + cfg.lambda * out.inject;
  return out;
}

}  // namespace phijack
