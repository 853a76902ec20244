#include "phijack/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "phijack/kernels.hpp"
#include "phijack/optim.hpp"
#include "phijack/rng.hpp"

namespace phijack {

std::vector<std::string> world_vocabulary() {
  return {"background", "robot",   "arm",  "hand", "claw",
          "end-effector", "gripper", "cube", "ball", "wedge"};
}

ConceptGroup concept_group(int vocab_index) {
  switch (vocab_index) {
    case 0: return ConceptGroup::Background;
    case 1:
    case 2: return ConceptGroup::Arm;
    case 3:
    case 4:
    case 5:
    case 6: return ConceptGroup::Gripper;
    case 7: return ConceptGroup::Cube;
    case 8: return ConceptGroup::Ball;
    case 9: return ConceptGroup::Wedge;
    default: fail(ErrorKind::Vocabulary, "vocabulary index out of range");
  }
}

ConceptGroup region_concept_group(RegionId region) {
  switch (region) {
    case kRegionBackground: return ConceptGroup::Background;
    case kRegionArm: return ConceptGroup::Arm;
    case kRegionGripper: return ConceptGroup::Gripper;
    case kRegionCube: return ConceptGroup::Cube;
    case kRegionBall: return ConceptGroup::Ball;
    case kRegionWedge: return ConceptGroup::Wedge;
  }
  return ConceptGroup::Background;
}

namespace {

// synonym indices per group, in world_vocabulary() order
const std::vector<int>& group_members(ConceptGroup g) {
  static const std::vector<int> bg{0};
  static const std::vector<int> arm{1, 2};
  static const std::vector<int> grip{3, 4, 5, 6};
  static const std::vector<int> cube{7};
  static const std::vector<int> ball{8};
  static const std::vector<int> wedge{9};
  switch (g) {
    case ConceptGroup::Background: return bg;
    case ConceptGroup::Arm: return arm;
    case ConceptGroup::Gripper: return grip;
    case ConceptGroup::Cube: return cube;
    case ConceptGroup::Ball: return ball;
    case ConceptGroup::Wedge: return wedge;
  }
  return bg;
}

constexpr int kGroupCount = 6;

}  // namespace

std::vector<int> token_group_labels(const std::vector<uint8_t>& region_map, int img_h, int img_w,
                                    int patch, double min_coverage) {
  const int tr = img_h / patch;
  const int tc = img_w / patch;
  std::vector<int> labels(static_cast<size_t>(tr) * tc, -1);
  const double block = static_cast<double>(patch) * patch;
  for (int t = 0; t < tr * tc; ++t) {
    const int r0 = (t / tc) * patch;
    const int c0 = (t % tc) * patch;
    int counts[kGroupCount] = {0, 0, 0, 0, 0, 0};
    for (int r = 0; r < patch; ++r) {
      for (int c = 0; c < patch; ++c) {
        const RegionId reg =
            static_cast<RegionId>(region_map[static_cast<size_t>(r0 + r) * img_w + (c0 + c)]);
        counts[static_cast<int>(region_concept_group(reg))]++;
      }
    }
    // strongest non-background region wins when decisive; otherwise the
    // token is background only if nearly pure, else unlabeled
    int best = -1;
    int best_count = 0;
    for (int g = 1; g < kGroupCount; ++g) {
      if (counts[g] > best_count) {
        best_count = counts[g];
        best = g;
      }
    }
    if (best >= 0 && best_count / block >= min_coverage) {
      labels[t] = best;
    } else if (counts[0] / block >= 0.9) {
      labels[t] = static_cast<int>(ConceptGroup::Background);
    }
  }
  return labels;
}

namespace {

struct SceneBatchItem {
  const Observation* obs;
  std::vector<int> labels;  // token -> group or -1
};

// one scene's symmetric contrastive loss; returns the loss node
Value scene_loss(Graph& g, const VisionEncoder& enc, const std::vector<Value>& bound,
                 const Observation& obs, const std::vector<int>& labels, double temperature,
                 RandomStream& synonym_rng) {
  const int img = obs.image.height;
  Value img_v = g.constant(obs.image.data.data(), static_cast<int>(obs.image.data.size()), 1);
  auto fw = enc.forward(g, img_v, img, img, &bound);
  const Value concepts = bound.back();

  const double eps = enc.config().cos_eps;
  Value zn = g.l2normalize_rows(fw.z, eps);
  Value en = g.l2normalize_rows(concepts, eps);
  Value sims = g.scale(g.matmul_nt(zn, en), 1.0 / temperature);  // [T, V]

  const int tokens = g.rows(sims);
  const int vocab = g.cols(sims);

  // sample one synonym per group for this scene
  int sampled[kGroupCount];
  for (int gi = 0; gi < kGroupCount; ++gi) {
    const auto& members = group_members(static_cast<ConceptGroup>(gi));
    sampled[gi] = members[synonym_rng.below(members.size())];
  }

  // per-group token counts for class balancing
  std::vector<int> group_count(kGroupCount, 0);
  for (int label : labels) {
    if (label >= 0) group_count[label]++;
  }

  // token -> concept direction
  std::vector<int> targets(tokens, -1);
  std::vector<uint8_t> allowed(static_cast<size_t>(tokens) * vocab, 0);
  std::vector<double> weights(tokens, 0.0);
  for (int t = 0; t < tokens; ++t) {
    const int gi = labels[t];
    if (gi < 0) continue;
    targets[t] = sampled[gi];
    weights[t] = 1.0 / group_count[gi];
    uint8_t* row = allowed.data() + static_cast<size_t>(t) * vocab;
    for (int v = 0; v < vocab; ++v) {
      // same-group synonyms stay out of the denominator
      row[v] = concept_group(v) != static_cast<ConceptGroup>(gi) ? 1 : 0;
    }
  }
  Value loss_t2c = g.xent_rows(sims, targets, allowed, weights);

  // concept -> token direction: for each labeled token, its sampled synonym
  // must pick it out among tokens of other groups
  std::vector<int> rows_concepts;
  std::vector<int> row_targets;
  std::vector<double> row_weights;
  for (int t = 0; t < tokens; ++t) {
    if (labels[t] < 0) continue;
    rows_concepts.push_back(sampled[labels[t]]);
    row_targets.push_back(t);
    row_weights.push_back(1.0 / group_count[labels[t]]);
  }
  Value simsT = g.transpose(sims);  // [V, T]
  Value rows = g.gather_rows(simsT, rows_concepts);
  std::vector<uint8_t> allowed2(rows_concepts.size() * static_cast<size_t>(tokens), 0);
  for (size_t r = 0; r < rows_concepts.size(); ++r) {
    const int own_group = labels[row_targets[r]];
    uint8_t* row = allowed2.data() + r * tokens;
    for (int t = 0; t < tokens; ++t) {
      row[t] = (labels[t] != own_group) ? 1 : 0;
    }
  }
  Value loss_c2t = g.xent_rows(rows, row_targets, allowed2, row_weights);

  return g.add(g.scale(loss_t2c, 0.5), g.scale(loss_c2t, 0.5));
}

}  // namespace

AlignmentMargin measure_alignment(const VisionEncoder& enc,
                                  const std::vector<Observation>& heldout, double min_coverage) {
  const auto e_arm = enc.concept_embedding("arm");
  const auto e_bg = enc.concept_embedding("background");
  const double eps = enc.config().cos_eps;

  // one embedding per vocab entry for the class-separation margin
  std::vector<std::vector<double>> embeds;
  for (const auto& name : enc.vocabulary()) embeds.push_back(enc.concept_embedding(name));

  double arm_arm = 0.0, arm_bg_tokens = 0.0, arm_minus_bg = 0.0;
  double class_sep = 0.0;
  size_t n_arm = 0, n_bg = 0, n_fg = 0;
  for (const auto& obs : heldout) {
    const TokenFeatures f = enc.encode(obs.image);
    const auto labels = token_group_labels(obs.region_map, obs.image.height, obs.image.width,
                                           enc.config().patch_size, min_coverage);
    for (int t = 0; t < f.token_count(); ++t) {
      const double* z = f.token(t);
      const double nrm = std::sqrt(kern::ops().dot(z, z, f.dim));
      const double inv = 1.0 / (nrm + eps);
      const double ca = kern::ops().dot(z, e_arm.data(), f.dim) * inv;
      const double cb = kern::ops().dot(z, e_bg.data(), f.dim) * inv;
      if (labels[t] == static_cast<int>(ConceptGroup::Arm)) {
        arm_arm += ca;
        arm_minus_bg += ca - cb;
        ++n_arm;
      } else if (labels[t] == static_cast<int>(ConceptGroup::Background)) {
        arm_bg_tokens += ca;
        ++n_bg;
      }
      if (labels[t] > 0) {  // labeled foreground token
        double own = -2.0, other = -2.0;
        for (size_t v = 0; v < embeds.size(); ++v) {
          const ConceptGroup vg = concept_group(static_cast<int>(v));
          if (vg == ConceptGroup::Background) continue;
          const double c = kern::ops().dot(z, embeds[v].data(), f.dim) * inv;
          if (static_cast<int>(vg) == labels[t]) {
            own = std::max(own, c);
          } else {
            other = std::max(other, c);
          }
        }
        class_sep += own - other;
        ++n_fg;
      }
    }
  }
  AlignmentMargin m;
  if (n_arm > 0 && n_bg > 0) {
    m.token_margin = arm_arm / n_arm - arm_bg_tokens / n_bg;
    m.concept_margin = arm_minus_bg / n_arm;
  }
  if (n_fg > 0) m.class_margin = class_sep / n_fg;
  return m;
}

PretrainResult pretrain_contrastive(const EncoderConfig& arch, const PretrainConfig& cfg,
                                    uint64_t data_seed) {
  VisionEncoder enc(arch, world_vocabulary());

  const ObservationSet train =
      make_observation_set(data_seed, "pretrain", cfg.scenes, ObservationSet::Split::Train);
  const ObservationSet heldout = make_observation_set(data_seed, "pretrain-heldout",
                                                      cfg.heldout_scenes,
                                                      ObservationSet::Split::Eval);

  std::vector<SceneBatchItem> items;
  items.reserve(train.observations.size());
  for (const auto& obs : train.observations) {
    items.push_back({&obs, token_group_labels(obs.region_map, obs.image.height, obs.image.width,
                                              arch.patch_size, cfg.min_coverage)});
  }

  PretrainResult result{std::move(enc), {}, 0};
  if (cfg.epochs == 0) {
    result.margin = measure_alignment(result.encoder, heldout.observations, cfg.min_coverage);
    return result;
  }

  auto params = result.encoder.parameters();
  std::vector<size_t> sizes;
  std::vector<double*> bufs;
  for (auto& p : params) {
    sizes.push_back(p.tensor->len());
    bufs.push_back(p.tensor->v.data());
  }
  Adam opt(cfg.lr);
  opt.attach(sizes);

  RandomStream shuffle_rng(sub_seed(data_seed, "pretrain-shuffle"));
  RandomStream synonym_rng(sub_seed(data_seed, "pretrain-synonyms"));
  std::vector<int> order(items.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<std::vector<double>> grad_acc(params.size());
  for (size_t i = 0; i < params.size(); ++i) grad_acc[i].assign(sizes[i], 0.0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }
    for (size_t start = 0; start < order.size(); start += cfg.batch) {
      const size_t stop = std::min(order.size(), start + cfg.batch);
      for (auto& gacc : grad_acc) std::fill(gacc.begin(), gacc.end(), 0.0);

      for (size_t bi = start; bi < stop; ++bi) {
        const SceneBatchItem& item = items[order[bi]];
        Graph g;
        std::vector<Value> bound;
        for (auto& p : params) {
          bound.push_back(g.leaf(p.tensor->v.data(), p.tensor->rows, p.tensor->cols, true));
        }
        Value loss = scene_loss(g, result.encoder, bound, *item.obs, item.labels,
                                cfg.temperature, synonym_rng);
        g.backward(loss);
        for (size_t pi = 0; pi < params.size(); ++pi) {
          auto gr = g.grad(bound[pi]);
          kern::ops().axpy(1.0, gr.data(), grad_acc[pi].data(), gr.size());
        }
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      std::vector<const double*> gptrs;
      for (auto& gacc : grad_acc) {
        kern::ops().scale(inv, gacc.data(), gacc.data(), gacc.size());
        gptrs.push_back(gacc.data());
      }
      opt.step(bufs, gptrs);
    }
    result.epochs_run = epoch + 1;
    result.margin = measure_alignment(result.encoder, heldout.observations, cfg.min_coverage);
    if (result.margin.worst() >= cfg.margin_stop) break;
  }

  if (result.margin.worst() < cfg.margin_gate) {
    fail(ErrorKind::Training,
         "contrastive pretraining missed the alignment gate after " +
             std::to_string(result.epochs_run) + " epochs: token margin " +
             std::to_string(result.margin.token_margin) + ", concept margin " +
             std::to_string(result.margin.concept_margin) + ", class margin " +
             std::to_string(result.margin.class_margin) + " (gate " +
             std::to_string(cfg.margin_gate) + ")");
  }
  return result;
}

}  // namespace phijack
