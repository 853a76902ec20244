#include "phijack/attack.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "phijack/kernels.hpp"
#include "phijack/optim.hpp"
#include "phijack/rng.hpp"

namespace phijack {

const char* variant_name(AttackVariant v) {
  switch (v) {
    case AttackVariant::Full: return "full";
    case AttackVariant::NoSuppress: return "no-suppress";
    case AttackVariant::NoSemInject: return "no-sem-inject";
    case AttackVariant::NoVisInject: return "no-vis-inject";
    case AttackVariant::NoAlternate: return "no-alternate";
  }
  return "?";
}

AttackVariant variant_from_name(const std::string& name) {
  if (name == "full") return AttackVariant::Full;
  if (name == "no-suppress") return AttackVariant::NoSuppress;
  if (name == "no-sem-inject") return AttackVariant::NoSemInject;
  if (name == "no-vis-inject") return AttackVariant::NoVisInject;
  if (name == "no-alternate") return AttackVariant::NoAlternate;
  fail(ErrorKind::Usage, "unknown attack variant '" + name + "'");
}

void AttackConfig::validate() const {
  if (attack_steps < 1) fail(ErrorKind::Usage, "attack_steps must be at least 1");
  if (inner_steps < 0) fail(ErrorKind::Usage, "inner_steps must be nonnegative");
  if (batch_size < 1) fail(ErrorKind::Usage, "batch_size must be at least 1");
  if (learning_rate <= 0.0) fail(ErrorKind::Usage, "learning_rate must be positive");
  if (patch_fraction <= 0.0 || patch_fraction >= 1.0) {
    fail(ErrorKind::Usage, "patch_fraction must lie in (0,1)");
  }
}

std::pair<int, int> default_patch_anchor(int image_h, int image_w, int side,
                                         int encoder_patch_size) {
  (void)image_h;
  const int centered = (image_w - side) / 2;
  const int aligned = (centered / encoder_patch_size) * encoder_patch_size;
  return {0, aligned};
}

std::vector<uint8_t> robust_token_mask(const PixelMask& mask, int patch, double threshold) {
  const int rows = mask.height / patch;
  const int cols = mask.width / patch;
  std::vector<double> coverage(static_cast<size_t>(rows) * cols, 0.0);
  const double block = static_cast<double>(patch) * patch;
  double best = 0.0;
  for (int tr = 0; tr < rows; ++tr) {
    for (int tc = 0; tc < cols; ++tc) {
      int covered = 0;
      for (int r = 0; r < patch; ++r)
        for (int c = 0; c < patch; ++c) covered += mask.at(tr * patch + r, tc * patch + c);
      coverage[static_cast<size_t>(tr) * cols + tc] = covered / block;
      best = std::max(best, coverage[static_cast<size_t>(tr) * cols + tc]);
    }
  }
  const double cut = std::min(threshold, best);
  std::vector<uint8_t> out(coverage.size(), 0);
  if (best <= 0.0) return out;
  for (size_t i = 0; i < coverage.size(); ++i) out[i] = coverage[i] >= cut ? 1 : 0;
  return out;
}

namespace {

struct SampleContext {
  const Observation* obs;
  TokenFeatures clean;
  WeightMap weights;
  PrototypeVector proto;
};

struct PatchOptimizer {
  OptimizerKind kind;
  double lr;
  Adam adam;

  void attach(size_t n) {
    if (kind == OptimizerKind::Adam) {
      adam = Adam(lr);
      adam.attach({n});
    }
  }

  void step(std::vector<double>& params, const std::vector<double>& grad) {
    if (kind == OptimizerKind::Adam) {
      adam.step({params.data()}, {grad.data()});
    } else {
      // signed gradient, fixed 1/255 step
      for (size_t i = 0; i < params.size(); ++i) {
        const double s = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
        params[i] -= s / 255.0;
      }
    }
  }
};

InjectBranch variant_branch(AttackVariant variant, int t, int tau) {
  switch (variant) {
    case AttackVariant::Full:
    case AttackVariant::NoSuppress: return schedule_branch(t, tau);
    case AttackVariant::NoSemInject: return InjectBranch::Visual;
    case AttackVariant::NoVisInject: return InjectBranch::Semantic;
    case AttackVariant::NoAlternate: return InjectBranch::Joint;
  }
  return InjectBranch::Semantic;
}

}  // namespace

AttackResult optimize_patch(const ObservationSet& data, const VisionEncoder& encoder,
                            const AttackConfig& cfg) {
  cfg.validate();
  if (data.split != ObservationSet::Split::Train) {
    fail(ErrorKind::Usage, "optimize_patch expects the train split");
  }
  if (data.observations.empty()) fail(ErrorKind::Usage, "observation set is empty");

  const SemanticAnchors anchors = encoder.embed_concepts(default_anchor_prompts());
  cfg.objective.validate(anchors.anchor_count());

  const Image& probe = data.observations.front().image;
  const int img_h = probe.height;
  const int img_w = probe.width;

  Patch seed_patch = patch_for_area_fraction(img_h, img_w, cfg.patch_fraction,
                                             sub_seed(cfg.seed, "patch-init"), 0, 0);
  auto [ar, ac] = cfg.anchor_row >= 0 && cfg.anchor_col >= 0
                      ? std::pair<int, int>{cfg.anchor_row, cfg.anchor_col}
                      : default_patch_anchor(img_h, img_w, seed_patch.side,
                                             encoder.config().patch_size);
  seed_patch.anchor_row = ar;
  seed_patch.anchor_col = ac;

  const PixelMask patch_mask = mask_for_patch(img_h, img_w, seed_patch);
  const std::vector<int> omega =
      tokens_under_region(patch_mask, encoder.config().patch_size, 0.5);
  if (omega.empty()) {
    fail(ErrorKind::Usage,
         "patch too small for the token grid: no token passes the coverage threshold");
  }

  AttackResult result;
  result.patch = seed_patch;
  std::vector<double>& pdata = result.patch.data;

  PatchOptimizer opt{cfg.optimizer, cfg.learning_rate, Adam(cfg.learning_rate)};
  opt.attach(pdata.size());

  RandomStream batch_rng(sub_seed(cfg.seed, "batch"));
  std::vector<double> grad(pdata.size(), 0.0);
  const double eps = cfg.objective.epsilon;

  for (int t = 0; t < cfg.attack_steps; ++t) {
    // sample the batch (with replacement) and precompute the clean-side
    // quantities the losses hold fixed within this outer step
    std::vector<SampleContext> batch;
    batch.reserve(cfg.batch_size);
    for (int b = 0; b < cfg.batch_size; ++b) {
      const Observation& obs =
          data.observations[batch_rng.below(data.observations.size())];
      SampleContext ctx;
      ctx.obs = &obs;
      ctx.clean = encoder.encode(obs.image, FeatureSource::Clean);
      ctx.weights = weight_map(saliency_from_attention(ctx.clean), cfg.objective);
      const auto arm_tokens = robust_token_mask(obs.arm_mask, encoder.config().patch_size);
      ctx.proto = visual_prototype(ctx.clean, arm_tokens, eps);
      batch.push_back(std::move(ctx));
    }

    const InjectBranch branch = variant_branch(cfg.variant, t, cfg.objective.tau);
    LossLogRow row;
    row.step = t;
    row.branch = branch;

    for (int k = 0; k < cfg.inner_steps; ++k) {
      std::fill(grad.begin(), grad.end(), 0.0);
      double acc_total = 0.0, acc_sup = 0.0, acc_inj = 0.0;

      for (const SampleContext& ctx : batch) {
        Graph g;
        Value p = g.leaf(pdata.data(), static_cast<int>(pdata.size()), 1, true);
        Value img = g.constant(ctx.obs->image.data.data(),
                               static_cast<int>(ctx.obs->image.data.size()), 1);
        Value iadv = g.compose_patch(img, p, img_h, img_w, result.patch.side,
                                     result.patch.anchor_row, result.patch.anchor_col);
        auto fw = encoder.forward(g, iadv, img_h, img_w);

        // the suppression term is always evaluated for the log, even when
        // the variant drops it from the objective
        Value sup = suppress_loss_node(g, fw.z, ctx.clean, ctx.weights, eps);
        Value inj;
        double inj_value = 0.0;
        if (branch == InjectBranch::Semantic) {
          inj = semantic_loss_node(g, fw.z, omega, anchors, cfg.objective.top_k, eps);
        } else if (branch == InjectBranch::Visual) {
          inj = visual_loss_node(g, fw.z, omega, ctx.proto, eps);
        } else {
          inj = g.add(semantic_loss_node(g, fw.z, omega, anchors, cfg.objective.top_k, eps),
                      visual_loss_node(g, fw.z, omega, ctx.proto, eps));
        }
        inj_value = g.scalar_value(inj);

        Value loss;
        if (cfg.variant == AttackVariant::NoSuppress) {
          loss = g.scale(inj, cfg.objective.lambda);
        } else {
          loss = g.add(sup, g.scale(inj, cfg.objective.lambda));
        }
        g.backward(loss);
        kern::ops().axpy(1.0, g.grad(p).data(), grad.data(), grad.size());
        acc_total += g.scalar_value(loss);
        acc_sup += g.scalar_value(sup);
        acc_inj += inj_value;
      }

      kern::ops().scale(1.0 / cfg.batch_size, grad.data(), grad.data(), grad.size());
      opt.step(pdata, grad);
      result.patch.clamp01();

      row.total = acc_total / cfg.batch_size;
      row.suppress = acc_sup / cfg.batch_size;
      row.inject = acc_inj / cfg.batch_size;
    }

    if (cfg.inner_steps == 0) {
      // still log the sampled batch's loss so the schedule stays auditable
      double acc_total = 0.0, acc_sup = 0.0, acc_inj = 0.0;
      for (const SampleContext& ctx : batch) {
        const auto [iadv, mask] = compose_adversarial(ctx.obs->image, result.patch);
        const TokenFeatures zadv = encoder.encode(iadv, FeatureSource::Adversarial);
        const double sup = suppress_loss(zadv, ctx.clean, ctx.weights, eps);
        double inj = 0.0;
        if (branch == InjectBranch::Semantic) {
          inj = semantic_loss(zadv, omega, anchors, cfg.objective.top_k, eps);
        } else if (branch == InjectBranch::Visual) {
          inj = visual_loss(zadv, omega, ctx.proto, eps);
        } else {
          inj = semantic_loss(zadv, omega, anchors, cfg.objective.top_k, eps) +
                visual_loss(zadv, omega, ctx.proto, eps);
        }
        acc_sup += sup;
        acc_inj += inj;
        acc_total += (cfg.variant == AttackVariant::NoSuppress ? 0.0 : sup) +
                     cfg.objective.lambda * inj;
      }
      row.total = acc_total / cfg.batch_size;
      row.suppress = acc_sup / cfg.batch_size;
      row.inject = acc_inj / cfg.batch_size;
    }

    result.log.push_back(row);
  }
  return result;
}

Patch baseline_random(const AttackConfig& cfg, int image_h, int image_w) {
  cfg.validate();
  Patch p = patch_for_area_fraction(image_h, image_w, cfg.patch_fraction,
                                    sub_seed(cfg.seed, "baseline-random"), 0, 0);
  const auto anchor = cfg.anchor_row >= 0 && cfg.anchor_col >= 0
                          ? std::pair<int, int>{cfg.anchor_row, cfg.anchor_col}
                          : default_patch_anchor(image_h, image_w, p.side, 8);
  p.anchor_row = anchor.first;
  p.anchor_col = anchor.second;
  return p;
}

Patch baseline_arm_image(const ObservationSet& data, const AttackConfig& cfg) {
  cfg.validate();
  if (data.observations.empty()) {
    fail(ErrorKind::Usage, "arm-image baseline needs at least one observation");
  }
  const Observation& obs = data.observations.front();
  const PixelMask& mask = obs.arm_mask;
  if (mask.count() == 0) fail(ErrorKind::Domain, "arm mask is empty");

  int r0 = mask.height, r1 = -1, c0 = mask.width, c1 = -1;
  for (int r = 0; r < mask.height; ++r) {
    for (int c = 0; c < mask.width; ++c) {
      if (!mask.at(r, c)) continue;
      r0 = std::min(r0, r);
      r1 = std::max(r1, r);
      c0 = std::min(c0, c);
      c1 = std::max(c1, c);
    }
  }
  const int box_h = r1 - r0 + 1;
  const int box_w = c1 - c0 + 1;
  if (box_h < 2 || box_w < 2) {
    fail(ErrorKind::Domain, "arm bounding box is degenerate (" + std::to_string(box_h) + "x" +
                                std::to_string(box_w) + ")");
  }

  Patch p = baseline_random(cfg, obs.image.height, obs.image.width);
  const int side = p.side;
  // corner-aligned bilinear resample of the crop
  for (int r = 0; r < side; ++r) {
    const double sr = side > 1 ? static_cast<double>(r) * (box_h - 1) / (side - 1) : 0.0;
    const int ir = std::min(static_cast<int>(sr), box_h - 2);
    const double fr = sr - ir;
    for (int c = 0; c < side; ++c) {
      const double sc = side > 1 ? static_cast<double>(c) * (box_w - 1) / (side - 1) : 0.0;
      const int ic = std::min(static_cast<int>(sc), box_w - 2);
      const double fc = sc - ic;
      for (int ch = 0; ch < 3; ++ch) {
        const double v00 = obs.image.at(r0 + ir, c0 + ic, ch);
        const double v01 = obs.image.at(r0 + ir, c0 + ic + 1, ch);
        const double v10 = obs.image.at(r0 + ir + 1, c0 + ic, ch);
        const double v11 = obs.image.at(r0 + ir + 1, c0 + ic + 1, ch);
        p.at(r, c, ch) = (1 - fr) * ((1 - fc) * v00 + fc * v01) + fr * ((1 - fc) * v10 + fc * v11);
      }
    }
  }
  return p;
}

AttackResult baseline_action_error(const ObservationSet& data, const Policy& surrogate,
                                   const AttackConfig& cfg) {
  cfg.validate();
  if (surrogate.family != PolicyFamily::LearnedHead) {
    fail(ErrorKind::Usage, "action-error baseline needs a differentiable family-B surrogate");
  }
  if (data.observations.empty()) fail(ErrorKind::Usage, "observation set is empty");
  const VisionEncoder& encoder = *surrogate.encoder;

  const Image& probe = data.observations.front().image;
  const int img_h = probe.height;
  const int img_w = probe.width;

  Patch seed_patch = patch_for_area_fraction(img_h, img_w, cfg.patch_fraction,
                                             sub_seed(cfg.seed, "patch-init"), 0, 0);
  auto [ar, ac] = cfg.anchor_row >= 0 && cfg.anchor_col >= 0
                      ? std::pair<int, int>{cfg.anchor_row, cfg.anchor_col}
                      : default_patch_anchor(img_h, img_w, seed_patch.side,
                                             encoder.config().patch_size);
  seed_patch.anchor_row = ar;
  seed_patch.anchor_col = ac;

  AttackResult result;
  result.patch = seed_patch;
  std::vector<double>& pdata = result.patch.data;

  PatchOptimizer opt{cfg.optimizer, cfg.learning_rate, Adam(cfg.learning_rate)};
  opt.attach(pdata.size());
  RandomStream batch_rng(sub_seed(cfg.seed, "batch"));
  std::vector<double> grad(pdata.size(), 0.0);

  struct CleanAction {
    const Observation* obs;
    std::array<double, 2> action;
    std::vector<double> instr;
  };

  for (int t = 0; t < cfg.attack_steps; ++t) {
    std::vector<CleanAction> batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const Observation& obs =
          data.observations[batch_rng.below(data.observations.size())];
      CleanAction ca;
      ca.obs = &obs;
      ca.instr = encoder.concept_embedding(obs.instruction);
      Graph g;
      const TokenFeatures f = encoder.encode(obs.image);
      Value z = g.constant(f.tokens.data(), f.token_count(), f.dim);
      Value feats = head_frame_features(g, encoder, z, f.token_rows, f.token_cols,
                                        surrogate.localizer.temperature);
      Value instr = g.constant(ca.instr.data(), 1, static_cast<int>(ca.instr.size()));
      Value action = head_forward(g, surrogate.head, {feats}, instr);
      auto v = g.val(action);
      ca.action = {v[0], v[1]};
      batch.push_back(std::move(ca));
    }

    LossLogRow row;
    row.step = t;
    row.branch = InjectBranch::Joint;

    for (int k = 0; k < cfg.inner_steps; ++k) {
      std::fill(grad.begin(), grad.end(), 0.0);
      double acc = 0.0;
      for (const CleanAction& ca : batch) {
        Graph g;
        Value p = g.leaf(pdata.data(), static_cast<int>(pdata.size()), 1, true);
        Value img = g.constant(ca.obs->image.data.data(),
                               static_cast<int>(ca.obs->image.data.size()), 1);
        Value iadv = g.compose_patch(img, p, img_h, img_w, result.patch.side,
                                     result.patch.anchor_row, result.patch.anchor_col);
        auto fw = encoder.forward(g, iadv, img_h, img_w);
        Value feats = head_frame_features(g, encoder, fw.z, img_h / encoder.config().patch_size,
                                          img_w / encoder.config().patch_size,
                                          surrogate.localizer.temperature);
        Value instr = g.constant(ca.instr.data(), 1, static_cast<int>(ca.instr.size()));
        Value action = head_forward(g, surrogate.head, {feats}, instr);
        Value clean = g.constant(ca.action.data(), 1, 2);
        Value diff = g.sub(action, clean);
        // minimize the negated squared deviation = ascend the deviation
        Value loss = g.scale(g.sum_all(g.mul(diff, diff)), -1.0);
        g.backward(loss);
        kern::ops().axpy(1.0, g.grad(p).data(), grad.data(), grad.size());
        acc += -g.scalar_value(loss);
      }
      kern::ops().scale(1.0 / cfg.batch_size, grad.data(), grad.data(), grad.size());
      opt.step(pdata, grad);
      result.patch.clamp01();
      row.total = -acc / cfg.batch_size;
      row.inject = acc / cfg.batch_size;  // mean squared deviation, for the log
    }
    result.log.push_back(row);
  }
  return result;
}

void save_loss_log(const std::vector<LossLogRow>& log, const std::string& path) {
  std::ofstream os(path);
  if (!os) fail(ErrorKind::Io, "cannot open " + path + " for writing");
  os << "step,branch,L_total,L_suppress,L_inject\n";
  os.precision(12);
  for (const auto& row : log) {
    os << row.step << "," << branch_name(row.branch) << "," << row.total << "," << row.suppress
       << "," << row.inject << "\n";
  }
}

std::vector<LossLogRow> load_loss_log(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::Io, "cannot open " + path);
  std::vector<LossLogRow> log;
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string step, branch, total, sup, inj;
    std::getline(ls, step, ',');
    std::getline(ls, branch, ',');
    std::getline(ls, total, ',');
    std::getline(ls, sup, ',');
    std::getline(ls, inj, ',');
    LossLogRow row;
    row.step = std::stoi(step);
    row.branch = branch == "sem" ? InjectBranch::Semantic
                                 : (branch == "vis" ? InjectBranch::Visual : InjectBranch::Joint);
    row.total = std::stod(total);
    row.suppress = std::stod(sup);
    row.inject = std::stod(inj);
    log.push_back(row);
  }
  return log;
}

}  // namespace phijack
