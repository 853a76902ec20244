#pragma once

#include <string>
#include <vector>

#include "phijack/encoder.hpp"
#include "phijack/objective.hpp"
#include "phijack/policy.hpp"
#include "phijack/simworld.hpp"

namespace phijack {

// Universal-patch outer optimization: batched sampling over the observation
// distribution, an inner loop of gradient updates per batch, projection onto
// [0,1] after every update, and the baseline patch generators.

enum class OptimizerKind { Adam, SignedGradient };

enum class AttackVariant {
  Full,
  NoSuppress,    // injection only
  NoSemInject,   // visual injection every step
  NoVisInject,   // semantic injection every step
  NoAlternate,   // both injection losses jointly every step
};

const char* variant_name(AttackVariant v);
AttackVariant variant_from_name(const std::string& name);

struct AttackConfig {
  int attack_steps = 500;  // N
  int inner_steps = 50;    // gradient updates per sampled batch
  int batch_size = 4;
  double learning_rate = 0.01;
  OptimizerKind optimizer = OptimizerKind::Adam;
  uint64_t seed = 0;
  ObjectiveConfig objective;
  double patch_fraction = 0.05;
  // -1/-1 selects the default placement: top strip, horizontally centered,
  // aligned to the token grid so the patch owns whole tokens
  int anchor_row = -1;
  int anchor_col = -1;
  AttackVariant variant = AttackVariant::Full;

  void validate() const;
};

std::pair<int, int> default_patch_anchor(int image_h, int image_w, int side,
                                         int encoder_patch_size);

// arm pixels -> token mask; the threshold relaxes to the best available
// coverage so a rendered arm never yields an empty mask
std::vector<uint8_t> robust_token_mask(const PixelMask& mask, int encoder_patch_size,
                                       double threshold = 0.1);

struct LossLogRow {
  int step = 0;
  InjectBranch branch = InjectBranch::Semantic;
  double total = 0.0;
  double suppress = 0.0;
  double inject = 0.0;
};

struct AttackResult {
  Patch patch;
  std::vector<LossLogRow> log;
};

// Eq-style objective over the training split; the schedule branch is fixed
// for the whole outer step and W comes from the clean image's attention.
AttackResult optimize_patch(const ObservationSet& data, const VisionEncoder& encoder,
                            const AttackConfig& cfg);

// Uniform-noise patch from the seed.
Patch baseline_random(const AttackConfig& cfg, int image_h, int image_w);

// Tightest arm bounding box from the first observation, bilinearly resampled
// to the patch side.
Patch baseline_arm_image(const ObservationSet& data, const AttackConfig& cfg);

// Gradient ascent on the squared action deviation of a differentiable
// family-B surrogate policy; same batching and projection as optimize_patch.
AttackResult baseline_action_error(const ObservationSet& data, const Policy& surrogate,
                                   const AttackConfig& cfg);

// CSV: step,branch,L_total,L_suppress,L_inject
void save_loss_log(const std::vector<LossLogRow>& log, const std::string& path);
std::vector<LossLogRow> load_loss_log(const std::string& path);

}  // namespace phijack
