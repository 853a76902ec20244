#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "phijack/encoder.hpp"
#include "phijack/simworld.hpp"

namespace phijack {

// Region-level contrastive pretraining: token features are pulled toward a
// concept embedding sampled from their region's synonym group and pushed
// from all other groups, in both token->concept and concept->token
// directions (temperature-scaled cross-entropy). This is what makes the
// semantic anchors genuinely mean "arm" before any attack runs.

// Fixed concept vocabulary shared by every encoder in a zoo.
std::vector<std::string> world_vocabulary();

// Synonym group per vocabulary index; tokens of one region treat all
// synonyms of that region as interchangeable positives.
enum class ConceptGroup { Background, Arm, Gripper, Cube, Ball, Wedge };
ConceptGroup concept_group(int vocab_index);
ConceptGroup region_concept_group(RegionId region);

// Per-token labels for one rendered scene: the synonym group whose region
// dominates the token's receptive block, or -1 when no region is decisive.
std::vector<int> token_group_labels(const std::vector<uint8_t>& region_map, int img_h, int img_w,
                                    int encoder_patch_size, double min_coverage);

struct PretrainConfig {
  int scenes = 2000;
  int epochs = 20;  // maximum; training stops early at margin_stop
  int batch = 8;
  double temperature = 0.07;
  double lr = 3e-3;
  double margin_stop = 0.30;
  double margin_gate = 0.20;  // hard gate after max epochs
  int heldout_scenes = 48;
  double min_coverage = 0.12;
};

struct AlignmentMargin {
  // mean cos("arm", arm tokens) - mean cos("arm", background tokens)
  double token_margin = 0.0;
  // mean over arm tokens of cos(z,"arm") - cos(z,"background")
  double concept_margin = 0.0;
  // mean over labeled foreground tokens of cos(z, own group's best synonym)
  // minus the best cosine against any other foreground group; this is what
  // keeps "ball" from lighting up the arm
  double class_margin = 0.0;

  double worst() const {
    return std::min(std::min(token_margin, concept_margin), class_margin);
  }
};

struct PretrainResult {
  VisionEncoder encoder;
  AlignmentMargin margin;
  int epochs_run = 0;
};

AlignmentMargin measure_alignment(const VisionEncoder& encoder,
                                  const std::vector<Observation>& heldout, double min_coverage);

// Trains a fresh encoder (architecture from `arch`, weights from arch.seed)
// on simulator scenes drawn from (data_seed, "pretrain"). Fails with a
// training error if the margin gate is missed after the epoch budget
// (skipped when epochs == 0: an explicitly untrained encoder is a valid
// baseline).
PretrainResult pretrain_contrastive(const EncoderConfig& arch, const PretrainConfig& cfg,
                                    uint64_t data_seed);

}  // namespace phijack
