#pragma once

#include <memory>
#include <string>
#include <vector>

#include "phijack/encoder.hpp"
#include "phijack/simworld.hpp"

namespace phijack {

// Victim policy zoo. Three families over a shared perception stack:
//   A  token-argmax: literal visual-proprioception readout; localizes the
//      embodiment and the instructed object by concept similarity and steps
//      between the two centroids.
//   B  learned-head: gated regression head over per-concept soft-centroid
//      features, behavior-cloned from the scripted expert.
//   C  multi-frame: family B's head shape over a window of m=2 stacked
//      frames.

enum class PolicyFamily { TokenArgmax, LearnedHead, MultiFrame };

const char* family_name(PolicyFamily f);  // "A" | "B" | "C"

struct LocalizerParams {
  int top_k = 2;          // tokens entering the centroid
  double temperature = 0.08;
};

// Concept set family A reads its own position from: the end-effector synonym
// group. The controller steps the end-effector, so that is the state the
// policy must localize; three of the four are also injection anchors.
std::vector<std::string> self_localization_concepts();

struct HeadWeights {
  Tensor w1, b1, w2, b2, w3, b3;  // gated: (x w1 + b1) .* (x w2 + b2) -> w3
};

struct Policy {
  std::string id;  // e.g. "A-e0"
  PolicyFamily family = PolicyFamily::TokenArgmax;
  int encoder_tag = 0;  // which zoo encoder this policy perceives through
  std::shared_ptr<const VisionEncoder> encoder;
  LocalizerParams localizer;
  HeadWeights head;       // families B/C
  int frame_window = 1;   // 2 for family C

  int required_history() const { return frame_window; }
};

// Soft spatial estimate of a concept set: similarity-weighted centroid of
// the top-k tokens nearest the concepts (max similarity over the set).
struct ConceptEstimate {
  double row = 0.0;
  double col = 0.0;
  double peak_similarity = 0.0;
};

ConceptEstimate locate_concepts(const VisionEncoder& enc, const TokenFeatures& features,
                                const std::vector<std::string>& concepts,
                                const LocalizerParams& params);

// Dimension of the per-concept soft-centroid feature block for one frame.
int head_feature_dim(const VisionEncoder& enc);

// Graph builder for the differentiable feature block of one frame:
// [1, 3*vocab] of (centroid_col, centroid_row, peak) per concept.
Value head_frame_features(Graph& g, const VisionEncoder& enc, Value z_tokens, int token_rows,
                          int token_cols, double pool_temperature);

// Graph builder for the head output [1,2] = (dx, dy) before clipping.
// frame_features: one value per frame in the window (oldest first);
// instruction embedding enters as a constant.
Value head_forward(Graph& g, const HeadWeights& head, const std::vector<Value>& frame_features,
                   Value instruction_embedding);

// Policy action on an observation history (oldest first, patched frames
// already composed by the caller). History shorter than the family's window
// is a state error.
Action act(const Policy& policy, const std::vector<Image>& history,
           const std::string& instruction);

// --- behavior cloning -------------------------------------------------------

struct CloneConfig {
  int scenes = 260;
  int epochs = 60;
  int batch = 64;
  double lr = 2e-3;
  int hidden = 32;
  double pool_temperature = 0.06;
  int heldout_scenes = 40;
};

struct CloneResult {
  HeadWeights head;
  double heldout_l2 = 0.0;  // mean action error vs the expert, pixels
};

// Trains a family B/C head against the scripted expert on (seed, role)
// scene streams; the held-out error is measured on fresh scenes.
CloneResult clone_head(const VisionEncoder& enc, PolicyFamily family, const CloneConfig& cfg,
                       uint64_t seed);

// --- head serialization ------------------------------------------------------

// "PHH1": family, frame window, encoder tag, pool temperature, tensors as
// float32 little-endian.
void save_head(const HeadWeights& head, PolicyFamily family, int frame_window, int encoder_tag,
               double pool_temperature, const std::string& path);
struct LoadedHead {
  HeadWeights head;
  PolicyFamily family;
  int frame_window = 1;
  int encoder_tag = 0;
  double pool_temperature = 0.06;
};
LoadedHead load_head(const std::string& path);

}  // namespace phijack
