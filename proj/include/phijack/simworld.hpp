#pragma once

#include <array>
#include <string>
#include <vector>

#include "phijack/imaging.hpp"

namespace phijack {

// Deterministic 2-D micro-manipulation world: a compact articulated arm rig
// with a dominant gripper, colored shape objects, flat lightly-noised
// backgrounds, and exact ground-truth masks. Everything renders as a pure
// function of the Scene.

inline constexpr const char* kLayoutRegistryVersion = "layouts-v1";
inline constexpr int kWorldImageSize = 64;
inline constexpr int kLayoutCount = 8;
inline constexpr double kMaxActionStep = 3.0;
inline constexpr double kSuccessRadius = 2.0;
inline constexpr int kDefaultMaxSteps = 40;

enum class ObjectShape { Cube, Ball, Wedge };

const char* shape_concept(ObjectShape s);

// per-pixel region ids in the render's semantic map
enum RegionId : uint8_t {
  kRegionBackground = 0,
  kRegionArm = 1,
  kRegionGripper = 2,
  kRegionCube = 3,
  kRegionBall = 4,
  kRegionWedge = 5,
};

RegionId shape_region(ObjectShape s);

struct WorldObject {
  double row = 0.0;
  double col = 0.0;
  ObjectShape shape = ObjectShape::Cube;
  std::array<double, 3> color{{0, 0, 0}};
};

struct Action {
  double dx = 0.0;  // column step
  double dy = 0.0;  // row step
  bool grip = false;

  double magnitude() const;
};

Action clip_action(double dx, double dy, bool grip);

struct Scene {
  int layout = 0;
  uint64_t seed = 0;

  // arm rig: the polyline trails behind the end-effector along trail_dir
  double tip_row = 0.0;
  double tip_col = 0.0;
  double trail_angle = 0.0;  // radians; direction from tip back toward shoulder
  double bend = 0.0;         // articulation of the elbow joint

  WorldObject target;
  std::vector<WorldObject> distractors;

  std::array<double, 3> background{{0, 0, 0}};
  uint64_t noise_seed = 0;

  std::string instruction() const { return shape_concept(target.shape); }
  double target_distance() const;

  // 3-joint polyline (shoulder, elbow, wrist, tip) in (row,col)
  std::array<std::array<double, 2>, 4> arm_joints() const;
};

struct RenderResult {
  Image image;
  PixelMask arm_mask;                // arm + gripper pixels, exactly
  std::vector<uint8_t> region_map;   // RegionId per pixel
};

RenderResult render_scene(const Scene& scene);

struct Observation {
  Scene scene;
  Image image;
  PixelMask arm_mask;
  std::vector<uint8_t> region_map;
  std::string instruction;
};

// Deterministic scene draw; same (seed, layout) twice gives bit-identical
// renders.
Observation generate_scene(uint64_t seed, int layout);

// Greedy straight-line controller on ground truth; solves every scene the
// generator emits within the step budget.
std::vector<Action> scripted_expert(const Scene& scene);

// One dynamics step: clipped tip translation, bounds clamp.
void apply_action(Scene& scene, const Action& a);

bool at_target(const Scene& scene);

struct ObservationSet {
  std::vector<Observation> observations;
  enum class Split { Train, Eval } split = Split::Train;
};

// `count` observations cycling through the layout registry, sub-seeded per
// index from (seed, role).
ObservationSet make_observation_set(uint64_t seed, const std::string& role, int count,
                                    ObservationSet::Split split);

}  // namespace phijack
