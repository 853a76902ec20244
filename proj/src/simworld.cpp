#include "phijack/simworld.hpp"

#include <algorithm>
#include <cmath>

#include "phijack/rng.hpp"

namespace phijack {

namespace {

constexpr int kImg = kWorldImageSize;

// placement zone keeps the top strip (patch territory) object-free
constexpr double kZoneRowMin = 20.0;
constexpr double kZoneRowMax = 58.0;
constexpr double kZoneColMin = 6.0;
constexpr double kZoneColMax = 58.0;

// tip clamp keeps the gripper renderable inside the frame
constexpr double kTipMargin = 5.0;

// arm rig geometry (pixels)
constexpr double kWristOffset = 5.0;
constexpr double kElbowOffset = 10.0;
constexpr double kShoulderOffset = 15.0;
constexpr int kSegmentHalfWidth = 1;  // 2px wide strokes

const std::array<double, 3> kSegmentColor{{0.46, 0.48, 0.53}};
const std::array<double, 3> kPalmColor{{0.70, 0.18, 0.62}};
const std::array<double, 3> kJawColor{{0.24, 0.27, 0.33}};

// 8px rasters do not resolve shape outlines reliably, so each shape class
// draws from its own color family; hue carries the class, shade varies
const std::array<std::array<double, 3>, 4> kCubePalette{{
    {{0.85, 0.20, 0.18}},
    {{0.80, 0.35, 0.14}},
    {{0.74, 0.14, 0.28}},
    {{0.90, 0.42, 0.30}},
}};
const std::array<std::array<double, 3>, 4> kBallPalette{{
    {{0.18, 0.34, 0.85}},
    {{0.14, 0.52, 0.80}},
    {{0.30, 0.24, 0.76}},
    {{0.18, 0.58, 0.70}},
}};
const std::array<std::array<double, 3>, 4> kWedgePalette{{
    {{0.20, 0.70, 0.24}},
    {{0.48, 0.72, 0.18}},
    {{0.14, 0.60, 0.42}},
    {{0.66, 0.76, 0.20}},
}};

const std::array<std::array<double, 3>, kLayoutCount> kBackgrounds{{
    {{0.70, 0.70, 0.68}},
    {{0.62, 0.66, 0.70}},
    {{0.70, 0.66, 0.60}},
    {{0.64, 0.70, 0.64}},
    {{0.74, 0.72, 0.66}},
    {{0.66, 0.62, 0.68}},
    {{0.60, 0.64, 0.62}},
    {{0.72, 0.68, 0.72}},
}};

// layouts differ in the arm's approach direction band (radians)
const std::array<double, kLayoutCount> kLayoutAngle{{
    0.0, 0.79, 1.57, 2.36, 3.14, 3.93, 4.71, 5.50,
}};

double dist2(double r0, double c0, double r1, double c1) {
  const double dr = r0 - r1;
  const double dc = c0 - c1;
  return dr * dr + dc * dc;
}

std::array<double, 3> shape_color(ObjectShape s, int shade) {
  switch (s) {
    case ObjectShape::Cube: return kCubePalette[shade % kCubePalette.size()];
    case ObjectShape::Ball: return kBallPalette[shade % kBallPalette.size()];
    case ObjectShape::Wedge: return kWedgePalette[shade % kWedgePalette.size()];
  }
  return kCubePalette[0];
}

}  // namespace

const char* shape_concept(ObjectShape s) {
  switch (s) {
    case ObjectShape::Cube: return "cube";
    case ObjectShape::Ball: return "ball";
    case ObjectShape::Wedge: return "wedge";
  }
  return "?";
}

RegionId shape_region(ObjectShape s) {
  switch (s) {
    case ObjectShape::Cube: return kRegionCube;
    case ObjectShape::Ball: return kRegionBall;
    case ObjectShape::Wedge: return kRegionWedge;
  }
  return kRegionBackground;
}

double Action::magnitude() const { return std::sqrt(dx * dx + dy * dy); }

Action clip_action(double dx, double dy, bool grip) {
  const double mag = std::sqrt(dx * dx + dy * dy);
  if (mag > kMaxActionStep) {
    const double s = kMaxActionStep / mag;
    dx *= s;
    dy *= s;
  }
  return {dx, dy, grip};
}

double Scene::target_distance() const {
  return std::sqrt(dist2(tip_row, tip_col, target.row, target.col));
}

std::array<std::array<double, 2>, 4> Scene::arm_joints() const {
  const double dr = std::sin(trail_angle);
  const double dc = std::cos(trail_angle);
  // perpendicular for the elbow bend
  const double pr = -dc;
  const double pc = dr;
  std::array<std::array<double, 2>, 4> j;
  j[3] = {tip_row, tip_col};
  j[2] = {tip_row + kWristOffset * dr, tip_col + kWristOffset * dc};
  j[1] = {tip_row + kElbowOffset * dr + bend * pr, tip_col + kElbowOffset * dc + bend * pc};
  j[0] = {tip_row + kShoulderOffset * dr + bend * pr, tip_col + kShoulderOffset * dc + bend * pc};
  return j;
}

namespace {

void put_pixel(RenderResult& rr, int r, int c, const std::array<double, 3>& color, RegionId region) {
  if (r < 0 || r >= rr.image.height || c < 0 || c >= rr.image.width) return;
  for (int ch = 0; ch < 3; ++ch) rr.image.at(r, c, ch) = color[ch];
  rr.region_map[static_cast<size_t>(r) * rr.image.width + c] = region;
  if (region == kRegionArm || region == kRegionGripper) {
    rr.arm_mask.at(r, c) = 1;
  } else {
    rr.arm_mask.at(r, c) = 0;
  }
}

void draw_rect(RenderResult& rr, double row, double col, int half_h, int half_w,
               const std::array<double, 3>& color, RegionId region) {
  const int r0 = static_cast<int>(std::lround(row)) - half_h;
  const int c0 = static_cast<int>(std::lround(col)) - half_w;
  for (int r = r0; r <= r0 + 2 * half_h; ++r)
    for (int c = c0; c <= c0 + 2 * half_w; ++c) put_pixel(rr, r, c, color, region);
}

void draw_disc(RenderResult& rr, double row, double col, double radius,
               const std::array<double, 3>& color, RegionId region) {
  const int r0 = static_cast<int>(std::floor(row - radius));
  const int r1 = static_cast<int>(std::ceil(row + radius));
  for (int r = r0; r <= r1; ++r) {
    for (int c = static_cast<int>(std::floor(col - radius));
         c <= static_cast<int>(std::ceil(col + radius)); ++c) {
      if (dist2(r, c, row, col) <= radius * radius) put_pixel(rr, r, c, color, region);
    }
  }
}

void draw_wedge(RenderResult& rr, double row, double col, double size,
                const std::array<double, 3>& color, RegionId region) {
  // upward triangle: apex at (row-size, col), base at row+size
  const int r0 = static_cast<int>(std::lround(row - size));
  const int r1 = static_cast<int>(std::lround(row + size));
  for (int r = r0; r <= r1; ++r) {
    const double frac = (r - r0) / std::max(1.0, static_cast<double>(r1 - r0));
    const double half = frac * size;
    for (int c = static_cast<int>(std::lround(col - half));
         c <= static_cast<int>(std::lround(col + half)); ++c) {
      put_pixel(rr, r, c, color, region);
    }
  }
}

void draw_segment(RenderResult& rr, const std::array<double, 2>& a,
                  const std::array<double, 2>& b, int half_width,
                  const std::array<double, 3>& color, RegionId region) {
  const double len = std::sqrt(dist2(a[0], a[1], b[0], b[1]));
  const int steps = std::max(1, static_cast<int>(std::ceil(len * 2.0)));
  for (int s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / steps;
    const double r = a[0] + t * (b[0] - a[0]);
    const double c = a[1] + t * (b[1] - a[1]);
    const int ri = static_cast<int>(std::lround(r));
    const int ci = static_cast<int>(std::lround(c));
    for (int dr = -half_width; dr <= half_width; ++dr)
      for (int dc = -half_width; dc <= half_width; ++dc)
        put_pixel(rr, ri + dr, ci + dc, color, region);
  }
}

void draw_object(RenderResult& rr, const WorldObject& o) {
  const RegionId region = shape_region(o.shape);
  switch (o.shape) {
    case ObjectShape::Cube:
      draw_rect(rr, o.row, o.col, 5, 5, o.color, region);
      break;
    case ObjectShape::Ball:
      draw_disc(rr, o.row, o.col, 5.3, o.color, region);
      break;
    case ObjectShape::Wedge:
      draw_wedge(rr, o.row, o.col, 5.6, o.color, region);
      break;
  }
}

}  // namespace

RenderResult render_scene(const Scene& scene) {
  RenderResult rr;
  rr.image = Image(kImg, kImg);
  rr.arm_mask = PixelMask(kImg, kImg);
  rr.region_map.assign(static_cast<size_t>(kImg) * kImg, kRegionBackground);

  // background with deterministic per-pixel texture
  RandomStream noise(scene.noise_seed);
  for (int r = 0; r < kImg; ++r) {
    for (int c = 0; c < kImg; ++c) {
      const double n = noise.uniform(-0.02, 0.02);
      for (int ch = 0; ch < 3; ++ch) {
        rr.image.at(r, c, ch) = std::clamp(scene.background[ch] + n, 0.0, 1.0);
      }
    }
  }

  for (const auto& d : scene.distractors) draw_object(rr, d);
  draw_object(rr, scene.target);

  // arm rig on top: polyline segments, then palm and jaws centered on the tip
  const auto joints = scene.arm_joints();
  draw_segment(rr, joints[0], joints[1], kSegmentHalfWidth, kSegmentColor, kRegionArm);
  draw_segment(rr, joints[1], joints[2], kSegmentHalfWidth, kSegmentColor, kRegionArm);
  draw_segment(rr, joints[2], joints[3], kSegmentHalfWidth, kSegmentColor, kRegionArm);
  draw_rect(rr, scene.tip_row, scene.tip_col, 3, 3, kPalmColor, kRegionGripper);
  // jaws flank the grasp point ahead of the palm
  const double fr = -std::sin(scene.trail_angle);
  const double fc = -std::cos(scene.trail_angle);
  const double sr = fc;
  const double sc = -fr;
  draw_rect(rr, scene.tip_row + 3.2 * fr + 2.6 * sr, scene.tip_col + 3.2 * fc + 2.6 * sc, 1, 1,
            kJawColor, kRegionGripper);
  draw_rect(rr, scene.tip_row + 3.2 * fr - 2.6 * sr, scene.tip_col + 3.2 * fc - 2.6 * sc, 1, 1,
            kJawColor, kRegionGripper);
  return rr;
}

Observation generate_scene(uint64_t seed, int layout) {
  if (layout < 0 || layout >= kLayoutCount) {
    fail(ErrorKind::Usage, "layout " + std::to_string(layout) + " not in registry");
  }
  RandomStream rng(sub_seed(seed, "scene", static_cast<uint64_t>(layout)));

  Scene s;
  s.layout = layout;
  s.seed = seed;
  s.background = kBackgrounds[layout];
  for (double& ch : s.background) ch = std::clamp(ch + rng.uniform(-0.03, 0.03), 0.0, 1.0);
  s.noise_seed = rng.next_u64();

  s.trail_angle = kLayoutAngle[layout] + rng.uniform(-0.5, 0.5);
  s.bend = rng.uniform(-3.0, 3.0);

  // target, then non-overlapping distractors of other shapes
  const int target_shape = rng.range(0, 2);
  s.target.shape = static_cast<ObjectShape>(target_shape);
  s.target.color = shape_color(s.target.shape, rng.range(0, 3));
  s.target.row = rng.uniform(kZoneRowMin, kZoneRowMax);
  s.target.col = rng.uniform(kZoneColMin, kZoneColMax);

  const int n_distractors = rng.range(1, 2);
  std::array<int, 2> other_shapes{};
  int os = 0;
  for (int sh = 0; sh < 3; ++sh) {
    if (sh != target_shape) other_shapes[os++] = sh;
  }
  if (rng.below(2) == 1) std::swap(other_shapes[0], other_shapes[1]);
  for (int i = 0; i < n_distractors; ++i) {
    WorldObject d;
    d.shape = static_cast<ObjectShape>(other_shapes[i]);
    d.color = shape_color(d.shape, rng.range(0, 3));
    for (int attempt = 0; attempt < 64; ++attempt) {
      d.row = rng.uniform(kZoneRowMin, kZoneRowMax);
      d.col = rng.uniform(kZoneColMin, kZoneColMax);
      bool clear = dist2(d.row, d.col, s.target.row, s.target.col) >= 14.0 * 14.0;
      for (const auto& prev : s.distractors) {
        clear = clear && dist2(d.row, d.col, prev.row, prev.col) >= 12.0 * 12.0;
      }
      if (clear) break;
    }
    s.distractors.push_back(d);
  }

  // arm start away from the target so the expert has real work to do
  for (int attempt = 0; attempt < 128; ++attempt) {
    s.tip_row = rng.uniform(kZoneRowMin, kZoneRowMax);
    s.tip_col = rng.uniform(kZoneColMin, kZoneColMax);
    if (dist2(s.tip_row, s.tip_col, s.target.row, s.target.col) >= 18.0 * 18.0) break;
  }

  Observation obs;
  obs.scene = s;
  RenderResult rr = render_scene(s);
  obs.image = std::move(rr.image);
  obs.arm_mask = std::move(rr.arm_mask);
  obs.region_map = std::move(rr.region_map);
  obs.instruction = s.instruction();
  return obs;
}

std::vector<Action> scripted_expert(const Scene& scene) {
  std::vector<Action> actions;
  Scene cur = scene;
  for (int step = 0; step < kDefaultMaxSteps; ++step) {
    if (at_target(cur)) break;
    const double dx = cur.target.col - cur.tip_col;
    const double dy = cur.target.row - cur.tip_row;
    const Action a = clip_action(dx, dy, std::sqrt(dx * dx + dy * dy) <= kMaxActionStep);
    actions.push_back(a);
    apply_action(cur, a);
  }
  return actions;
}

void apply_action(Scene& scene, const Action& a) {
  const Action clipped = clip_action(a.dx, a.dy, a.grip);
  scene.tip_col = std::clamp(scene.tip_col + clipped.dx, kTipMargin, kImg - 1 - kTipMargin);
  scene.tip_row = std::clamp(scene.tip_row + clipped.dy, kTipMargin, kImg - 1 - kTipMargin);
}

bool at_target(const Scene& scene) { return scene.target_distance() <= kSuccessRadius; }

ObservationSet make_observation_set(uint64_t seed, const std::string& role, int count,
                                    ObservationSet::Split split) {
  ObservationSet set;
  set.split = split;
  set.observations.reserve(count);
  for (int i = 0; i < count; ++i) {
    set.observations.push_back(
        generate_scene(sub_seed(seed, role, static_cast<uint64_t>(i)), i % kLayoutCount));
  }
  return set;
}

}  // namespace phijack
