#include "phijack/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "phijack/kernels.hpp"
#include "phijack/optim.hpp"
#include "phijack/rng.hpp"

namespace phijack {

std::vector<std::string> self_localization_concepts() {
  return {"hand", "claw", "end-effector", "gripper"};
}

const char* family_name(PolicyFamily f) {
  switch (f) {
    case PolicyFamily::TokenArgmax: return "A";
    case PolicyFamily::LearnedHead: return "B";
    case PolicyFamily::MultiFrame: return "C";
  }
  return "?";
}

ConceptEstimate locate_concepts(const VisionEncoder& enc, const TokenFeatures& f,
                                const std::vector<std::string>& concepts,
                                const LocalizerParams& params) {
  const double eps = enc.config().cos_eps;
  // concept-set centroid: averaging the synonym embeddings evens out the
  // per-prompt noise before the token similarity scan
  std::vector<double> centroid(f.dim, 0.0);
  for (const auto& c : concepts) {
    const auto e = enc.concept_embedding(c);
    kern::ops().axpy(1.0, e.data(), centroid.data(), f.dim);
  }
  const double cn = std::sqrt(kern::ops().dot(centroid.data(), centroid.data(), f.dim));
  kern::ops().scale(1.0 / (cn + eps), centroid.data(), centroid.data(), f.dim);

  const int tokens = f.token_count();
  std::vector<double> sim(tokens, -2.0);
  for (int t = 0; t < tokens; ++t) {
    const double* z = f.token(t);
    const double nrm = std::sqrt(kern::ops().dot(z, z, f.dim));
    sim[t] = kern::ops().dot(z, centroid.data(), f.dim) / (nrm + eps);
  }

  const int k = std::min(params.top_k, tokens);
  std::vector<int> order(tokens);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sim[a] > sim[b]; });

  const int patch = enc.config().patch_size;
  const double center_off = (patch - 1) / 2.0;
  double wsum = 0.0, row = 0.0, col = 0.0;
  const double peak = sim[order[0]];
  for (int i = 0; i < k; ++i) {
    const int t = order[i];
    const double w = std::exp((sim[t] - peak) / params.temperature);
    const int tr = t / f.token_cols;
    const int tc = t % f.token_cols;
    row += w * (tr * patch + center_off);
    col += w * (tc * patch + center_off);
    wsum += w;
  }
  return {row / wsum, col / wsum, peak};
}

int head_feature_dim(const VisionEncoder& enc) {
  return 3 * static_cast<int>(enc.vocabulary().size());
}

Value head_frame_features(Graph& g, const VisionEncoder& enc, Value z_tokens, int token_rows,
                          int token_cols, double pool_temperature) {
  const double eps = enc.config().cos_eps;
  const Tensor& concepts = enc.concept_table();
  const int vocab = concepts.rows;
  const int tokens = token_rows * token_cols;
  const int patch = enc.config().patch_size;
  const double center_off = (patch - 1) / 2.0;
  const double img_extent = static_cast<double>(std::max(token_rows, token_cols) * patch);

  Value zn = g.l2normalize_rows(z_tokens, eps);
  Value en = g.l2normalize_rows(g.constant(concepts.v.data(), concepts.rows, concepts.cols), eps);
  Value sims_t = g.transpose(g.matmul_nt(zn, en));  // [V, T]
  Value pool = g.softmax_rows(g.scale(sims_t, 1.0 / pool_temperature));

  // token center coordinates, normalized to [0,1]
  std::vector<double> rows_c(tokens), cols_c(tokens);
  for (int t = 0; t < tokens; ++t) {
    rows_c[t] = ((t / token_cols) * patch + center_off) / img_extent;
    cols_c[t] = ((t % token_cols) * patch + center_off) / img_extent;
  }
  Value cy = g.matmul(pool, g.constant_copy(std::move(rows_c), tokens, 1));
  Value cx = g.matmul(pool, g.constant_copy(std::move(cols_c), tokens, 1));
  Value pk = g.topk_row_mean(sims_t, 1);

  Value block = g.concat_cols({cx, cy, pk});  // [V,3]
  std::vector<int> flat(static_cast<size_t>(vocab) * 3);
  std::iota(flat.begin(), flat.end(), 0);
  return g.gather_flat(block, std::move(flat), 1, vocab * 3);
}

Value head_forward(Graph& g, const HeadWeights& head, const std::vector<Value>& frame_features,
                   Value instruction_embedding) {
  std::vector<Value> parts = frame_features;
  if (instruction_embedding.valid()) parts.push_back(instruction_embedding);
  Value x = parts.size() == 1 ? parts[0] : g.concat_cols(parts);

  Value w1 = g.constant(head.w1.v.data(), head.w1.rows, head.w1.cols);
  Value b1 = g.constant(head.b1.v.data(), head.b1.rows, head.b1.cols);
  Value w2 = g.constant(head.w2.v.data(), head.w2.rows, head.w2.cols);
  Value b2 = g.constant(head.b2.v.data(), head.b2.rows, head.b2.cols);
  Value w3 = g.constant(head.w3.v.data(), head.w3.rows, head.w3.cols);
  Value b3 = g.constant(head.b3.v.data(), head.b3.rows, head.b3.cols);

  Value h = g.mul(g.add_rowvec(g.matmul(x, w1), b1), g.add_rowvec(g.matmul(x, w2), b2));
  return g.scale(g.add_rowvec(g.matmul(h, w3), b3), kMaxActionStep);
}

namespace {

Action estimate_step(double arm_r, double arm_c, double tgt_r, double tgt_c) {
  const double dx = tgt_c - arm_c;
  const double dy = tgt_r - arm_r;
  return clip_action(dx, dy, std::sqrt(dx * dx + dy * dy) <= kMaxActionStep);
}

Action head_act(const Policy& policy, const std::vector<Image>& frames,
                const std::string& instruction) {
  const VisionEncoder& enc = *policy.encoder;
  Graph g;
  std::vector<Value> feats;
  std::vector<TokenFeatures> encoded;
  for (const Image& img : frames) {
    encoded.push_back(enc.encode(img));
  }
  for (const auto& f : encoded) {
    Value z = g.constant(f.tokens.data(), f.token_count(), f.dim);
    feats.push_back(head_frame_features(g, enc, z, f.token_rows, f.token_cols,
                                        policy.localizer.temperature));
  }
  const auto instr = enc.concept_embedding(instruction);
  Value instr_v = g.constant_copy({instr.begin(), instr.end()}, 1, static_cast<int>(instr.size()));
  Value out = head_forward(g, policy.head, feats, instr_v);
  auto v = g.val(out);
  return clip_action(v[0], v[1], std::sqrt(v[0] * v[0] + v[1] * v[1]) <= kMaxActionStep);
}

}  // namespace

Action act(const Policy& policy, const std::vector<Image>& history,
           const std::string& instruction) {
  if (static_cast<int>(history.size()) < policy.required_history()) {
    fail(ErrorKind::State, "policy " + policy.id + " needs " +
                               std::to_string(policy.required_history()) +
                               " frames of history, got " + std::to_string(history.size()));
  }
  switch (policy.family) {
    case PolicyFamily::TokenArgmax: {
      const TokenFeatures f = policy.encoder->encode(history.back());
      const ConceptEstimate arm =
          locate_concepts(*policy.encoder, f, self_localization_concepts(), policy.localizer);
      const ConceptEstimate target =
          locate_concepts(*policy.encoder, f, {instruction}, policy.localizer);
      return estimate_step(arm.row, arm.col, target.row, target.col);
    }
    case PolicyFamily::LearnedHead:
      return head_act(policy, {history.back()}, instruction);
    case PolicyFamily::MultiFrame: {
      std::vector<Image> frames(history.end() - policy.frame_window, history.end());
      return head_act(policy, frames, instruction);
    }
  }
  fail(ErrorKind::State, "unreachable policy family");
}

// --- behavior cloning --------------------------------------------------------

namespace {

std::vector<double> frame_feature_vector(const VisionEncoder& enc, const Image& img,
                                         double pool_temperature) {
  const TokenFeatures f = enc.encode(img);
  Graph g;
  Value z = g.constant(f.tokens.data(), f.token_count(), f.dim);
  Value feats = head_frame_features(g, enc, z, f.token_rows, f.token_cols, pool_temperature);
  auto v = g.val(feats);
  return {v.begin(), v.end()};
}

struct CloneSample {
  std::vector<double> features;  // window*3V + D
  double dx = 0.0, dy = 0.0;
};

std::vector<CloneSample> build_clone_dataset(const VisionEncoder& enc, PolicyFamily family,
                                             const CloneConfig& cfg, uint64_t seed,
                                             const std::string& role, int scene_count) {
  const int window = family == PolicyFamily::MultiFrame ? 2 : 1;
  RandomStream rng(sub_seed(seed, role + "-states"));
  std::vector<CloneSample> data;
  for (int si = 0; si < scene_count; ++si) {
    Observation obs =
        generate_scene(sub_seed(seed, role, static_cast<uint64_t>(si)), si % kLayoutCount);
    const auto instr = enc.concept_embedding(obs.instruction);

    // the expert is a pure function of state: sample tip positions across
    // the workspace instead of walking trajectories, so the head sees the
    // whole state space it will be rolled out on
    const int samples = 16;
    for (int k = 0; k < samples; ++k) {
      Scene state = obs.scene;
      if (k > 0) {
        state.tip_row = rng.uniform(8.0, 56.0);
        state.tip_col = rng.uniform(8.0, 56.0);
      }
      const double dx = state.target.col - state.tip_col;
      const double dy = state.target.row - state.tip_row;
      const Action expert = clip_action(dx, dy, false);

      CloneSample sample;
      if (window == 2) {
        Scene prev = state;
        prev.tip_row = std::clamp(prev.tip_row - rng.uniform(-3.0, 3.0), 5.0, 58.0);
        prev.tip_col = std::clamp(prev.tip_col - rng.uniform(-3.0, 3.0), 5.0, 58.0);
        auto fprev = frame_feature_vector(enc, render_scene(prev).image, cfg.pool_temperature);
        sample.features.insert(sample.features.end(), fprev.begin(), fprev.end());
      }
      auto fcur = frame_feature_vector(enc, render_scene(state).image, cfg.pool_temperature);
      sample.features.insert(sample.features.end(), fcur.begin(), fcur.end());
      sample.features.insert(sample.features.end(), instr.begin(), instr.end());
      sample.dx = expert.dx;
      sample.dy = expert.dy;
      data.push_back(std::move(sample));
    }
  }
  return data;
}

}  // namespace

CloneResult clone_head(const VisionEncoder& enc, PolicyFamily family, const CloneConfig& cfg,
                       uint64_t seed) {
  if (family == PolicyFamily::TokenArgmax) {
    fail(ErrorKind::Usage, "family A has no learned head to clone");
  }
  const int window = family == PolicyFamily::MultiFrame ? 2 : 1;
  const int in_dim = window * head_feature_dim(enc) + enc.config().dim;

  auto train = build_clone_dataset(enc, family, cfg, seed, "clone-train", cfg.scenes);
  auto held = build_clone_dataset(enc, family, cfg, seed, "clone-heldout", cfg.heldout_scenes);

  RandomStream init_rng(sub_seed(seed, "clone-init"));
  CloneResult result;
  result.head.w1 = Tensor::gaussian(in_dim, cfg.hidden, 1.0 / std::sqrt(in_dim), init_rng);
  result.head.b1 = Tensor(1, cfg.hidden);
  result.head.w2 = Tensor::gaussian(in_dim, cfg.hidden, 1.0 / std::sqrt(in_dim), init_rng);
  result.head.b2 = Tensor::fill(1, cfg.hidden, 1.0);
  result.head.w3 = Tensor::gaussian(cfg.hidden, 2, 1.0 / std::sqrt(cfg.hidden), init_rng);
  result.head.b3 = Tensor(1, 2);

  HeadWeights& head = result.head;
  std::vector<double*> bufs = {head.w1.v.data(), head.b1.v.data(), head.w2.v.data(),
                               head.b2.v.data(), head.w3.v.data(), head.b3.v.data()};
  std::vector<size_t> sizes = {head.w1.len(), head.b1.len(), head.w2.len(),
                               head.b2.len(), head.w3.len(), head.b3.len()};
  Adam opt(cfg.lr);
  opt.attach(sizes);

  RandomStream shuffle(sub_seed(seed, "clone-shuffle"));
  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<double> xbatch, ybatch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    for (size_t start = 0; start < order.size(); start += cfg.batch) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch));
      const int b = static_cast<int>(stop - start);
      xbatch.assign(static_cast<size_t>(b) * in_dim, 0.0);
      ybatch.assign(static_cast<size_t>(b) * 2, 0.0);
      for (int r = 0; r < b; ++r) {
        const CloneSample& s = train[order[start + r]];
        std::memcpy(xbatch.data() + static_cast<size_t>(r) * in_dim, s.features.data(),
                    sizeof(double) * in_dim);
        ybatch[static_cast<size_t>(r) * 2] = s.dx;
        ybatch[static_cast<size_t>(r) * 2 + 1] = s.dy;
      }

      Graph g;
      Value x = g.constant(xbatch.data(), b, in_dim);
      Value w1 = g.leaf(head.w1.v.data(), head.w1.rows, head.w1.cols, true);
      Value b1 = g.leaf(head.b1.v.data(), head.b1.rows, head.b1.cols, true);
      Value w2 = g.leaf(head.w2.v.data(), head.w2.rows, head.w2.cols, true);
      Value b2 = g.leaf(head.b2.v.data(), head.b2.rows, head.b2.cols, true);
      Value w3 = g.leaf(head.w3.v.data(), head.w3.rows, head.w3.cols, true);
      Value b3 = g.leaf(head.b3.v.data(), head.b3.rows, head.b3.cols, true);
      Value h = g.mul(g.add_rowvec(g.matmul(x, w1), b1), g.add_rowvec(g.matmul(x, w2), b2));
      Value pred = g.scale(g.add_rowvec(g.matmul(h, w3), b3), kMaxActionStep);
      Value err = g.sub(pred, g.constant(ybatch.data(), b, 2));
      Value loss = g.mean_all(g.mul(err, err));
      g.backward(loss);

      std::vector<const double*> gptrs = {g.grad(w1).data(), g.grad(b1).data(),
                                          g.grad(w2).data(), g.grad(b2).data(),
                                          g.grad(w3).data(), g.grad(b3).data()};
      opt.step(bufs, gptrs);
    }
  }

  // held-out mean action error in pixels; sample features already carry the
  // instruction embedding, so the raw head applies directly
  double err_sum = 0.0;
  for (const auto& s : held) {
    Graph g;
    Value x = g.constant(s.features.data(), 1, in_dim);
    Value pred = head_forward(g, head, {x}, Value{});
    auto v = g.val(pred);
    const Action a = clip_action(v[0], v[1], false);
    err_sum += std::hypot(a.dx - s.dx, a.dy - s.dy);
  }
  result.heldout_l2 = held.empty() ? 0.0 : err_sum / held.size();
  return result;
}

// --- head serialization --------------------------------------------------------

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_tensor(std::ostream& os, const Tensor& t) {
  put_u32(os, static_cast<uint32_t>(t.rows));
  put_u32(os, static_cast<uint32_t>(t.cols));
  for (double d : t.v) {
    const float f = static_cast<float>(d);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(os, bits);
  }
}

Tensor get_tensor(std::istream& is) {
  const int rows = static_cast<int>(get_u32(is));
  const int cols = static_cast<int>(get_u32(is));
  if (rows <= 0 || cols <= 0 || rows > 65536 || cols > 65536) {
    fail(ErrorKind::Integrity, "head tensor shape implausible");
  }
  Tensor t(rows, cols);
  for (double& d : t.v) {
    uint32_t bits = get_u32(is);
    float f;
    std::memcpy(&f, &bits, 4);
    d = static_cast<double>(f);
  }
  return t;
}

}  // namespace

void save_head(const HeadWeights& head, PolicyFamily family, int frame_window, int encoder_tag,
               double pool_temperature, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::Io, "cannot open " + path + " for writing");
  os.write("PHH1", 4);
  put_u32(os, family == PolicyFamily::LearnedHead ? 1u : 2u);
  put_u32(os, static_cast<uint32_t>(frame_window));
  put_u32(os, static_cast<uint32_t>(encoder_tag));
  const float pt = static_cast<float>(pool_temperature);
  uint32_t bits;
  std::memcpy(&bits, &pt, 4);
  put_u32(os, bits);
  put_tensor(os, head.w1);
  put_tensor(os, head.b1);
  put_tensor(os, head.w2);
  put_tensor(os, head.b2);
  put_tensor(os, head.w3);
  put_tensor(os, head.b3);
  if (!os) fail(ErrorKind::Io, "write failure on " + path);
}

LoadedHead load_head(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Io, "cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "PHH1", 4) != 0) {
    fail(ErrorKind::Integrity, path + " is not a PHH1 head file");
  }
  LoadedHead out;
  const uint32_t fam = get_u32(is);
  out.family = fam == 1u ? PolicyFamily::LearnedHead : PolicyFamily::MultiFrame;
  out.frame_window = static_cast<int>(get_u32(is));
  out.encoder_tag = static_cast<int>(get_u32(is));
  uint32_t bits = get_u32(is);
  float pt;
  std::memcpy(&pt, &bits, 4);
  out.pool_temperature = static_cast<double>(pt);
  out.head.w1 = get_tensor(is);
  out.head.b1 = get_tensor(is);
  out.head.w2 = get_tensor(is);
  out.head.b2 = get_tensor(is);
  out.head.w3 = get_tensor(is);
  out.head.b3 = get_tensor(is);
  if (!is) fail(ErrorKind::Integrity, path + ": truncated head file");
  return out;
}

}  // namespace phijack
