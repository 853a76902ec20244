#include "phijack/encoder.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "phijack/kernels.hpp"
#include "phijack/manifest.hpp"

namespace phijack {

std::vector<std::string> default_anchor_prompts() {
  return {"robot", "arm", "hand", "claw", "end-effector"};
}

VisionEncoder::VisionEncoder(const EncoderConfig& cfg, std::vector<std::string> vocabulary)
    : cfg_(cfg), vocab_(std::move(vocabulary)) {
  if (cfg_.dim % cfg_.heads != 0) {
    fail(ErrorKind::Usage, "encoder dim must be divisible by heads");
  }
  if (cfg_.heads > 8) fail(ErrorKind::Usage, "encoder supports at most 8 heads");
  RandomStream rng(cfg_.seed);
  const int pd = cfg_.patch_size * cfg_.patch_size * 3;
  const int d = cfg_.dim;
  embed_w_ = Tensor::gaussian(pd, d, 1.0 / std::sqrt(pd), rng);
  embed_b_ = Tensor(1, d);
  // positional table sized lazily? Encoder is built for a fixed grid once an
  // image arrives; we size for the canonical 64/patch grid here.
  const int grid = 64 / cfg_.patch_size;
  pos_ = Tensor::gaussian(grid * grid, d, 0.02, rng);

  layers_.resize(cfg_.depth);
  for (auto& l : layers_) {
    l.ln1_g = Tensor::fill(1, d, 1.0);
    l.ln1_b = Tensor(1, d);
    l.wq = Tensor::gaussian(d, d, 1.0 / std::sqrt(d), rng);
    l.bq = Tensor(1, d);
    l.wk = Tensor::gaussian(d, d, 1.0 / std::sqrt(d), rng);
    l.bk = Tensor(1, d);
    l.wv = Tensor::gaussian(d, d, 1.0 / std::sqrt(d), rng);
    l.bv = Tensor(1, d);
    l.wo = Tensor::gaussian(d, d, 1.0 / std::sqrt(d), rng);
    l.bo = Tensor(1, d);
    l.ln2_g = Tensor::fill(1, d, 1.0);
    l.ln2_b = Tensor(1, d);
    l.w1 = Tensor::gaussian(d, cfg_.mlp_hidden, 1.0 / std::sqrt(d), rng);
    l.b1 = Tensor(1, cfg_.mlp_hidden);
    l.w2 = Tensor::gaussian(d, cfg_.mlp_hidden, 1.0 / std::sqrt(d), rng);
    l.b2 = Tensor::fill(1, cfg_.mlp_hidden, 1.0);  // gate starts near identity
    l.w3 = Tensor::gaussian(cfg_.mlp_hidden, d, 1.0 / std::sqrt(cfg_.mlp_hidden), rng);
    l.b3 = Tensor(1, d);
  }
  lnf_g_ = Tensor::fill(1, d, 1.0);
  lnf_b_ = Tensor(1, d);
  concepts_ = Tensor::gaussian(static_cast<int>(vocab_.size()), d, 1.0, rng);
}

int VisionEncoder::concept_index(const std::string& name) const {
  for (size_t i = 0; i < vocab_.size(); ++i) {
    if (vocab_[i] == name) return static_cast<int>(i);
  }
  return -1;
}

std::vector<ParamRef> VisionEncoder::parameters() {
  std::vector<ParamRef> out;
  out.push_back({"embed_w", &embed_w_});
  out.push_back({"embed_b", &embed_b_});
  out.push_back({"pos", &pos_});
  for (size_t i = 0; i < layers_.size(); ++i) {
    auto& l = layers_[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    out.push_back({p + "ln1_g", &l.ln1_g});
    out.push_back({p + "ln1_b", &l.ln1_b});
    out.push_back({p + "wq", &l.wq});
    out.push_back({p + "bq", &l.bq});
    out.push_back({p + "wk", &l.wk});
    out.push_back({p + "bk", &l.bk});
    out.push_back({p + "wv", &l.wv});
    out.push_back({p + "bv", &l.bv});
    out.push_back({p + "wo", &l.wo});
    out.push_back({p + "bo", &l.bo});
    out.push_back({p + "ln2_g", &l.ln2_g});
    out.push_back({p + "ln2_b", &l.ln2_b});
    out.push_back({p + "w1", &l.w1});
    out.push_back({p + "b1", &l.b1});
    out.push_back({p + "w2", &l.w2});
    out.push_back({p + "b2", &l.b2});
    out.push_back({p + "w3", &l.w3});
    out.push_back({p + "b3", &l.b3});
  }
  out.push_back({"lnf_g", &lnf_g_});
  out.push_back({"lnf_b", &lnf_b_});
  out.push_back({"concepts", &concepts_});
  return out;
}

std::vector<const Tensor*> VisionEncoder::parameter_values() const {
  auto* self = const_cast<VisionEncoder*>(this);
  std::vector<const Tensor*> out;
  for (auto& p : self->parameters()) out.push_back(p.tensor);
  return out;
}

std::vector<std::string> VisionEncoder::parameter_names() const {
  auto* self = const_cast<VisionEncoder*>(this);
  std::vector<std::string> out;
  for (auto& p : self->parameters()) out.push_back(p.name);
  return out;
}

namespace {

std::vector<int> patchify_indices(int img_h, int img_w, int p) {
  const int tr = img_h / p;
  const int tc = img_w / p;
  std::vector<int> idx;
  idx.reserve(static_cast<size_t>(tr) * tc * p * p * 3);
  for (int t = 0; t < tr * tc; ++t) {
    const int r0 = (t / tc) * p;
    const int c0 = (t % tc) * p;
    for (int pr = 0; pr < p; ++pr) {
      for (int pc = 0; pc < p; ++pc) {
        for (int ch = 0; ch < 3; ++ch) {
          idx.push_back(((r0 + pr) * img_w + (c0 + pc)) * 3 + ch);
        }
      }
    }
  }
  return idx;
}

}  // namespace

VisionEncoder::TapedForward VisionEncoder::forward(Graph& g, Value image_flat, int img_h,
                                                   int img_w,
                                                   const std::vector<Value>* bound) const {
  if (img_h % cfg_.patch_size != 0 || img_w % cfg_.patch_size != 0) {
    fail(ErrorKind::Shape, "image dimensions must be divisible by the encoder patch size");
  }
  const int tokens = token_rows(img_h) * token_cols(img_w);
  if (tokens != pos_.rows) {
    fail(ErrorKind::Shape, "image token grid does not match encoder positional table");
  }

  // Bind parameters: provided leaves (training) or fresh constants.
  std::vector<Value> w;
  if (bound != nullptr) {
    w = *bound;
  } else {
    for (const Tensor* t : parameter_values()) {
      w.push_back(g.constant(t->v.data(), t->rows, t->cols));
    }
  }
  size_t wi = 0;
  const auto next = [&]() { return w[wi++]; };

  const Value embed_w = next();
  const Value embed_b = next();
  const Value pos = next();

  Value x = g.gather_flat(image_flat, patchify_indices(img_h, img_w, cfg_.patch_size), tokens,
                          cfg_.patch_size * cfg_.patch_size * 3);
  x = g.add_rowvec(g.matmul(x, embed_w), embed_b);
  x = g.add(x, pos);

  const int dh = cfg_.dim / cfg_.heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Value> final_attention;

  for (int li = 0; li < cfg_.depth; ++li) {
    const Value ln1_g = next(), ln1_b = next();
    const Value wq = next(), bq = next(), wk = next(), bk = next(), wv = next(), bv = next();
    const Value wo = next(), bo = next();
    const Value ln2_g = next(), ln2_b = next();
    const Value w1 = next(), b1 = next(), w2 = next(), b2 = next(), w3 = next(), b3 = next();

    Value h = g.layernorm_rows(x, ln1_g, ln1_b, cfg_.ln_eps);
    Value q = g.add_rowvec(g.matmul(h, wq), bq);
    Value k = g.add_rowvec(g.matmul(h, wk), bk);
    Value v = g.add_rowvec(g.matmul(h, wv), bv);

    std::vector<Value> ctx_parts;
    std::vector<Value> attn_parts;
    for (int hd = 0; hd < cfg_.heads; ++hd) {
      Value qh = g.slice_cols(q, hd * dh, dh);
      Value kh = g.slice_cols(k, hd * dh, dh);
      Value vh = g.slice_cols(v, hd * dh, dh);
      Value scores = g.scale(g.matmul_nt(qh, kh), inv_sqrt_dh);
      Value attn = g.softmax_rows(scores);
      attn_parts.push_back(attn);
      ctx_parts.push_back(g.matmul(attn, vh));
    }
    if (li == cfg_.depth - 1) final_attention = attn_parts;

    Value ctx = g.concat_cols(ctx_parts);
    x = g.add(x, g.add_rowvec(g.matmul(ctx, wo), bo));

    Value h2 = g.layernorm_rows(x, ln2_g, ln2_b, cfg_.ln_eps);
    Value g1 = g.add_rowvec(g.matmul(h2, w1), b1);
    Value g2 = g.add_rowvec(g.matmul(h2, w2), b2);
    x = g.add(x, g.add_rowvec(g.matmul(g.mul(g1, g2), w3), b3));
  }

  const Value lnf_g = next(), lnf_b = next();
  Value z = g.layernorm_rows(x, lnf_g, lnf_b, cfg_.ln_eps);
  // remaining binding slot is the concept table; callers take it from `bound`
  return {z, std::move(final_attention)};
}

TokenFeatures VisionEncoder::encode(const Image& image, FeatureSource source) const {
  Graph g;
  Value img = g.constant(image.data.data(), static_cast<int>(image.data.size()), 1);
  TapedForward fw = forward(g, img, image.height, image.width);

  TokenFeatures out;
  out.token_rows = token_rows(image.height);
  out.token_cols = token_cols(image.width);
  out.dim = cfg_.dim;
  out.source = source;
  auto z = g.val(fw.z);
  out.tokens.assign(z.begin(), z.end());

  const int t = out.token_count();
  out.attention.heads = cfg_.heads;
  out.attention.queries = t;
  out.attention.keys = t;
  out.attention.data.resize(static_cast<size_t>(cfg_.heads) * t * t);
  for (int h = 0; h < cfg_.heads; ++h) {
    auto a = g.val(fw.head_attention[h]);
    std::memcpy(out.attention.data.data() + static_cast<size_t>(h) * t * t, a.data(),
                a.size() * sizeof(double));
  }
  out.has_attention = true;
  return out;
}

std::vector<double> VisionEncoder::concept_embedding(const std::string& prompt) const {
  const int idx = concept_index(prompt);
  if (idx < 0) {
    std::string known;
    for (const auto& v : vocab_) known += (known.empty() ? "" : ", ") + v;
    fail(ErrorKind::Vocabulary, "unknown concept '" + prompt + "'; known concepts: " + known);
  }
  std::vector<double> row(concepts_.v.begin() + static_cast<size_t>(idx) * cfg_.dim,
                          concepts_.v.begin() + static_cast<size_t>(idx + 1) * cfg_.dim);
  const double nrm = std::sqrt(kern::ops().dot(row.data(), row.data(), row.size()));
  const double inv = 1.0 / (nrm + cfg_.cos_eps);
  for (double& x : row) x *= inv;
  return row;
}

SemanticAnchors VisionEncoder::embed_concepts(const std::vector<std::string>& prompts) const {
  SemanticAnchors anchors;
  anchors.prompts = prompts;
  anchors.embeddings = Tensor(static_cast<int>(prompts.size()), cfg_.dim);
  for (size_t i = 0; i < prompts.size(); ++i) {
    auto row = concept_embedding(prompts[i]);
    std::memcpy(anchors.embeddings.v.data() + i * cfg_.dim, row.data(),
                row.size() * sizeof(double));
  }
  return anchors;
}

PrototypeVector visual_prototype(const TokenFeatures& clean,
                                 const std::vector<uint8_t>& arm_token_mask, double eps) {
  if (static_cast<int>(arm_token_mask.size()) != clean.token_count()) {
    fail(ErrorKind::Shape, "arm token mask size does not match token count");
  }
  size_t selected = 0;
  for (uint8_t m : arm_token_mask) selected += m;
  if (selected == 0) {
    fail(ErrorKind::Domain, "visual prototype requires a nonempty arm token mask");
  }
  PrototypeVector proto;
  proto.vector.assign(clean.dim, 0.0);
  for (int j = 0; j < clean.token_count(); ++j) {
    if (!arm_token_mask[j]) continue;
    kern::ops().axpy(1.0, clean.token(j), proto.vector.data(), clean.dim);
  }
  const double nrm =
      std::sqrt(kern::ops().dot(proto.vector.data(), proto.vector.data(), clean.dim));
  const double inv = 1.0 / (nrm + eps);
  for (double& x : proto.vector) x *= inv;
  return proto;
}

// --- checkpoint io ---------------------------------------------------------

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

void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  const uint32_t n = get_u32(is);
  if (n > 4096) fail(ErrorKind::Integrity, "checkpoint string length implausible");
  std::string s(n, '\0');
  is.read(s.data(), n);
  return s;
}

}  // namespace

void save_encoder(const VisionEncoder& enc, const std::string& path) {
  {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorKind::Io, "cannot open " + path + " for writing");
    os.write("PHE1", 4);
    put_u32(os, 1);  // format version
    put_u32(os, static_cast<uint32_t>(enc.cfg_.patch_size));
    put_u32(os, static_cast<uint32_t>(enc.cfg_.depth));
    put_u32(os, static_cast<uint32_t>(enc.cfg_.dim));
    put_u32(os, static_cast<uint32_t>(enc.cfg_.heads));
    put_u32(os, static_cast<uint32_t>(enc.cfg_.mlp_hidden));
    os.write(reinterpret_cast<const char*>(&enc.cfg_.seed), 8);
    put_u32(os, static_cast<uint32_t>(enc.vocab_.size()));
    for (const auto& s : enc.vocab_) put_string(os, s);

    auto* self = const_cast<VisionEncoder*>(&enc);
    auto params = self->parameters();
    put_u32(os, static_cast<uint32_t>(params.size()));
    for (const auto& p : params) {
      put_string(os, p.name);
      put_u32(os, static_cast<uint32_t>(p.tensor->rows));
      put_u32(os, static_cast<uint32_t>(p.tensor->cols));
      for (double d : p.tensor->v) {
        const float f = static_cast<float>(d);
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(os, bits);
      }
    }
    if (!os) fail(ErrorKind::Io, "write failure on " + path);
  }

  // sidecar manifest: tensor table + whole-file checksum
  std::ostringstream man;
  man << "format PHE1 v1\n";
  man << "checksum " << checksum_hex(file_checksum(path)) << "\n";
  auto* self = const_cast<VisionEncoder*>(&enc);
  for (const auto& p : self->parameters()) {
    man << "tensor " << p.name << " " << p.tensor->rows << " " << p.tensor->cols << "\n";
  }
  std::ofstream ms(path + ".manifest.txt");
  if (!ms) fail(ErrorKind::Io, "cannot open " + path + ".manifest.txt for writing");
  ms << man.str();
}

VisionEncoder load_encoder(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Io, "cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "PHE1", 4) != 0) {
    fail(ErrorKind::Integrity, path + " is not a PHE1 checkpoint");
  }
  const uint32_t version = get_u32(is);
  if (version != 1) fail(ErrorKind::Integrity, path + ": unsupported checkpoint version");

  EncoderConfig cfg;
  cfg.patch_size = static_cast<int>(get_u32(is));
  cfg.depth = static_cast<int>(get_u32(is));
  cfg.dim = static_cast<int>(get_u32(is));
  cfg.heads = static_cast<int>(get_u32(is));
  cfg.mlp_hidden = static_cast<int>(get_u32(is));
  is.read(reinterpret_cast<char*>(&cfg.seed), 8);

  const uint32_t vocab_n = get_u32(is);
  if (vocab_n > 1024) fail(ErrorKind::Integrity, path + ": implausible vocabulary size");
  std::vector<std::string> vocab;
  for (uint32_t i = 0; i < vocab_n; ++i) vocab.push_back(get_string(is));

  VisionEncoder enc(cfg, vocab);
  auto params = enc.parameters();
  const uint32_t tensor_n = get_u32(is);
  if (tensor_n != params.size()) {
    fail(ErrorKind::Integrity, path + ": tensor count does not match architecture");
  }
  for (auto& p : params) {
    const std::string name = get_string(is);
    if (name != p.name) {
      fail(ErrorKind::Integrity, path + ": tensor order mismatch, expected " + p.name + " got " + name);
    }
    const int rows = static_cast<int>(get_u32(is));
    const int cols = static_cast<int>(get_u32(is));
    if (rows != p.tensor->rows || cols != p.tensor->cols) {
      fail(ErrorKind::Integrity, path + ": tensor shape mismatch for " + p.name);
    }
    for (double& d : p.tensor->v) {
      uint32_t bits = get_u32(is);
      float f;
      std::memcpy(&f, &bits, 4);
      d = static_cast<double>(f);
    }
  }
  if (!is) fail(ErrorKind::Integrity, path + ": truncated checkpoint");
  return enc;
}

}  // namespace phijack
