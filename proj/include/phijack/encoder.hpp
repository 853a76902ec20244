#pragma once

#include <string>
#include <vector>

#include "phijack/graph.hpp"
#include "phijack/imaging.hpp"
#include "phijack/tensor.hpp"

namespace phijack {

// Tiny dual vision-language encoder standing in for the perception stack of
// a VLA policy: a no-class-token transformer over pixel patches plus a
// concept-embedding table trained jointly against simulator scenes.

struct EncoderConfig {
  int patch_size = 8;
  int depth = 2;
  int dim = 32;
  int heads = 4;
  int mlp_hidden = 64;
  uint64_t seed = 0;
  double ln_eps = 1e-5;
  double cos_eps = 1e-8;  // guard added to every norm in cosine computations
};

struct AttentionMaps {
  int heads = 0;
  int queries = 0;
  int keys = 0;
  std::vector<double> data;  // heads*queries*keys

  double at(int h, int q, int k) const {
    return data[(static_cast<size_t>(h) * queries + q) * keys + k];
  }
};

enum class FeatureSource { Clean, Adversarial };

struct TokenFeatures {
  int token_rows = 0;
  int token_cols = 0;
  int dim = 0;
  std::vector<double> tokens;  // (token_rows*token_cols) x dim, row-major
  AttentionMaps attention;     // final-layer multi-head self-attention
  bool has_attention = false;
  FeatureSource source = FeatureSource::Clean;

  int token_count() const { return token_rows * token_cols; }
  const double* token(int j) const { return tokens.data() + static_cast<size_t>(j) * dim; }
};

struct SemanticAnchors {
  std::vector<std::string> prompts;
  Tensor embeddings;  // anchor_count x dim, rows L2-normalized
  int anchor_count() const { return embeddings.rows; }
};

struct PrototypeVector {
  std::vector<double> vector;  // dim
};

// The default embodiment prompt set.
std::vector<std::string> default_anchor_prompts();

class VisionEncoder {
public:
  struct LayerWeights {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor w1, b1, w2, b2, w3, b3;  // gated mlp: (x*w1+b1) .* (x*w2+b2) -> w3
  };

  VisionEncoder() = default;
  // Random initialization from cfg.seed. The vocabulary fixes the concept
  // table rows; order matters for checkpoints.
  VisionEncoder(const EncoderConfig& cfg, std::vector<std::string> vocabulary);

  const EncoderConfig& config() const { return cfg_; }
  const std::vector<std::string>& vocabulary() const { return vocab_; }
  int concept_index(const std::string& name) const;  // -1 if unknown

  // Full forward pass on the recording graph. `bound` optionally supplies
  // leaf bindings for every parameter (in parameters() order) so training
  // can differentiate with respect to weights; when null, weights enter as
  // constants. Returns final-layer features (after layer norm) and the
  // final layer's per-head attention maps.
  struct TapedForward {
    Value z;                            // [tokens, dim]
    std::vector<Value> head_attention;  // heads values, each [tokens, tokens]
  };
  TapedForward forward(Graph& g, Value image_flat, int img_h, int img_w,
                       const std::vector<Value>* bound = nullptr) const;

  // Convenience non-training encode.
  TokenFeatures encode(const Image& image,
                       FeatureSource source = FeatureSource::Clean) const;

  // Concept embeddings, L2-normalized rows. Unknown prompt -> vocabulary
  // error listing the known concepts.
  SemanticAnchors embed_concepts(const std::vector<std::string>& prompts) const;

  // Raw normalized concept row (no graph).
  std::vector<double> concept_embedding(const std::string& prompt) const;

  // All trainable tensors in checkpoint order (concept table last).
  std::vector<ParamRef> parameters();
  std::vector<const Tensor*> parameter_values() const;
  std::vector<std::string> parameter_names() const;

  int token_rows(int img_h) const { return img_h / cfg_.patch_size; }
  int token_cols(int img_w) const { return img_w / cfg_.patch_size; }

  Tensor& concept_table() { return concepts_; }
  const Tensor& concept_table() const { return concepts_; }

private:
  EncoderConfig cfg_;
  std::vector<std::string> vocab_;
  Tensor embed_w_, embed_b_, pos_;
  std::vector<LayerWeights> layers_;
  Tensor lnf_g_, lnf_b_;
  Tensor concepts_;  // vocab x dim

  friend void save_encoder(const VisionEncoder&, const std::string&);
  friend VisionEncoder load_encoder(const std::string&);
};

// v_proto: L2-normalized masked mean of clean token features; empty mask is
// an error rather than a silent zero vector.
PrototypeVector visual_prototype(const TokenFeatures& clean,
                                 const std::vector<uint8_t>& arm_token_mask,
                                 double eps = 1e-8);

// "PHE1" checkpoint: magic, architecture header, vocabulary, tensors as
// float32 little-endian in parameters() order; writes a plain-text sidecar
// manifest (<path>.manifest.txt) listing tensor names, shapes and the
// checkpoint checksum.
void save_encoder(const VisionEncoder& enc, const std::string& path);
VisionEncoder load_encoder(const std::string& path);

}  // namespace phijack
