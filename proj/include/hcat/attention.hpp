#pragma once

#include "hcat/tensor.hpp"

namespace hcat {

// (channels x tokens) feature matrix. grid_h/grid_w describe the spatial
// layout of the token axis (row-major) and are 0 for non-spatial tokens such
// as the sparse template vectors.
struct TokenSet {
  Tensor features;  // C x n
  int grid_h = 0;
  int grid_w = 0;

  int channels() const { return features.defined() ? features.dim(0) : 0; }
  int token_count() const { return features.defined() ? features.dim(1) : 0; }
  bool spatial() const { return grid_h > 0 && grid_w > 0; }
};

// 2D sinusoidal spatial code, C x (H*W), a pure function of (H, W, C).
//
// Layout: the first C/2 channels encode the row coordinate, the last C/2 the
// column coordinate. Within each half, channel pair i carries
// sin(p * w_i), cos(p * w_i) with p = 2*pi*row/H (resp. 2*pi*col/W) and
// geometric frequencies w_i = 10000^(-4i/C). All entries lie in [-1, 1] and
// tokens sharing a grid row share the row half of the code.
struct PosEncoding {
  int grid_h = 0;
  int grid_w = 0;
  int channels = 0;
  Tensor codes;  // C x (H*W), constant
};

PosEncoding sine_pos_encoding_2d(int grid_h, int grid_w, int channels);

// Attention score scaling: 1/sqrt(width/heads) or 1/sqrt(width).
enum class ScaleMode { kPerHead, kFullWidth };

struct MhcaParams {
  Tensor w_q, b_q;  // d x d, d x 1
  Tensor w_k, b_k;
  Tensor w_v, b_v;
  Tensor w_o, b_o;
  int head_count = 8;
  int width = 256;
  ScaleMode scale_mode = ScaleMode::kPerHead;

  std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const;
};

MhcaParams make_mhca_params(int width, int head_count, Rng& rng,
                            ScaleMode scale_mode = ScaleMode::kPerHead);

// softmax(K_h^T Q_h / scale) V_h per head, heads re-stacked along channels.
// No projections; every output column is a convex combination of value
// columns. K and V must agree on token count.
Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v,
                      int head_count, ScaleMode scale_mode);

// Full multi-head cross-attention block. Positional codes, when given, are
// added to the query and key inputs only; the value path stays position-free.
// Output keeps the query's grid metadata.
TokenSet mhca_forward(const MhcaParams& params, const TokenSet& q,
                      const TokenSet& kv, const PosEncoding* pos_q,
                      const PosEncoding* pos_kv);

}  // namespace hcat
