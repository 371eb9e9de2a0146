#pragma once

#include <optional>
#include <vector>

#include "hcat/attention.hpp"

namespace hcat {

// Feature fusion network: an optional sparsification stage that compresses
// the template tokens into S learned query slots, N layers of paired
// cross-attention blocks, and a final decoder block producing one fused
// vector per search token.

enum class Topology {
  kHierarchical,     // template branch consumes the search branch's fresh output
  kJuxtaposed,       // both branches consume the previous layer's outputs
  kSelfAttnBaseline  // each branch attends over its own tokens; decoder stays cross
};

struct FusionConfig {
  int channels = 256;       // token width C
  int sparse_tokens = 16;   // S
  int hca_layers = 2;       // N
  int heads = 8;
  int ffn_hidden = 2048;
  Topology mode = Topology::kHierarchical;
  bool use_fs = true;
  bool pos_every_layer = true;  // false: positions only in FS and the first layer
  bool post_norm = false;       // normalize after each residual sum
  ScaleMode scale_mode = ScaleMode::kPerHead;

  void validate() const;
};

// Cross-feature block: q + MHCA(q+P_q, kv+P_kv, kv), then + FFN of that sum.
struct CfaParams {
  MhcaParams mhca;
  Tensor ffn_w1, ffn_b1;  // hidden x C, hidden x 1
  Tensor ffn_w2, ffn_b2;  // C x hidden, C x 1

  std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const;
  // Zeroes every path that can alter the query stream (output projection and
  // second FFN layer, with their biases), turning the block into an identity.
  void zero_output_paths();
};

// Sparsification: S learned seed vectors cross-attend into the template
// tokens; the residual keeps the seeds themselves in the output.
struct FsParams {
  Tensor seeds;  // C x S, trainable
  MhcaParams mhca;

  std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const;
};

struct HcaLayerParams {
  CfaParams search_branch;
  CfaParams template_branch;
};

struct FusionNet {
  FusionConfig config;
  std::optional<FsParams> fs;
  std::vector<HcaLayerParams> layers;
  CfaParams decoder;

  std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const;
};

FusionNet make_fusion_net(const FusionConfig& config, Rng& rng);

TokenSet fs_forward(const FsParams& fs, const TokenSet& template_tokens,
                    const PosEncoding& pos_z);

TokenSet cfa_forward(const CfaParams& cfa, const TokenSet& q, const TokenSet& kv,
                     const PosEncoding* pos_q, const PosEncoding* pos_kv,
                     bool post_norm = false);

// One fusion layer: the search branch reads the template tokens, then the
// template branch reads the search tokens (fresh output when hierarchical,
// previous-layer tokens when juxtaposed).
std::pair<TokenSet, TokenSet> hca_layer_forward(
    const HcaLayerParams& layer, const TokenSet& search_tokens,
    const TokenSet& template_tokens, const PosEncoding* pos_search,
    const PosEncoding* pos_template, Topology mode, bool post_norm = false);

// Sparsifies (or passes through) the template tokens. Cached by the tracker
// once per sequence.
TokenSet encode_template(const FusionNet& net, const TokenSet& template_tokens);

// Runs the layer stack plus decoder on already-encoded template tokens.
TokenSet fuse_encoded(const FusionNet& net, const TokenSet& encoded_template,
                      const TokenSet& search_tokens);

// Full pass: encode_template then fuse_encoded. Output is C x (H_x * W_x)
// with the search grid metadata.
TokenSet fusion_forward(const FusionNet& net, const TokenSet& template_tokens,
                        const TokenSet& search_tokens);

}  // namespace hcat
