#pragma once

#include <array>

#include "hcat/fusion.hpp"
#include "hcat/image.hpp"

namespace hcat {

// Full tracking model: toy backbone -> 1x1 channel projection -> feature
// fusion -> classification/regression heads.

enum class PatchRole { kTemplate, kSearch };

// Normalized pixels, [3, H, W], ready for the backbone.
struct ImagePatch {
  Tensor pixels;
  PatchRole role = PatchRole::kSearch;

  int height() const { return pixels.dim(1); }
  int width() const { return pixels.dim(2); }
};

// (value - mean) / std per channel on a raw [0,1] crop.
ImagePatch make_patch(const Image& crop, PatchRole role);

struct ModelConfig {
  FusionConfig fusion;
  int stride = 16;  // 8 or 16
  int template_size = 128;
  int search_size = 256;
  int backbone_channels = 128;  // widest stage; earlier stages are /8, /4, /2
  int head_hidden = 256;

  int template_grid() const { return template_size / stride; }
  int search_grid() const { return search_size / stride; }
  void validate() const;
};

// Four 3x3 conv stages. Total stride 16 halves the grid at every stage; the
// stride-8 variant runs the last stage dense, trading speed for resolution.
struct ConvStage {
  Tensor weight;  // out_ch x (in_ch * 3 * 3)
  Tensor bias;    // out_ch x 1
  int in_ch = 0, out_ch = 0, stride = 1;
};

struct BackboneParams {
  std::vector<ConvStage> stages;
  Tensor proj_w;  // C x widest
  Tensor proj_b;  // C x 1
  int stride = 16;

  std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const;
};

// Three-layer perceptron applied per token.
struct MlpHead {
  Tensor w1, b1, w2, b2, w3, b3;

  std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const;
};

struct HcatModel {
  ModelConfig config;
  BackboneParams backbone;
  FusionNet fusion;
  MlpHead cls_head;  // 1 logit per token
  MlpHead reg_head;  // 4 values per token

  // Stable, ordered registry of every trainable tensor.
  std::vector<std::pair<std::string, Tensor>> parameters() const;
};

HcatModel make_model(const ModelConfig& config, uint64_t seed);

// Backbone + projection + flatten. Grid = input size / stride, exactly.
TokenSet backbone_forward(const BackboneParams& backbone, const ImagePatch& patch);

// Head outputs kept as tensors so the loss can differentiate through them.
struct HeadOutput {
  Tensor boxes;   // 4 x n, sigmoid-squashed (cx, cy, w, h), normalized
  Tensor scores;  // 1 x n, sigmoid foreground probability
  int grid_h = 0, grid_w = 0;
};

// Plain-double snapshot for the tracker and the CLI.
struct PredictionGrid {
  std::vector<std::array<double, 4>> boxes;
  std::vector<double> scores;
  int grid_h = 0, grid_w = 0;
};

HeadOutput head_forward(const HcatModel& model, const TokenSet& fused);
PredictionGrid to_grid(const HeadOutput& out);

HeadOutput model_forward(const HcatModel& model, const ImagePatch& tmpl,
                         const ImagePatch& search);

}  // namespace hcat
