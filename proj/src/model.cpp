#include "hcat/model.hpp"

namespace hcat {

ImagePatch make_patch(const Image& crop, PatchRole role) {
  check(!crop.empty(), "make_patch: empty crop");
  Tensor pixels = Tensor::zeros({3, crop.height, crop.width});
  double* out = pixels.values().data();
  const size_t plane = static_cast<size_t>(crop.height) * crop.width;
  for (int c = 0; c < 3; ++c)
    for (size_t i = 0; i < plane; ++i)
      out[c * plane + i] = (crop.data[c * plane + i] - kPixelMean[c]) / kPixelStd[c];
  return ImagePatch{pixels, role};
}

void ModelConfig::validate() const {
  fusion.validate();
  check(stride == 8 || stride == 16, "model config: stride must be 8 or 16, got ", stride);
  check(template_size > 0 && template_size % stride == 0,
        "model config: template_size ", template_size, " not divisible by stride ", stride);
  check(search_size > 0 && search_size % stride == 0,
        "model config: search_size ", search_size, " not divisible by stride ", stride);
  check(backbone_channels >= 8 && backbone_channels % 8 == 0,
        "model config: backbone_channels must be a positive multiple of 8, got ",
        backbone_channels);
  check(head_hidden >= 1, "model config: head_hidden must be >= 1, got ", head_hidden);
}

std::vector<std::pair<std::string, Tensor>> BackboneParams::named_params(
    const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (size_t i = 0; i < stages.size(); ++i) {
    const std::string base = prefix + ".stage" + std::to_string(i + 1);
    out.emplace_back(base + ".w", stages[i].weight);
    out.emplace_back(base + ".b", stages[i].bias);
  }
  out.emplace_back(prefix + ".proj.w", proj_w);
  out.emplace_back(prefix + ".proj.b", proj_b);
  return out;
}

std::vector<std::pair<std::string, Tensor>> MlpHead::named_params(
    const std::string& prefix) const {
  return {{prefix + ".w1", w1}, {prefix + ".b1", b1}, {prefix + ".w2", w2},
          {prefix + ".b2", b2}, {prefix + ".w3", w3}, {prefix + ".b3", b3}};
}

std::vector<std::pair<std::string, Tensor>> HcatModel::parameters() const {
  auto out = backbone.named_params("backbone");
  for (auto& kv : fusion.named_params("fusion")) out.push_back(kv);
  for (auto& kv : cls_head.named_params("head.cls")) out.push_back(kv);
  for (auto& kv : reg_head.named_params("head.reg")) out.push_back(kv);
  return out;
}

namespace {

ConvStage make_stage(int in_ch, int out_ch, int stride, Rng& rng) {
  ConvStage s;
  s.in_ch = in_ch;
  s.out_ch = out_ch;
  s.stride = stride;
  s.weight = xavier_init(Shape{out_ch, in_ch * 9}, rng);
  s.weight.set_requires_grad(true);
  s.bias = Tensor::zeros({out_ch, 1}, true);
  return s;
}

MlpHead make_head(int in_dim, int hidden, int out_dim, Rng& rng) {
  MlpHead h;
  h.w1 = xavier_init(Shape{hidden, in_dim}, rng);
  h.w2 = xavier_init(Shape{hidden, hidden}, rng);
  h.w3 = xavier_init(Shape{out_dim, hidden}, rng);
  for (Tensor t : {h.w1, h.w2, h.w3}) t.set_requires_grad(true);
  h.b1 = Tensor::zeros({hidden, 1}, true);
  h.b2 = Tensor::zeros({hidden, 1}, true);
  h.b3 = Tensor::zeros({out_dim, 1}, true);
  return h;
}

Tensor mlp3(const MlpHead& head, const Tensor& x) {
  Tensor h1 = relu(add_col(matmul(head.w1, x), head.b1));
  Tensor h2 = relu(add_col(matmul(head.w2, h1), head.b2));
  return add_col(matmul(head.w3, h2), head.b3);
}

}  // namespace

HcatModel make_model(const ModelConfig& config, uint64_t seed) {
  config.validate();
  Rng rng(seed);
  HcatModel m;
  m.config = config;

  const int widest = config.backbone_channels;
  const std::array<int, 4> widths = {widest / 8, widest / 4, widest / 2, widest};
  m.backbone.stride = config.stride;
  int in_ch = 3;
  for (int i = 0; i < 4; ++i) {
    const int stage_stride = (i == 3 && config.stride == 8) ? 1 : 2;
    m.backbone.stages.push_back(make_stage(in_ch, widths[i], stage_stride, rng));
    in_ch = widths[i];
  }
  m.backbone.proj_w = xavier_init(Shape{config.fusion.channels, widest}, rng);
  m.backbone.proj_w.set_requires_grad(true);
  m.backbone.proj_b = Tensor::zeros({config.fusion.channels, 1}, true);

  m.fusion = make_fusion_net(config.fusion, rng);
  m.cls_head = make_head(config.fusion.channels, config.head_hidden, 1, rng);
  m.reg_head = make_head(config.fusion.channels, config.head_hidden, 4, rng);
  return m;
}

TokenSet backbone_forward(const BackboneParams& backbone, const ImagePatch& patch) {
  check(patch.pixels.defined() && patch.pixels.ndim() == 3 && patch.pixels.dim(0) == 3,
        "backbone: patch must be [3,H,W]");
  const int h0 = patch.height(), w0 = patch.width();
  check(h0 % backbone.stride == 0 && w0 % backbone.stride == 0,
        "backbone: input ", h0, "x", w0, " not divisible by stride ", backbone.stride);

  Tensor x = patch.pixels;
  int h = h0, w = w0;
  for (const ConvStage& stage : backbone.stages) {
    Tensor cols = im2col(x, 3, stage.stride, 1);
    Tensor y = relu(add_col(matmul(stage.weight, cols), stage.bias));
    h = (h + 2 - 3) / stage.stride + 1;
    w = (w + 2 - 3) / stage.stride + 1;
    x = reshape(y, {stage.out_ch, h, w});
  }
  Tensor flat = reshape(x, {x.dim(0), h * w});
  Tensor projected = add_col(matmul(backbone.proj_w, flat), backbone.proj_b);
  return TokenSet{projected, h, w};
}

HeadOutput head_forward(const HcatModel& model, const TokenSet& fused) {
  check(fused.channels() == model.config.fusion.channels,
        "head_forward: fused width ", fused.channels(), " vs config ",
        model.config.fusion.channels);
  HeadOutput out;
  out.boxes = sigmoid(mlp3(model.reg_head, fused.features));
  out.scores = sigmoid(mlp3(model.cls_head, fused.features));
  out.grid_h = fused.grid_h;
  out.grid_w = fused.grid_w;
  return out;
}

PredictionGrid to_grid(const HeadOutput& out) {
  PredictionGrid grid;
  grid.grid_h = out.grid_h;
  grid.grid_w = out.grid_w;
  const int n = out.boxes.cols();
  grid.boxes.resize(static_cast<size_t>(n));
  grid.scores.resize(static_cast<size_t>(n));
  const auto& b = out.boxes.values();
  for (int j = 0; j < n; ++j) {
    for (int r = 0; r < 4; ++r)
      grid.boxes[static_cast<size_t>(j)][static_cast<size_t>(r)] =
          b[static_cast<size_t>(r) * n + j];
    grid.scores[static_cast<size_t>(j)] = out.scores.values()[static_cast<size_t>(j)];
  }
  return grid;
}

HeadOutput model_forward(const HcatModel& model, const ImagePatch& tmpl,
                         const ImagePatch& search) {
  const ModelConfig& cfg = model.config;
  check(tmpl.height() == cfg.template_size && tmpl.width() == cfg.template_size,
        "model_forward: template patch ", tmpl.height(), "x", tmpl.width(),
        " vs configured ", cfg.template_size);
  check(search.height() == cfg.search_size && search.width() == cfg.search_size,
        "model_forward: search patch ", search.height(), "x", search.width(),
        " vs configured ", cfg.search_size);
  TokenSet f_z = backbone_forward(model.backbone, tmpl);
  TokenSet f_x = backbone_forward(model.backbone, search);
  TokenSet fused = fusion_forward(model.fusion, f_z, f_x);
  return head_forward(model, fused);
}

}  // namespace hcat
