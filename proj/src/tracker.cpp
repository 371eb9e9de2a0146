#include "hcat/tracker.hpp"

#include <algorithm>
#include <cmath>

namespace hcat {

std::pair<Image, CropMeta> crop_patch(const Image& frame, const BBox& box,
                                      double factor, int out_size) {
  check(!frame.empty(), "crop_patch: empty frame");
  check(box.frame == BoxFrame::kImage, "crop_patch: box must be in the image frame");
  check(box.w > 0.0 && box.h > 0.0, "crop_patch: zero-area box (w=", box.w,
        ", h=", box.h, ")");
  check(factor > 0.0 && out_size >= 1, "crop_patch: bad factor/out_size");

  CropMeta meta;
  meta.center_x = box.cx;
  meta.center_y = box.cy;
  meta.side = factor * std::sqrt(box.w * box.h);
  meta.out_size = out_size;

  Image crop;
  crop.height = crop.width = out_size;
  crop.data.resize(static_cast<size_t>(3) * out_size * out_size);

  const double x0 = meta.center_x - meta.side / 2.0;
  const double y0 = meta.center_y - meta.side / 2.0;
  const double step = meta.side / out_size;
  for (int oy = 0; oy < out_size; ++oy) {
    const double sy = y0 + (oy + 0.5) * step - 0.5;
    const int iy = static_cast<int>(std::floor(sy));
    const double fy = sy - iy;
    for (int ox = 0; ox < out_size; ++ox) {
      const double sx = x0 + (ox + 0.5) * step - 0.5;
      const int ix = static_cast<int>(std::floor(sx));
      const double fx = sx - ix;
      for (int c = 0; c < 3; ++c) {
        auto tap = [&](int y, int x) -> double {
          if (y < 0 || y >= frame.height || x < 0 || x >= frame.width)
            return kPixelMean[c];
          return frame.at(c, y, x);
        };
        const double v = (1 - fy) * ((1 - fx) * tap(iy, ix) + fx * tap(iy, ix + 1)) +
                         fy * ((1 - fx) * tap(iy + 1, ix) + fx * tap(iy + 1, ix + 1));
        crop.at(c, oy, ox) = v;
      }
    }
  }
  return {std::move(crop), meta};
}

BBox to_image_frame(const BBox& box, const CropMeta& meta) {
  check(box.frame == BoxFrame::kSearchNorm,
        "to_image_frame: box must be crop-normalized");
  const double x0 = meta.center_x - meta.side / 2.0;
  const double y0 = meta.center_y - meta.side / 2.0;
  return BBox{x0 + box.cx * meta.side, y0 + box.cy * meta.side,
              box.w * meta.side, box.h * meta.side, BoxFrame::kImage};
}

BBox to_crop_frame(const BBox& box, const CropMeta& meta) {
  check(box.frame == BoxFrame::kImage, "to_crop_frame: box must be in the image frame");
  const double x0 = meta.center_x - meta.side / 2.0;
  const double y0 = meta.center_y - meta.side / 2.0;
  return BBox{(box.cx - x0) / meta.side, (box.cy - y0) / meta.side,
              box.w / meta.side, box.h / meta.side, BoxFrame::kSearchNorm};
}

std::vector<double> hanning_window(int n) {
  check(n >= 2, "hanning_window: need n >= 2, got ", n);
  std::vector<double> one_d(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    one_d[static_cast<size_t>(i)] =
        0.5 * (1.0 - std::cos(2.0 * M_PI * i / (n - 1)));
  std::vector<double> out(static_cast<size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(i) * n + j] = one_d[static_cast<size_t>(i)] * one_d[static_cast<size_t>(j)];
  return out;
}

std::vector<double> apply_window_penalty(const std::vector<double>& scores,
                                         const std::vector<double>& window,
                                         double influence) {
  check(scores.size() == window.size(), "window penalty: ", scores.size(),
        " scores vs ", window.size(), " window cells");
  check(influence >= 0.0 && influence <= 1.0,
        "window penalty: influence must be in [0,1], got ", influence);
  std::vector<double> out(scores.size());
  for (size_t i = 0; i < scores.size(); ++i)
    out[i] = (1.0 - influence) * scores[i] + influence * window[i];
  return out;
}

TrackState track_init(const HcatModel& model, const Image& frame,
                      const BBox& init_box, double window_influence) {
  auto [crop, meta] = crop_patch(frame, init_box, kTemplateCropFactor,
                                 model.config.template_size);
  NoGradScope inference;
  TokenSet f_z = backbone_forward(model.backbone, make_patch(crop, PatchRole::kTemplate));

  TrackState state;
  state.template_tokens = encode_template(model.fusion, f_z);
  state.last_box = init_box;
  state.window = hanning_window(model.config.search_grid());
  state.window_influence = window_influence;
  return state;
}

TrackResult track_update(const HcatModel& model, TrackState& state,
                         const Image& frame) {
  check(state.template_tokens.features.defined(),
        "track_update: state not initialized");
  auto [crop, meta] = crop_patch(frame, state.last_box, kSearchCropFactor,
                                 model.config.search_size);
  NoGradScope inference;
  TokenSet f_x = backbone_forward(model.backbone, make_patch(crop, PatchRole::kSearch));
  TokenSet fused = fuse_encoded(model.fusion, state.template_tokens, f_x);
  PredictionGrid grid = to_grid(head_forward(model, fused));

  const std::vector<double> adjusted =
      apply_window_penalty(grid.scores, state.window, state.window_influence);
  size_t best = 0;  // ties resolve to the lowest flat index
  for (size_t i = 1; i < adjusted.size(); ++i)
    if (adjusted[i] > adjusted[best]) best = i;

  const auto& b = grid.boxes[best];
  BBox norm{b[0], b[1], b[2], b[3], BoxFrame::kSearchNorm};
  TrackResult result{to_image_frame(norm, meta), adjusted[best]};
  state.last_box = result.box;
  return result;
}

}  // namespace hcat
