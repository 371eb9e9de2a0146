#pragma once

#include "hcat/loss.hpp"

namespace hcat {

// Online tracking loop: template crop once per sequence, then per frame a
// search crop around the previous box, a model forward using the cached
// template tokens, a center-biased rescoring, and the argmax box mapped back
// to image coordinates.

inline constexpr double kTemplateCropFactor = 2.0;
inline constexpr double kSearchCropFactor = 4.0;

// Geometry of one square crop; enough to map boxes between the image frame
// and the [0,1]-normalized crop frame.
struct CropMeta {
  double center_x = 0, center_y = 0;
  double side = 0;
  int out_size = 0;
};

// Square crop of side factor * sqrt(w*h) centered on the box, bilinearly
// resized to out_size (half-pixel-center alignment). Samples falling outside
// the frame read the per-channel mean.
std::pair<Image, CropMeta> crop_patch(const Image& frame, const BBox& box,
                                      double factor, int out_size);

BBox to_image_frame(const BBox& box, const CropMeta& meta);
BBox to_crop_frame(const BBox& box, const CropMeta& meta);

// Outer product of 1D Hann windows; zero at the edges, peak at the center.
std::vector<double> hanning_window(int n);

// adjusted = (1 - influence) * score + influence * window, elementwise.
std::vector<double> apply_window_penalty(const std::vector<double>& scores,
                                         const std::vector<double>& window,
                                         double influence);

struct TrackState {
  TokenSet template_tokens;  // cached at init, never updated
  BBox last_box;             // image frame
  std::vector<double> window;
  double window_influence = 0.49;
};

struct TrackResult {
  BBox box;      // image frame
  double score;  // penalized confidence of the selected cell
};

TrackState track_init(const HcatModel& model, const Image& frame,
                      const BBox& init_box, double window_influence = 0.49);

TrackResult track_update(const HcatModel& model, TrackState& state,
                         const Image& frame);

}  // namespace hcat
