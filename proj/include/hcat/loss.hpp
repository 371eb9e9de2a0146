#pragma once

#include "hcat/model.hpp"

namespace hcat {

// Training objective: every grid cell whose center falls inside the
// ground-truth box is a positive sample. All cells contribute to a
// down-weighted binary cross-entropy; only positives contribute to the
// l1 + generalized-IoU regression terms.

enum class BoxFrame { kImage, kSearchNorm };

// Axis-aligned box, center/size parameterized, with an explicit frame of
// reference: raw image pixels or [0,1] search-region coordinates.
struct BBox {
  double cx = 0, cy = 0, w = 0, h = 0;
  BoxFrame frame = BoxFrame::kImage;
};

struct SampleAssignment {
  std::vector<bool> positive;  // one flag per grid cell, row-major
  std::vector<int> positive_indices;
  int grid_h = 0, grid_w = 0;
  BBox gt_box;              // search-normalized
  bool degenerate = false;  // zero-area ground truth; everything negative
};

// Center-in-box test with a half-open boundary [x1,x2) x [y1,y2); cell
// centers sit at ((j+0.5)/W, (i+0.5)/H). A degenerate ground truth yields an
// all-negative assignment and a warning on stderr.
SampleAssignment assign_samples(int grid_h, int grid_w, const BBox& gt_box);

struct LossWeights {
  double neg_class_scale = 1.0 / 16.0;
  double lambda_l1 = 5.0;
  double lambda_giou = 2.0;

  void validate() const;
};

// Mean over all tokens of the per-token cross-entropy, with negative-sample
// terms scaled by neg_class_scale before the mean. Probabilities are clamped
// to [1e-7, 1 - 1e-7].
Tensor bce_weighted(const Tensor& scores, const SampleAssignment& assignment,
                    const LossWeights& weights);

// IoU and generalized IoU on plain boxes (same frame required). giou of two
// zero-area boxes is defined as 0, with a warning.
double iou(const BBox& a, const BBox& b);
double giou(const BBox& a, const BBox& b);

struct LossBreakdown {
  double total = 0;
  double classification = 0;
  double l1 = 0;
  double giou_penalty = 0;  // mean (1 - GIoU) over positives
};

// classification + lambda_l1 * mean-l1 + lambda_giou * mean(1 - GIoU), the
// regression terms taken over positive cells only (exactly zero when there
// are none). Differentiable w.r.t. the head outputs.
Tensor total_loss(const HeadOutput& pred, const SampleAssignment& assignment,
                  const LossWeights& weights, LossBreakdown* parts = nullptr);

}  // namespace hcat
