#include "hcat/loss.hpp"

#include <cmath>
#include <iostream>

namespace hcat {

namespace {

constexpr double kProbEps = 1e-7;

struct Corners {
  double x1, y1, x2, y2;
};

Corners corners(const BBox& b) {
  return {b.cx - b.w / 2, b.cy - b.h / 2, b.cx + b.w / 2, b.cy + b.h / 2};
}

}  // namespace

SampleAssignment assign_samples(int grid_h, int grid_w, const BBox& gt_box) {
  check(grid_h >= 1 && grid_w >= 1, "assign_samples: bad grid ", grid_h, "x", grid_w);
  check(gt_box.frame == BoxFrame::kSearchNorm,
        "assign_samples: ground truth must be search-normalized");

  SampleAssignment out;
  out.grid_h = grid_h;
  out.grid_w = grid_w;
  out.gt_box = gt_box;
  out.positive.assign(static_cast<size_t>(grid_h) * grid_w, false);

  if (gt_box.w <= 0.0 || gt_box.h <= 0.0) {
    out.degenerate = true;
    std::cerr << "assign_samples: degenerate ground-truth box (w=" << gt_box.w
              << ", h=" << gt_box.h << "), all samples negative\n";
    return out;
  }

  const Corners g = corners(gt_box);
  for (int i = 0; i < grid_h; ++i) {
    const double cy = (i + 0.5) / grid_h;
    for (int j = 0; j < grid_w; ++j) {
      const double cx = (j + 0.5) / grid_w;
      if (cx >= g.x1 && cx < g.x2 && cy >= g.y1 && cy < g.y2) {
        out.positive[static_cast<size_t>(i) * grid_w + j] = true;
        out.positive_indices.push_back(i * grid_w + j);
      }
    }
  }
  return out;
}

void LossWeights::validate() const {
  check(neg_class_scale >= 0 && lambda_l1 >= 0 && lambda_giou >= 0,
        "loss weights must be nonnegative");
}

Tensor bce_weighted(const Tensor& scores, const SampleAssignment& assignment,
                    const LossWeights& weights) {
  check(scores.defined(), "bce: undefined scores");
  const int n = static_cast<int>(assignment.positive.size());
  check(scores.size() == n, "bce: ", scores.size(), " scores vs ", n, " cells");

  Tensor labels = Tensor::zeros({1, n});
  Tensor sample_w = Tensor::zeros({1, n});
  for (int j = 0; j < n; ++j) {
    const bool pos = assignment.positive[static_cast<size_t>(j)];
    labels.values()[j] = pos ? 1.0 : 0.0;
    sample_w.values()[j] = pos ? 1.0 : weights.neg_class_scale;
  }

  Tensor p = clamp(reshape(scores, {1, n}), kProbEps, 1.0 - kProbEps);
  Tensor pos_term = mul(labels, log(p));
  Tensor neg_term = mul(add_scalar(neg(labels), 1.0), log(add_scalar(neg(p), 1.0)));
  Tensor per_token = mul(neg(add(pos_term, neg_term)), sample_w);
  return mean(per_token);
}

double iou(const BBox& a, const BBox& b) {
  check(a.frame == b.frame, "iou: boxes are in different frames");
  check(a.w >= 0 && a.h >= 0 && b.w >= 0 && b.h >= 0, "iou: negative box extent");
  const Corners ca = corners(a), cb = corners(b);
  const double iw = std::max(0.0, std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1));
  const double ih = std::max(0.0, std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1));
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double giou(const BBox& a, const BBox& b) {
  check(a.frame == b.frame, "giou: boxes are in different frames");
  check(a.w >= 0 && a.h >= 0 && b.w >= 0 && b.h >= 0, "giou: negative box extent");
  const double area_a = a.w * a.h, area_b = b.w * b.h;
  if (area_a == 0.0 && area_b == 0.0) {
    std::cerr << "giou: both boxes have zero area, returning 0\n";
    return 0.0;
  }
  const Corners ca = corners(a), cb = corners(b);
  const double iw = std::max(0.0, std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1));
  const double ih = std::max(0.0, std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1));
  const double inter = iw * ih;
  const double uni = area_a + area_b - inter;
  const double hull = (std::max(ca.x2, cb.x2) - std::min(ca.x1, cb.x1)) *
                      (std::max(ca.y2, cb.y2) - std::min(ca.y1, cb.y1));
  return inter / uni - (hull - uni) / hull;
}

Tensor total_loss(const HeadOutput& pred, const SampleAssignment& assignment,
                  const LossWeights& weights, LossBreakdown* parts) {
  weights.validate();
  check(pred.grid_h == assignment.grid_h && pred.grid_w == assignment.grid_w,
        "total_loss: prediction grid ", pred.grid_h, "x", pred.grid_w,
        " vs assignment ", assignment.grid_h, "x", assignment.grid_w);

  Tensor classification = bce_weighted(pred.scores, assignment, weights);
  Tensor total = classification;
  double l1_val = 0.0, giou_val = 0.0;

  const auto& pos = assignment.positive_indices;
  if (!pos.empty()) {
    const double inv_count = 1.0 / static_cast<double>(pos.size());
    Tensor boxes = select_cols(pred.boxes, pos);  // 4 x P

    const BBox& gt = assignment.gt_box;
    const int p_count = static_cast<int>(pos.size());
    Tensor gt_rows = Tensor::zeros({4, p_count});
    for (int j = 0; j < p_count; ++j) {
      gt_rows.values()[0 * p_count + j] = gt.cx;
      gt_rows.values()[1 * p_count + j] = gt.cy;
      gt_rows.values()[2 * p_count + j] = gt.w;
      gt_rows.values()[3 * p_count + j] = gt.h;
    }

    // l1 in the normalized (cx, cy, w, h) space the head predicts in.
    Tensor l1 = scale(sum(abs_val(sub(boxes, gt_rows))), inv_count);

    // Differentiable GIoU on corner coordinates.
    Tensor cx = slice_rows(boxes, 0, 1), cy = slice_rows(boxes, 1, 2);
    Tensor w2 = scale(slice_rows(boxes, 2, 3), 0.5);
    Tensor h2 = scale(slice_rows(boxes, 3, 4), 0.5);
    Tensor x1 = sub(cx, w2), x2 = add(cx, w2);
    Tensor y1 = sub(cy, h2), y2 = add(cy, h2);

    const Corners g = corners(gt);
    Tensor gx1 = Tensor::full({1, p_count}, g.x1), gx2 = Tensor::full({1, p_count}, g.x2);
    Tensor gy1 = Tensor::full({1, p_count}, g.y1), gy2 = Tensor::full({1, p_count}, g.y2);

    Tensor iw = relu(sub(minimum(x2, gx2), maximum(x1, gx1)));
    Tensor ih = relu(sub(minimum(y2, gy2), maximum(y1, gy1)));
    Tensor inter = mul(iw, ih);
    Tensor area_p = mul(scale(w2, 2.0), scale(h2, 2.0));
    Tensor uni = sub(add_scalar(area_p, gt.w * gt.h), inter);
    Tensor hull = mul(sub(maximum(x2, gx2), minimum(x1, gx1)),
                      sub(maximum(y2, gy2), minimum(y1, gy1)));
    Tensor giou_t = sub(divide(inter, uni), divide(sub(hull, uni), hull));
    Tensor giou_penalty = scale(sum(add_scalar(neg(giou_t), 1.0)), inv_count);

    l1_val = l1.item();
    giou_val = giou_penalty.item();
    total = add(total, add(scale(l1, weights.lambda_l1),
                           scale(giou_penalty, weights.lambda_giou)));
  }

  if (parts) {
    parts->classification = classification.item();
    parts->l1 = l1_val;
    parts->giou_penalty = giou_val;
    parts->total = total.item();
  }
  return total;
}

}  // namespace hcat
