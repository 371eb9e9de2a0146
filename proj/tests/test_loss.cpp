#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hcat/loss.hpp"

using namespace hcat;

namespace {

BBox norm_box(double cx, double cy, double w, double h) {
  return BBox{cx, cy, w, h, BoxFrame::kSearchNorm};
}

BBox from_corners(double x1, double y1, double x2, double y2,
                  BoxFrame frame = BoxFrame::kImage) {
  return BBox{(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1, frame};
}

// Exact GIoU for integer-coordinate boxes by enumerating unit cells.
double giou_brute_force(int ax1, int ay1, int ax2, int ay2, int bx1, int by1,
                        int bx2, int by2) {
  const int lox = std::min(ax1, bx1), hix = std::max(ax2, bx2);
  const int loy = std::min(ay1, by1), hiy = std::max(ay2, by2);
  long long inter = 0, uni = 0;
  for (int y = loy; y < hiy; ++y)
    for (int x = lox; x < hix; ++x) {
      const bool in_a = x >= ax1 && x < ax2 && y >= ay1 && y < ay2;
      const bool in_b = x >= bx1 && x < bx2 && y >= by1 && y < by2;
      if (in_a && in_b) ++inter;
      if (in_a || in_b) ++uni;
    }
  const long long hull = static_cast<long long>(hix - lox) * (hiy - loy);
  return static_cast<double>(inter) / static_cast<double>(uni) -
         static_cast<double>(hull - uni) / static_cast<double>(hull);
}

HeadOutput make_pred(const std::vector<double>& scores,
                     const std::vector<double>& boxes_rowmajor4xn, int grid_h,
                     int grid_w) {
  HeadOutput out;
  const int n = grid_h * grid_w;
  out.scores = Tensor::from({1, n}, scores);
  out.boxes = Tensor::from({4, n}, boxes_rowmajor4xn);
  out.grid_h = grid_h;
  out.grid_w = grid_w;
  return out;
}

}  // namespace

TEST_CASE("full-region ground truth marks every cell positive") {
  SampleAssignment a = assign_samples(16, 16, norm_box(0.5, 0.5, 1.0, 1.0));
  CHECK(a.positive_indices.size() == 256);
  CHECK_FALSE(a.degenerate);
}

TEST_CASE("a box covering the central 2x2 cells yields exactly 4 positives") {
  // Centers of a 16x16 grid live at (i+0.5)/16; the central four are at
  // 0.46875 and 0.53125. Enumerate to double-check the expected count.
  const BBox gt = norm_box(0.5, 0.5, 0.1, 0.1);
  int expected = 0;
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) {
      const double cy = (i + 0.5) / 16.0, cx = (j + 0.5) / 16.0;
      if (cx >= 0.45 && cx < 0.55 && cy >= 0.45 && cy < 0.55) ++expected;
    }
  REQUIRE(expected == 4);
  SampleAssignment a = assign_samples(16, 16, gt);
  CHECK(static_cast<int>(a.positive_indices.size()) == expected);
  CHECK(a.positive[7 * 16 + 7]);
  CHECK(a.positive[8 * 16 + 8]);
}

TEST_CASE("zero-area ground truth assigns nothing and flags degenerate") {
  SampleAssignment a = assign_samples(8, 8, norm_box(0.5, 0.5, 0.0, 0.2));
  CHECK(a.positive_indices.empty());
  CHECK(a.degenerate);
}

TEST_CASE("assignment depends only on grid and box") {
  const BBox gt = norm_box(0.3, 0.6, 0.25, 0.3);
  SampleAssignment a = assign_samples(16, 16, gt);
  SampleAssignment b = assign_samples(16, 16, gt);
  CHECK(a.positive == b.positive);
}

TEST_CASE("half-open boundary keeps shared edges unambiguous") {
  // gt right edge exactly on a cell center: that cell is negative.
  const double edge = (3 + 0.5) / 8.0;
  SampleAssignment a = assign_samples(8, 8, norm_box(edge / 2, 0.5, edge, 1.0));
  for (int i = 0; i < 8; ++i) CHECK_FALSE(a.positive[i * 8 + 3]);
}

TEST_CASE("bce on near-perfect predictions approaches zero") {
  SampleAssignment a = assign_samples(2, 2, norm_box(0.25, 0.25, 0.5, 0.5));
  REQUIRE(a.positive_indices.size() == 1);
  std::vector<double> scores = {1.0, 0.0, 0.0, 0.0};  // clamped internally
  Tensor loss = bce_weighted(Tensor::from({1, 4}, scores), a, LossWeights{});
  CHECK(loss.item() < 1e-5);
  CHECK(loss.item() >= 0.0);
}

TEST_CASE("bce closed form at p = 0.5 with one positive in 256") {
  SampleAssignment a = assign_samples(16, 16, norm_box(0.5 - 0.5 / 16, 0.5 - 0.5 / 16, 0.01, 0.01));
  REQUIRE(a.positive_indices.size() == 1);
  Tensor scores = Tensor::full({1, 256}, 0.5);
  Tensor loss = bce_weighted(scores, a, LossWeights{});
  const double expected = std::log(2.0) * (1.0 + 255.0 / 16.0) / 256.0;
  CHECK(loss.item() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("doubling the negative weight doubles the negative contribution") {
  SampleAssignment a = assign_samples(4, 4, norm_box(0.125, 0.125, 0.25, 0.25));
  REQUIRE(a.positive_indices.size() == 1);
  Rng rng(3);
  Tensor scores = Tensor::zeros({1, 16});
  for (auto& v : scores.values()) v = rng.uniform(0.1, 0.9);

  LossWeights w1;
  w1.neg_class_scale = 1.0 / 16;
  LossWeights w2;
  w2.neg_class_scale = 2.0 / 16;
  LossWeights w0;
  w0.neg_class_scale = 0.0;
  const double base = bce_weighted(scores, a, w1).item();
  const double doubled = bce_weighted(scores, a, w2).item();
  const double pos_only = bce_weighted(scores, a, w0).item();
  CHECK(doubled - pos_only == doctest::Approx(2.0 * (base - pos_only)).epsilon(1e-12));
}

TEST_CASE("bce gradient sign: decreasing in p for positives, increasing for negatives") {
  SampleAssignment a = assign_samples(2, 2, norm_box(0.25, 0.25, 0.5, 0.5));
  Tensor scores = Tensor::full({1, 4}, 0.5);
  scores.set_requires_grad(true);
  GradTape tape;
  Tensor loss = bce_weighted(scores, a, LossWeights{});
  backward(loss, tape);
  for (int j = 0; j < 4; ++j) {
    if (a.positive[j])
      CHECK(scores.grad()[j] < 0.0);
    else
      CHECK(scores.grad()[j] > 0.0);
  }
}

TEST_CASE("giou hand-checked values") {
  CHECK(giou(from_corners(0, 0, 2, 2), from_corners(0, 0, 2, 2)) == 1.0);
  // Disjoint along x: IoU 0, union 2, hull 3.
  CHECK(giou(from_corners(0, 0, 1, 1), from_corners(2, 0, 3, 1)) ==
        doctest::Approx(-1.0 / 3.0).epsilon(1e-12));
  // Nested: hull equals the outer box, so GIoU reduces to IoU.
  const BBox outer = from_corners(0, 0, 4, 4), inner = from_corners(1, 1, 2, 2);
  CHECK(giou(outer, inner) == doctest::Approx(iou(outer, inner)).epsilon(1e-12));
  CHECK(giou(from_corners(0, 0, 0, 0), from_corners(1, 1, 1, 1)) == 0.0);
}

TEST_CASE("giou properties against the cell-enumeration oracle") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int ax1 = static_cast<int>(rng.below(10)), ay1 = static_cast<int>(rng.below(10));
    const int bx1 = static_cast<int>(rng.below(10)), by1 = static_cast<int>(rng.below(10));
    const int ax2 = ax1 + 1 + static_cast<int>(rng.below(8));
    const int ay2 = ay1 + 1 + static_cast<int>(rng.below(8));
    const int bx2 = bx1 + 1 + static_cast<int>(rng.below(8));
    const int by2 = by1 + 1 + static_cast<int>(rng.below(8));
    const BBox a = from_corners(ax1, ay1, ax2, ay2);
    const BBox b = from_corners(bx1, by1, bx2, by2);

    const double got = giou(a, b);
    const double oracle = giou_brute_force(ax1, ay1, ax2, ay2, bx1, by1, bx2, by2);
    CHECK(std::abs(got - oracle) <= 1e-12);
    CHECK(giou(b, a) == got);                 // symmetry
    CHECK(got <= iou(a, b) + 1e-12);          // giou <= iou
    CHECK(got > -1.0);
    CHECK(got <= 1.0);
  }
}

TEST_CASE("total loss without positives is the classification term exactly") {
  SampleAssignment a = assign_samples(4, 4, norm_box(0.5, 0.5, 0.0, 0.0));
  Rng rng(9);
  std::vector<double> scores(16), boxes(64);
  for (auto& v : scores) v = rng.uniform(0.1, 0.9);
  for (auto& v : boxes) v = rng.uniform(0.1, 0.9);
  HeadOutput pred = make_pred(scores, boxes, 4, 4);

  LossBreakdown parts;
  Tensor loss = total_loss(pred, a, LossWeights{}, &parts);
  CHECK(parts.l1 == 0.0);
  CHECK(parts.giou_penalty == 0.0);
  CHECK(loss.item() == parts.classification);
}

TEST_CASE("exact regression on positives zeroes the regression terms") {
  const BBox gt = norm_box(0.5, 0.5, 0.4, 0.4);
  SampleAssignment a = assign_samples(4, 4, gt);
  REQUIRE_FALSE(a.positive_indices.empty());
  std::vector<double> scores(16, 0.5), boxes(64);
  for (int j = 0; j < 16; ++j) {
    boxes[0 * 16 + j] = gt.cx;
    boxes[1 * 16 + j] = gt.cy;
    boxes[2 * 16 + j] = gt.w;
    boxes[3 * 16 + j] = gt.h;
  }
  LossBreakdown parts;
  total_loss(make_pred(scores, boxes, 4, 4), a, LossWeights{}, &parts);
  CHECK(parts.l1 == 0.0);
  CHECK(parts.giou_penalty == 0.0);
  CHECK(parts.classification > 0.0);
}

TEST_CASE("total loss is nonnegative under nonnegative weights") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const BBox gt = norm_box(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8),
                             rng.uniform(0.0, 0.5), rng.uniform(0.0, 0.5));
    SampleAssignment a = assign_samples(4, 4, gt);
    std::vector<double> scores(16), boxes(64);
    for (auto& v : scores) v = rng.uniform(0.01, 0.99);
    for (auto& v : boxes) v = rng.uniform(0.01, 0.99);
    Tensor loss = total_loss(make_pred(scores, boxes, 4, 4), a, LossWeights{});
    CHECK(loss.item() >= 0.0);
  }
}

TEST_CASE("total loss gradient w.r.t. raw head outputs passes finite differences") {
  const BBox gt = norm_box(0.45, 0.55, 0.35, 0.3);
  SampleAssignment a = assign_samples(3, 3, gt);
  REQUIRE_FALSE(a.positive_indices.empty());

  Rng rng(13);
  Tensor logits_box = Tensor::zeros({4, 9}, true);
  Tensor logits_cls = Tensor::zeros({1, 9}, true);
  for (auto& v : logits_box.values()) v = rng.uniform(-1, 1);
  for (auto& v : logits_cls.values()) v = rng.uniform(-1, 1);

  auto f = [&]() {
    HeadOutput pred;
    pred.boxes = sigmoid(logits_box);
    pred.scores = sigmoid(logits_cls);
    pred.grid_h = pred.grid_w = 3;
    return total_loss(pred, a, LossWeights{});
  };
  CHECK(finite_diff_check(f, logits_box, 1e-5, 1e-4).pass);
  CHECK(finite_diff_check(f, logits_cls, 1e-5, 1e-4).pass);
}
