#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "hcat/common.hpp"
#include "hcat/rng.hpp"

namespace hcat {

// Dense tensor with reverse-mode autodiff.
//
// A Tensor is a shared handle to contiguous row-major 64-bit float storage.
// While a GradTape is alive on the current thread, every differentiable op
// whose inputs require gradients appends a record; backward(loss, tape)
// replays the records in reverse and accumulates into each tensor's grad
// buffer. A tape is consumed by exactly one backward pass. Tapes and the
// tensors recorded on them belong to a single thread; independent models on
// independent threads each use their own tape.

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorData {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until backward touches this tensor
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return data_->shape; }
  int ndim() const { return static_cast<int>(data_->shape.size()); }
  int dim(int i) const { return data_->shape[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(data_->values.size()); }
  // 2D conveniences.
  int rows() const;
  int cols() const;

  std::vector<double>& values() { return data_->values; }
  const std::vector<double>& values() const { return data_->values; }
  double item() const;  // scalar tensors only

  bool requires_grad() const { return data_->requires_grad; }
  void set_requires_grad(bool rg) { data_->requires_grad = rg; }

  bool has_grad() const { return data_ && !data_->grad.empty(); }
  std::vector<double>& grad();              // allocates zeros on first use
  const std::vector<double>& grad() const;  // throws if absent
  void zero_grad();                         // drops the grad buffer

  // Identity of the underlying storage; used for tape bookkeeping.
  const TensorData* node() const { return data_.get(); }

 private:
  std::shared_ptr<TensorData> data_;
};

class GradTape {
 public:
  // Constructing a tape makes it the active tape for this thread; the
  // destructor restores the previous one. Nest in stack order only.
  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active();

  // Appends one executed op. `backprop` reads the output's grad and
  // accumulates into the inputs' grads; inputs are captured inside it.
  // Public so tests can record custom nodes.
  void record_node(Tensor output, std::function<void()> backprop);

  bool consumed() const { return consumed_; }
  size_t node_count() const { return nodes_.size(); }

  friend void backward(const Tensor& loss, GradTape& tape);

 private:
  struct Node {
    Tensor output;
    std::function<void()> backprop;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
  GradTape* prev_ = nullptr;
};

// Temporarily disables tape recording on this thread. Used by evaluation
// paths that run while a training tape is alive.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  GradTape* saved_;
};

// Counts scalar multiply-adds performed by matmul (and ops built on it).
// This is the measurement side of the analytic cost accounting.
struct MacCounter {
  static void reset();
  static uint64_t count();
};

// ---------------------------------------------------------------------------
// Op set. All ops run eagerly; they record on the active tape only when some
// input requires a gradient. Inputs to matmul and softmax are checked finite
// (those are where blowups surface first).
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor transpose(const Tensor& a);                // 2D

Tensor add(const Tensor& a, const Tensor& b);      // same shape
Tensor add_col(const Tensor& a, const Tensor& b);  // [m,n] + [m,1] broadcast
Tensor sub(const Tensor& a, const Tensor& b);      // same shape
Tensor mul(const Tensor& a, const Tensor& b);      // elementwise, same shape
Tensor divide(const Tensor& a, const Tensor& b);   // elementwise, same shape
Tensor minimum(const Tensor& a, const Tensor& b);  // ties route grad to a
Tensor maximum(const Tensor& a, const Tensor& b);  // ties route grad to a

Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);

Tensor relu(const Tensor& a);  // subgradient at 0 is 0
Tensor sigmoid(const Tensor& a);
Tensor log(const Tensor& a);  // requires strictly positive input
Tensor clamp(const Tensor& a, double lo, double hi);  // zero grad outside

// Softmax along `axis` of a 1D or 2D tensor, computed with a max shift so
// arbitrarily large finite inputs cannot overflow.
Tensor softmax(const Tensor& a, int axis);

Tensor reshape(const Tensor& a, Shape shape);
Tensor sum(const Tensor& a);   // -> scalar
Tensor mean(const Tensor& a);  // -> scalar

Tensor slice_rows(const Tensor& a, int row_begin, int row_end);   // 2D
Tensor select_cols(const Tensor& a, const std::vector<int>& idx); // 2D gather
Tensor concat_rows(const std::vector<Tensor>& parts);             // 2D stack

// Unfolds [c,h,w] into [(c*k*k), (ho*wo)] patches for strided convolution;
// out-of-bounds taps read zero. ho = floor((h + 2*pad - k)/stride) + 1.
Tensor im2col(const Tensor& image, int kernel, int stride, int pad);

// Normalizes each column to zero mean / unit variance over the rows
// (no learned affine part).
Tensor layer_norm_cols(const Tensor& a, double eps = 1e-5);

// |x| built from relu(x) + relu(-x); subgradient at 0 is 0.
Tensor abs_val(const Tensor& a);

// Uniform Xavier/Glorot init over +/- sqrt(6/(fan_in+fan_out)); deterministic
// per seed. Shapes need >= 2 dims; trailing dims count as receptive field.
Tensor xavier_init(const Shape& shape, Rng& rng);
Tensor xavier_init(const Shape& shape, uint64_t seed);

// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. The loss must be
// a scalar produced on this tape; a tape can be consumed only once.
void backward(const Tensor& loss, GradTape& tape);

// ---------------------------------------------------------------------------
// Gradient verification harness.
// ---------------------------------------------------------------------------

struct FiniteDiffReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  int64_t worst_index = -1;
  bool pass = false;
  int64_t evals = 0;
};

// Compares the tape gradient of `forward()` w.r.t. `param` against central
// finite differences, perturbing one coordinate at a time. `forward` must
// rebuild its computation from `param`'s current values on every call and be
// deterministic (verified by a repeated evaluation). The error metric is
// |analytic - numeric| / max(1, |analytic|, |numeric|): relative for large
// gradients, absolute below 1.
FiniteDiffReport finite_diff_check(const std::function<Tensor()>& forward,
                                   Tensor param, double step, double tol);

}  // namespace hcat
