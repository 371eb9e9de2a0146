#include "hcat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace hcat {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    out += std::to_string(s[i]);
    if (i + 1 < s.size()) out += "x";
  }
  return out + "]";
}

namespace {

std::shared_ptr<TensorData> make_data(Shape shape) {
  for (int d : shape) check(d > 0, "tensor extent must be positive, got shape ", shape_str(shape));
  auto data = std::make_shared<TensorData>();
  data->values.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  data->shape = std::move(shape);
  return data;
}

thread_local GradTape* g_active_tape = nullptr;
thread_local uint64_t g_mac_count = 0;

bool tape_should_record(std::initializer_list<const Tensor*> inputs) {
  if (!g_active_tape) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

void ensure_finite(const Tensor& t, const char* op) {
  for (double v : t.values())
    check(std::isfinite(v), op, ": non-finite input value ", v);
}

// Shared guts for structurally identical ops.
struct BackpropGuard {
  // Skips nodes whose output grad never got populated (dead branches).
  static bool live(const Tensor& out) { return out.has_grad(); }
};

}  // namespace

// --------------------------------------------------------------------------
// Tensor
// --------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t;
  t.data_ = make_data(std::move(shape));
  t.data_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.values().begin(), t.values().end(), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check(shape_numel(shape) == static_cast<int64_t>(values.size()),
        "tensor init: shape ", shape_str(shape), " needs ", shape_numel(shape),
        " values, got ", values.size());
  Tensor t = zeros(std::move(shape), requires_grad);
  t.values() = std::move(values);
  return t;
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

int Tensor::rows() const {
  check(ndim() == 2, "rows(): tensor is ", shape_str(shape()), ", not 2D");
  return dim(0);
}

int Tensor::cols() const {
  check(ndim() == 2, "cols(): tensor is ", shape_str(shape()), ", not 2D");
  return dim(1);
}

double Tensor::item() const {
  check(size() == 1, "item(): tensor has ", size(), " elements");
  return values()[0];
}

std::vector<double>& Tensor::grad() {
  check(defined(), "grad(): undefined tensor");
  if (data_->grad.empty()) data_->grad.assign(data_->values.size(), 0.0);
  return data_->grad;
}

const std::vector<double>& Tensor::grad() const {
  check(has_grad(), "grad(): no gradient present");
  return data_->grad;
}

void Tensor::zero_grad() {
  if (data_) data_->grad.clear();
}

// --------------------------------------------------------------------------
// GradTape
// --------------------------------------------------------------------------

GradTape::GradTape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

GradTape::~GradTape() { g_active_tape = prev_; }

GradTape* GradTape::active() { return g_active_tape; }

void GradTape::record_node(Tensor output, std::function<void()> backprop) {
  check(!consumed_, "GradTape: recording on a consumed tape");
  output.set_requires_grad(true);
  nodes_.push_back({std::move(output), std::move(backprop)});
}

void backward(const Tensor& loss, GradTape& tape) {
  check(loss.defined() && loss.size() == 1,
        "backward: loss must be a scalar, got ",
        loss.defined() ? shape_str(loss.shape()) : "undefined");
  check(!tape.consumed_, "backward: tape already consumed");
  check(std::isfinite(loss.item()), "backward: loss is non-finite (", loss.item(), ")");
  bool on_tape = false;
  for (const auto& node : tape.nodes_)
    if (node.output.node() == loss.node()) { on_tape = true; break; }
  check(on_tape, "backward: loss was not produced on this tape");

  Tensor seed = loss;
  seed.grad()[0] = 1.0;
  for (auto it = tape.nodes_.rbegin(); it != tape.nodes_.rend(); ++it)
    if (it->output.has_grad()) it->backprop();
  tape.consumed_ = true;
  tape.nodes_.clear();
}

NoGradScope::NoGradScope() : saved_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = saved_; }

void MacCounter::reset() { g_mac_count = 0; }
uint64_t MacCounter::count() { return g_mac_count; }

// --------------------------------------------------------------------------
// Ops
// --------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.defined() && b.defined(), "matmul: undefined input");
  check(a.ndim() == 2 && b.ndim() == 2, "matmul: inputs must be 2D, got ",
        shape_str(a.shape()), " and ", shape_str(b.shape()));
  check(a.cols() == b.rows(), "matmul: shape mismatch ", shape_str(a.shape()),
        " x ", shape_str(b.shape()));
  ensure_finite(a, "matmul");
  ensure_finite(b, "matmul");

  const int m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::zeros({m, n});
  const double* A = a.values().data();
  const double* B = b.values().data();
  double* C = out.values().data();
  for (int i = 0; i < m; ++i) {
    const double* Arow = A + static_cast<size_t>(i) * k;
    double* Crow = C + static_cast<size_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      const double av = Arow[l];
      const double* Brow = B + static_cast<size_t>(l) * n;
      for (int j = 0; j < n; ++j) Crow[j] += av * Brow[j];
    }
  }
  g_mac_count += static_cast<uint64_t>(m) * k * n;

  if (tape_should_record({&a, &b})) {
    GradTape::active()->record_node(out, [a = a, b = b, out = out]() mutable {
      const int m = a.rows(), k = a.cols(), n = b.cols();
      const double* G = out.grad().data();
      if (a.requires_grad()) {
        double* dA = a.grad().data();
        const double* B = b.values().data();
        for (int i = 0; i < m; ++i) {
          const double* Grow = G + static_cast<size_t>(i) * n;
          double* dArow = dA + static_cast<size_t>(i) * k;
          for (int l = 0; l < k; ++l) {
            const double* Brow = B + static_cast<size_t>(l) * n;
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += Grow[j] * Brow[j];
            dArow[l] += acc;
          }
        }
      }
      if (b.requires_grad()) {
        double* dB = b.grad().data();
        const double* A = a.values().data();
        for (int i = 0; i < m; ++i) {
          const double* Arow = A + static_cast<size_t>(i) * k;
          const double* Grow = G + static_cast<size_t>(i) * n;
          for (int l = 0; l < k; ++l) {
            const double av = Arow[l];
            double* dBrow = dB + static_cast<size_t>(l) * n;
            for (int j = 0; j < n; ++j) dBrow[j] += av * Grow[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  check(a.defined() && a.ndim() == 2, "transpose: input must be 2D");
  const int m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros({n, m});
  const double* A = a.values().data();
  double* B = out.values().data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) B[static_cast<size_t>(j) * m + i] = A[static_cast<size_t>(i) * n + j];

  if (tape_should_record({&a})) {
    GradTape::active()->record_node(out, [a = a, out = out]() mutable {
      if (!a.requires_grad()) return;
      const int m = a.rows(), n = a.cols();
      const double* G = out.grad().data();
      double* dA = a.grad().data();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          dA[static_cast<size_t>(i) * n + j] += G[static_cast<size_t>(j) * m + i];
    });
  }
  return out;
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  check(a.defined() && b.defined(), op, ": undefined input");
  check(a.shape() == b.shape(), op, ": shape mismatch ", shape_str(a.shape()),
        " vs ", shape_str(b.shape()));
}

// Elementwise binary op with per-element partials captured as closures.
template <class Fwd, class DA, class DB>
Tensor elementwise_binary(const Tensor& a, const Tensor& b, const char* op,
                          Fwd fwd, DA da_of, DB db_of) {
  check_same_shape(a, b, op);
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i], bv[i]);

  if (tape_should_record({&a, &b})) {
    GradTape::active()->record_node(out, [a = a, b = b, out = out, da_of, db_of]() mutable {
      const auto& g = out.grad();
      const auto& av = a.values();
      const auto& bv = b.values();
      if (a.requires_grad()) {
        auto& da = a.grad();
        for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * da_of(av[i], bv[i]);
      }
      if (b.requires_grad()) {
        auto& db = b.grad();
        for (size_t i = 0; i < g.size(); ++i) db[i] += g[i] * db_of(av[i], bv[i]);
      }
    });
  }
  return out;
}

template <class Fwd, class Deriv>
Tensor elementwise_unary(const Tensor& a, const char* op, Fwd fwd, Deriv deriv) {
  check(a.defined(), op, ": undefined input");
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.values();
  auto& ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i]);

  if (tape_should_record({&a})) {
    GradTape::active()->record_node(out, [a = a, out = out, deriv]() mutable {
      if (!a.requires_grad()) return;
      const auto& g = out.grad();
      const auto& av = a.values();
      auto& da = a.grad();
      for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * deriv(av[i]);
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise_binary(a, b, "add",
                            [](double x, double y) { return x + y; },
                            [](double, double) { return 1.0; },
                            [](double, double) { return 1.0; });
}

Tensor add_col(const Tensor& a, const Tensor& b) {
  check(a.defined() && b.defined(), "add_col: undefined input");
  check(a.ndim() == 2 && b.ndim() == 2 && b.cols() == 1 && b.rows() == a.rows(),
        "add_col: need [m,n] + [m,1], got ", shape_str(a.shape()), " and ",
        shape_str(b.shape()));
  const int m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros({m, n});
  const double* A = a.values().data();
  const double* B = b.values().data();
  double* O = out.values().data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) O[static_cast<size_t>(i) * n + j] = A[static_cast<size_t>(i) * n + j] + B[i];

  if (tape_should_record({&a, &b})) {
    GradTape::active()->record_node(out, [a = a, b = b, out = out]() mutable {
      const int m = a.rows(), n = a.cols();
      const double* G = out.grad().data();
      if (a.requires_grad()) {
        double* dA = a.grad().data();
        for (size_t i = 0; i < static_cast<size_t>(m) * n; ++i) dA[i] += G[i];
      }
      if (b.requires_grad()) {
        double* dB = b.grad().data();
        for (int i = 0; i < m; ++i) {
          double acc = 0.0;
          for (int j = 0; j < n; ++j) acc += G[static_cast<size_t>(i) * n + j];
          dB[i] += acc;
        }
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise_binary(a, b, "sub",
                            [](double x, double y) { return x - y; },
                            [](double, double) { return 1.0; },
                            [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise_binary(a, b, "mul",
                            [](double x, double y) { return x * y; },
                            [](double, double y) { return y; },
                            [](double x, double) { return x; });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  for (double v : b.values())
    check(v != 0.0, "divide: zero denominator");
  return elementwise_binary(a, b, "divide",
                            [](double x, double y) { return x / y; },
                            [](double, double y) { return 1.0 / y; },
                            [](double x, double y) { return -x / (y * y); });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  return elementwise_binary(a, b, "minimum",
                            [](double x, double y) { return x <= y ? x : y; },
                            [](double x, double y) { return x <= y ? 1.0 : 0.0; },
                            [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return elementwise_binary(a, b, "maximum",
                            [](double x, double y) { return x >= y ? x : y; },
                            [](double x, double y) { return x >= y ? 1.0 : 0.0; },
                            [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

Tensor scale(const Tensor& a, double c) {
  return elementwise_unary(a, "scale",
                           [c](double x) { return c * x; },
                           [c](double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return elementwise_unary(a, "add_scalar",
                           [c](double x) { return x + c; },
                           [](double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor relu(const Tensor& a) {
  return elementwise_unary(a, "relu",
                           [](double x) { return x > 0.0 ? x : 0.0; },
                           [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  auto fwd = [](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  };
  return elementwise_unary(a, "sigmoid", fwd, [fwd](double x) {
    const double s = fwd(x);
    return s * (1.0 - s);
  });
}

Tensor log(const Tensor& a) {
  for (double v : a.values())
    check(v > 0.0, "log: input must be strictly positive, got ", v);
  return elementwise_unary(a, "log",
                           [](double x) { return std::log(x); },
                           [](double x) { return 1.0 / x; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  check(lo <= hi, "clamp: lo > hi");
  return elementwise_unary(a, "clamp",
                           [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
                           [lo, hi](double x) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor softmax(const Tensor& a, int axis) {
  check(a.defined(), "softmax: undefined input");
  check(a.ndim() == 1 || a.ndim() == 2, "softmax: input must be 1D or 2D");
  ensure_finite(a, "softmax");
  const bool vec = a.ndim() == 1;
  check(axis >= 0 && axis < (vec ? 1 : 2), "softmax: invalid axis ", axis,
        " for shape ", shape_str(a.shape()));

  // View as [slices, len] where softmax runs along len.
  const int rows = vec ? 1 : a.dim(0);
  const int cols = vec ? a.dim(0) : a.dim(1);
  const bool along_cols = vec || axis == 1;
  const int n_slices = along_cols ? rows : cols;
  const int len = along_cols ? cols : rows;
  auto at = [&](const double* base, int s, int i) -> double {
    return along_cols ? base[static_cast<size_t>(s) * cols + i]
                      : base[static_cast<size_t>(i) * cols + s];
  };
  auto put = [&](double* base, int s, int i, double v) {
    (along_cols ? base[static_cast<size_t>(s) * cols + i]
                : base[static_cast<size_t>(i) * cols + s]) = v;
  };

  Tensor out = Tensor::zeros(a.shape());
  const double* A = a.values().data();
  double* O = out.values().data();
  for (int s = 0; s < n_slices; ++s) {
    double mx = at(A, s, 0);
    for (int i = 1; i < len; ++i) mx = std::max(mx, at(A, s, i));
    double total = 0.0;
    for (int i = 0; i < len; ++i) {
      const double e = std::exp(at(A, s, i) - mx);
      put(O, s, i, e);
      total += e;
    }
    for (int i = 0; i < len; ++i) put(O, s, i, at(O, s, i) / total);
  }

  if (tape_should_record({&a})) {
    GradTape::active()->record_node(out, [a = a, out = out, along_cols, n_slices, len, cols]() mutable {
      if (!a.requires_grad()) return;
      auto idx = [&](int s, int i) -> size_t {
        return along_cols ? static_cast<size_t>(s) * cols + i
                          : static_cast<size_t>(i) * cols + s;
      };
      const double* Y = out.values().data();
      const double* G = out.grad().data();
      double* dA = a.grad().data();
      for (int s = 0; s < n_slices; ++s) {
        double dot = 0.0;
        for (int i = 0; i < len; ++i) dot += G[idx(s, i)] * Y[idx(s, i)];
        for (int i = 0; i < len; ++i)
          dA[idx(s, i)] += Y[idx(s, i)] * (G[idx(s, i)] - dot);
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  check(a.defined(), "reshape: undefined input");
  check(shape_numel(shape) == a.size(), "reshape: ", shape_str(a.shape()),
        " has ", a.size(), " elements, target ", shape_str(shape), " has ",
        shape_numel(shape));
  Tensor out = Tensor::from(std::move(shape), a.values());
  if (tape_should_record({&a})) {
    GradTape::active()->record_node(out, [a = a, out = out]() mutable {
      if (!a.requires_grad()) return;
      const auto& g = out.grad();
      auto& da = a.grad();
      for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    });
  }
  return out;
}

namespace {

Tensor reduce(const Tensor& a, const char* op, double denom) {
  check(a.defined(), op, ": undefined input");
  double total = 0.0;
  for (double v : a.values()) total += v;
  Tensor out = Tensor::scalar(total / denom);
  if (tape_should_record({&a})) {
    GradTape::active()->record_node(out, [a = a, out = out, denom]() mutable {
      if (!a.requires_grad()) return;
      const double g = out.grad()[0] / denom;
      auto& da = a.grad();
      for (size_t i = 0; i < da.size(); ++i) da[i] += g;
    });
  }
  return out;
}

}  // namespace

Tensor sum(const Tensor& a) { return reduce(a, "sum", 1.0); }

Tensor mean(const Tensor& a) {
  return reduce(a, "mean", static_cast<double>(a.size()));
}

Tensor slice_rows(const Tensor& a, int row_begin, int row_end) {
  check(a.defined() && a.ndim() == 2, "slice_rows: input must be 2D");
  check(0 <= row_begin && row_begin < row_end && row_end <= a.rows(),
        "slice_rows: bad range [", row_begin, ",", row_end, ") for ",
        shape_str(a.shape()));
  const int n = a.cols(), m = row_end - row_begin;
  Tensor out = Tensor::zeros({m, n});
  std::copy_n(a.values().data() + static_cast<size_t>(row_begin) * n,
              static_cast<size_t>(m) * n, out.values().data());
  if (tape_should_record({&a})) {
    GradTape::active()->record_node(out, [a = a, out = out, row_begin]() mutable {
      if (!a.requires_grad()) return;
      const int n = a.cols();
      const auto& g = out.grad();
      double* da = a.grad().data() + static_cast<size_t>(row_begin) * n;
      for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    });
  }
  return out;
}

Tensor select_cols(const Tensor& a, const std::vector<int>& idx) {
  check(a.defined() && a.ndim() == 2, "select_cols: input must be 2D");
  check(!idx.empty(), "select_cols: empty index set");
  const int m = a.rows(), n = a.cols();
  for (int j : idx) check(0 <= j && j < n, "select_cols: index ", j, " out of range for ", n, " columns");
  const int p = static_cast<int>(idx.size());
  Tensor out = Tensor::zeros({m, p});
  const double* A = a.values().data();
  double* O = out.values().data();
  for (int i = 0; i < m; ++i)
    for (int c = 0; c < p; ++c)
      O[static_cast<size_t>(i) * p + c] = A[static_cast<size_t>(i) * n + idx[c]];
  if (tape_should_record({&a})) {
    GradTape::active()->record_node(out, [a = a, out = out, idx]() mutable {
      if (!a.requires_grad()) return;
      const int m = a.rows(), n = a.cols(), p = static_cast<int>(idx.size());
      const double* G = out.grad().data();
      double* dA = a.grad().data();
      for (int i = 0; i < m; ++i)
        for (int c = 0; c < p; ++c)
          dA[static_cast<size_t>(i) * n + idx[c]] += G[static_cast<size_t>(i) * p + c];
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_rows: no inputs");
  const int n = parts[0].cols();
  int m = 0;
  for (const auto& p : parts) {
    check(p.defined() && p.ndim() == 2, "concat_rows: inputs must be 2D");
    check(p.cols() == n, "concat_rows: column mismatch ", p.cols(), " vs ", n);
    m += p.rows();
  }
  Tensor out = Tensor::zeros({m, n});
  double* O = out.values().data();
  size_t offset = 0;
  for (const auto& p : parts) {
    std::copy_n(p.values().data(), p.values().size(), O + offset);
    offset += p.values().size();
  }
  bool rec = false;
  for (const auto& p : parts)
    if (p.requires_grad()) rec = true;
  if (g_active_tape != nullptr && rec) {
    GradTape::active()->record_node(out, [parts = parts, out = out]() mutable {
      const auto& g = out.grad();
      size_t offset = 0;
      for (auto& p : parts) {
        if (p.requires_grad()) {
          auto& dp = p.grad();
          for (size_t i = 0; i < dp.size(); ++i) dp[i] += g[offset + i];
        }
        offset += p.values().size();
      }
    });
  }
  return out;
}

Tensor im2col(const Tensor& image, int kernel, int stride, int pad) {
  check(image.defined() && image.ndim() == 3, "im2col: input must be [c,h,w]");
  check(kernel >= 1 && stride >= 1 && pad >= 0, "im2col: bad kernel/stride/pad");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const int ho = (h + 2 * pad - kernel) / stride + 1;
  const int wo = (w + 2 * pad - kernel) / stride + 1;
  check(ho >= 1 && wo >= 1, "im2col: kernel ", kernel, " too large for ", h, "x", w);

  const int patch = c * kernel * kernel;
  const int cols = ho * wo;
  Tensor out = Tensor::zeros({patch, cols});
  const double* X = image.values().data();
  double* O = out.values().data();
  for (int ch = 0; ch < c; ++ch)
    for (int ky = 0; ky < kernel; ++ky)
      for (int kx = 0; kx < kernel; ++kx) {
        const int row = (ch * kernel + ky) * kernel + kx;
        double* Orow = O + static_cast<size_t>(row) * cols;
        for (int oy = 0; oy < ho; ++oy) {
          const int sy = oy * stride - pad + ky;
          for (int ox = 0; ox < wo; ++ox) {
            const int sx = ox * stride - pad + kx;
            const bool inside = sy >= 0 && sy < h && sx >= 0 && sx < w;
            Orow[oy * wo + ox] =
                inside ? X[(static_cast<size_t>(ch) * h + sy) * w + sx] : 0.0;
          }
        }
      }

  if (tape_should_record({&image})) {
    GradTape::active()->record_node(out, [image = image, out = out, kernel, stride, pad, ho, wo]() mutable {
      if (!image.requires_grad()) return;
      const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
      const int cols = ho * wo;
      const double* G = out.grad().data();
      double* dX = image.grad().data();
      for (int ch = 0; ch < c; ++ch)
        for (int ky = 0; ky < kernel; ++ky)
          for (int kx = 0; kx < kernel; ++kx) {
            const int row = (ch * kernel + ky) * kernel + kx;
            const double* Grow = G + static_cast<size_t>(row) * cols;
            for (int oy = 0; oy < ho; ++oy) {
              const int sy = oy * stride - pad + ky;
              if (sy < 0 || sy >= h) continue;
              for (int ox = 0; ox < wo; ++ox) {
                const int sx = ox * stride - pad + kx;
                if (sx < 0 || sx >= w) continue;
                dX[(static_cast<size_t>(ch) * h + sy) * w + sx] += Grow[oy * wo + ox];
              }
            }
          }
    });
  }
  return out;
}

Tensor layer_norm_cols(const Tensor& a, double eps) {
  check(a.defined() && a.ndim() == 2, "layer_norm_cols: input must be 2D");
  const int m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros({m, n});
  std::vector<double> inv_std(n);
  const double* A = a.values().data();
  double* O = out.values().data();
  for (int j = 0; j < n; ++j) {
    double mu = 0.0;
    for (int i = 0; i < m; ++i) mu += A[static_cast<size_t>(i) * n + j];
    mu /= m;
    double var = 0.0;
    for (int i = 0; i < m; ++i) {
      const double d = A[static_cast<size_t>(i) * n + j] - mu;
      var += d * d;
    }
    var /= m;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[j] = is;
    for (int i = 0; i < m; ++i)
      O[static_cast<size_t>(i) * n + j] = (A[static_cast<size_t>(i) * n + j] - mu) * is;
  }

  if (tape_should_record({&a})) {
    GradTape::active()->record_node(out, [a = a, out = out, inv_std]() mutable {
      if (!a.requires_grad()) return;
      const int m = a.rows(), n = a.cols();
      const double* Y = out.values().data();
      const double* G = out.grad().data();
      double* dA = a.grad().data();
      for (int j = 0; j < n; ++j) {
        double g_mean = 0.0, gy_mean = 0.0;
        for (int i = 0; i < m; ++i) {
          const size_t ix = static_cast<size_t>(i) * n + j;
          g_mean += G[ix];
          gy_mean += G[ix] * Y[ix];
        }
        g_mean /= m;
        gy_mean /= m;
        for (int i = 0; i < m; ++i) {
          const size_t ix = static_cast<size_t>(i) * n + j;
          dA[ix] += inv_std[j] * (G[ix] - g_mean - Y[ix] * gy_mean);
        }
      }
    });
  }
  return out;
}

Tensor abs_val(const Tensor& a) { return add(relu(a), relu(neg(a))); }

Tensor xavier_init(const Shape& shape, Rng& rng) {
  check(shape.size() >= 2, "xavier_init: shape needs >= 2 dims, got ",
        shape_str(shape));
  int64_t receptive = 1;
  for (size_t i = 2; i < shape.size(); ++i) receptive *= shape[i];
  const double fan_out = static_cast<double>(shape[0]) * receptive;
  const double fan_in = static_cast<double>(shape[1]) * receptive;
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor t = Tensor::zeros(shape);
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor xavier_init(const Shape& shape, uint64_t seed) {
  Rng rng(seed);
  return xavier_init(shape, rng);
}

// --------------------------------------------------------------------------
// Finite-difference verification
// --------------------------------------------------------------------------

FiniteDiffReport finite_diff_check(const std::function<Tensor()>& forward,
                                   Tensor param, double step, double tol) {
  check(param.defined(), "finite_diff_check: undefined parameter");
  check(step > 0.0, "finite_diff_check: step must be positive");

  auto eval = [&]() -> double {
    NoGradScope no_grad;
    Tensor out = forward();
    check(out.defined() && out.size() == 1,
          "finite_diff_check: forward() must return a scalar");
    return out.item();
  };

  FiniteDiffReport report;
  const double probe1 = eval();
  const double probe2 = eval();
  report.evals = 2;
  check(probe1 == probe2,
        "finite_diff_check: forward() is not deterministic (", probe1, " vs ",
        probe2, ")");

  // Analytic gradient through one tape.
  std::vector<double> analytic;
  {
    const bool was_rg = param.requires_grad();
    param.set_requires_grad(true);
    param.zero_grad();
    GradTape tape;
    Tensor out = forward();
    check(out.defined() && out.size() == 1,
          "finite_diff_check: forward() must return a scalar");
    backward(out, tape);
    analytic = param.has_grad()
                   ? param.grad()
                   : std::vector<double>(param.values().size(), 0.0);
    param.zero_grad();
    param.set_requires_grad(was_rg);
  }

  auto& vals = param.values();
  for (size_t i = 0; i < vals.size(); ++i) {
    const double keep = vals[i];
    vals[i] = keep + step;
    const double up = eval();
    vals[i] = keep - step;
    const double down = eval();
    vals[i] = keep;
    report.evals += 2;

    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic[i];
    const double abs_err = std::abs(a - numeric);
    const double rel_err =
        abs_err / std::max({1.0, std::abs(a), std::abs(numeric)});
    if (rel_err > report.max_rel_err) {
      report.max_rel_err = rel_err;
      report.worst_index = static_cast<int64_t>(i);
    }
    report.max_abs_err = std::max(report.max_abs_err, abs_err);
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace hcat
