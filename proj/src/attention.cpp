#include "hcat/attention.hpp"

#include <cmath>

namespace hcat {

PosEncoding sine_pos_encoding_2d(int grid_h, int grid_w, int channels) {
  check(grid_h >= 1 && grid_w >= 1, "pos encoding: grid must be positive, got ",
        grid_h, "x", grid_w);
  check(channels % 4 == 0, "pos encoding: channels must be divisible by 4, got ",
        channels);

  const int half = channels / 2;
  const int pairs = half / 2;
  const double two_pi = 2.0 * M_PI;

  PosEncoding enc;
  enc.grid_h = grid_h;
  enc.grid_w = grid_w;
  enc.channels = channels;
  enc.codes = Tensor::zeros({channels, grid_h * grid_w});
  double* out = enc.codes.values().data();
  const int n = grid_h * grid_w;

  for (int y = 0; y < grid_h; ++y) {
    const double py = two_pi * static_cast<double>(y) / grid_h;
    for (int x = 0; x < grid_w; ++x) {
      const double px = two_pi * static_cast<double>(x) / grid_w;
      const int col = y * grid_w + x;
      for (int i = 0; i < pairs; ++i) {
        const double freq = std::pow(10000.0, -4.0 * i / channels);
        out[static_cast<size_t>(2 * i) * n + col] = std::sin(py * freq);
        out[static_cast<size_t>(2 * i + 1) * n + col] = std::cos(py * freq);
        out[static_cast<size_t>(half + 2 * i) * n + col] = std::sin(px * freq);
        out[static_cast<size_t>(half + 2 * i + 1) * n + col] = std::cos(px * freq);
      }
    }
  }
  return enc;
}

std::vector<std::pair<std::string, Tensor>> MhcaParams::named_params(
    const std::string& prefix) const {
  return {{prefix + ".wq", w_q}, {prefix + ".bq", b_q},
          {prefix + ".wk", w_k}, {prefix + ".bk", b_k},
          {prefix + ".wv", w_v}, {prefix + ".bv", b_v},
          {prefix + ".wo", w_o}, {prefix + ".bo", b_o}};
}

MhcaParams make_mhca_params(int width, int head_count, Rng& rng,
                            ScaleMode scale_mode) {
  check(width >= 1 && head_count >= 1 && width % head_count == 0,
        "mhca params: width ", width, " must be divisible by head count ",
        head_count);
  MhcaParams p;
  p.width = width;
  p.head_count = head_count;
  p.scale_mode = scale_mode;
  auto w = [&]() {
    Tensor t = xavier_init(Shape{width, width}, rng);
    t.set_requires_grad(true);
    return t;
  };
  auto b = [&]() { return Tensor::zeros({width, 1}, true); };
  p.w_q = w(); p.b_q = b();
  p.w_k = w(); p.b_k = b();
  p.w_v = w(); p.b_v = b();
  p.w_o = w(); p.b_o = b();
  return p;
}

Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v,
                      int head_count, ScaleMode scale_mode) {
  check(q.defined() && k.defined() && v.defined(), "attention: undefined input");
  check(q.ndim() == 2 && k.ndim() == 2 && v.ndim() == 2,
        "attention: inputs must be 2D");
  const int d = q.rows();
  check(k.rows() == d && v.rows() == d, "attention: width mismatch, q ",
        shape_str(q.shape()), " k ", shape_str(k.shape()), " v ",
        shape_str(v.shape()));
  check(k.cols() == v.cols(), "attention: key/value token counts differ, ",
        k.cols(), " vs ", v.cols());
  check(head_count >= 1 && d % head_count == 0, "attention: width ", d,
        " not divisible by ", head_count, " heads");

  const int head_dim = d / head_count;
  const double denom =
      scale_mode == ScaleMode::kPerHead ? std::sqrt(static_cast<double>(head_dim))
                                        : std::sqrt(static_cast<double>(d));
  std::vector<Tensor> heads;
  heads.reserve(static_cast<size_t>(head_count));
  for (int h = 0; h < head_count; ++h) {
    Tensor qh = slice_rows(q, h * head_dim, (h + 1) * head_dim);
    Tensor kh = slice_rows(k, h * head_dim, (h + 1) * head_dim);
    Tensor vh = slice_rows(v, h * head_dim, (h + 1) * head_dim);
    Tensor scores = scale(matmul(transpose(kh), qh), 1.0 / denom);  // n_k x n_q
    Tensor weights = softmax(scores, 0);  // each query column sums to 1
    heads.push_back(matmul(vh, weights));
  }
  return head_count == 1 ? heads[0] : concat_rows(heads);
}

namespace {

void check_pos(const TokenSet& tokens, const PosEncoding* pos, const char* who) {
  if (!pos) return;
  check(pos->codes.defined(), who, ": undefined positional encoding");
  check(tokens.spatial(), who, ": positional encoding given for non-spatial tokens");
  check(pos->grid_h == tokens.grid_h && pos->grid_w == tokens.grid_w &&
            pos->channels == tokens.channels(),
        who, ": positional grid ", pos->grid_h, "x", pos->grid_w, "x",
        pos->channels, " does not match tokens ", tokens.grid_h, "x",
        tokens.grid_w, "x", tokens.channels());
}

}  // namespace

TokenSet mhca_forward(const MhcaParams& params, const TokenSet& q,
                      const TokenSet& kv, const PosEncoding* pos_q,
                      const PosEncoding* pos_kv) {
  check(q.features.defined() && kv.features.defined(), "mhca: undefined tokens");
  check(q.channels() == params.width && kv.channels() == params.width,
        "mhca: token width ", q.channels(), "/", kv.channels(),
        " vs params width ", params.width);
  check_pos(q, pos_q, "mhca(q)");
  check_pos(kv, pos_kv, "mhca(kv)");

  Tensor q_in = pos_q ? add(q.features, pos_q->codes) : q.features;
  Tensor k_in = pos_kv ? add(kv.features, pos_kv->codes) : kv.features;
  const Tensor& v_in = kv.features;  // values never carry positions

  Tensor qp = add_col(matmul(params.w_q, q_in), params.b_q);
  Tensor kp = add_col(matmul(params.w_k, k_in), params.b_k);
  Tensor vp = add_col(matmul(params.w_v, v_in), params.b_v);
  Tensor core = attention_core(qp, kp, vp, params.head_count, params.scale_mode);
  Tensor out = add_col(matmul(params.w_o, core), params.b_o);
  return TokenSet{out, q.grid_h, q.grid_w};
}

}  // namespace hcat
