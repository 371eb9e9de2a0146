#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "hcat/fusion.hpp"

using namespace hcat;

namespace {

TokenSet random_tokens(Rng& rng, int c, int grid_h, int grid_w) {
  Tensor t = Tensor::zeros({c, grid_h * grid_w});
  for (auto& v : t.values()) v = rng.uniform(-1, 1);
  return TokenSet{t, grid_h, grid_w};
}

FusionConfig small_config() {
  FusionConfig cfg;
  cfg.channels = 8;
  cfg.sparse_tokens = 2;
  cfg.hca_layers = 1;
  cfg.heads = 2;
  cfg.ffn_hidden = 16;
  return cfg;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.values().size(); ++i)
    m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

}  // namespace

TEST_CASE("fs output token count and shape at tracker dims") {
  Rng rng(1);
  FusionConfig cfg;  // defaults: C=256, S=16
  FusionNet net = make_fusion_net(cfg, rng);
  TokenSet f_z = random_tokens(rng, 256, 8, 8);
  PosEncoding pos_z = sine_pos_encoding_2d(8, 8, 256);
  TokenSet out = fs_forward(*net.fs, f_z, pos_z);
  CHECK(out.features.shape() == Shape{256, 16});
  CHECK_FALSE(out.spatial());
}

TEST_CASE("fs with zeroed output projection degenerates to the seeds") {
  Rng rng(2);
  FusionConfig cfg = small_config();
  FusionNet net = make_fusion_net(cfg, rng);
  std::fill(net.fs->mhca.w_o.values().begin(), net.fs->mhca.w_o.values().end(), 0.0);
  std::fill(net.fs->mhca.b_o.values().begin(), net.fs->mhca.b_o.values().end(), 0.0);

  PosEncoding pos_z = sine_pos_encoding_2d(2, 2, cfg.channels);
  TokenSet a = fs_forward(*net.fs, random_tokens(rng, cfg.channels, 2, 2), pos_z);
  TokenSet b = fs_forward(*net.fs, random_tokens(rng, cfg.channels, 2, 2), pos_z);
  CHECK(a.features.values() == net.fs->seeds.values());
  CHECK(a.features.values() == b.features.values());
}

TEST_CASE("cfa with all-zero weights is the identity on q") {
  FusionConfig cfg = small_config();
  Rng rng(3);
  FusionNet net = make_fusion_net(cfg, rng);
  CfaParams& cfa = net.decoder;
  for (auto& [name, t] : cfa.named_params("x"))
    std::fill(t.values().begin(), t.values().end(), 0.0);

  TokenSet q = random_tokens(rng, cfg.channels, 2, 2);
  TokenSet kv = random_tokens(rng, cfg.channels, 1, 2);
  TokenSet out = cfa_forward(cfa, q, kv, nullptr, nullptr);
  CHECK(out.features.values() == q.features.values());
}

TEST_CASE("cfa output is indexed by the query tokens at tracker dims") {
  Rng rng(4);
  FusionConfig cfg;  // C=256
  FusionNet net = make_fusion_net(cfg, rng);
  TokenSet q = random_tokens(rng, 256, 16, 16);
  TokenSet kv{random_tokens(rng, 256, 4, 4).features, 0, 0};  // 16 sparse tokens
  TokenSet out = cfa_forward(net.decoder, q, kv, nullptr, nullptr);
  CHECK(out.features.shape() == Shape{256, 256});
}

TEST_CASE("cfa gradient passes finite differences on a tiny instance") {
  Rng rng(5);
  FusionConfig cfg = small_config();
  FusionNet net = make_fusion_net(cfg, rng);
  TokenSet q = random_tokens(rng, 8, 1, 3);
  TokenSet kv = random_tokens(rng, 8, 1, 2);
  q.features.set_requires_grad(true);
  kv.features.set_requires_grad(true);
  auto f = [&]() {
    return mean(cfa_forward(net.decoder, q, kv, nullptr, nullptr).features);
  };
  for (Tensor t : {q.features, kv.features, net.decoder.mhca.w_q,
                   net.decoder.mhca.w_o, net.decoder.ffn_w1, net.decoder.ffn_w2,
                   net.decoder.ffn_b1, net.decoder.ffn_b2}) {
    CHECK(finite_diff_check(f, t, 1e-5, 1e-4).pass);
  }
}

TEST_CASE("cfa gradient also passes with post_norm enabled") {
  Rng rng(6);
  FusionConfig cfg = small_config();
  FusionNet net = make_fusion_net(cfg, rng);
  TokenSet q = random_tokens(rng, 8, 1, 3);
  TokenSet kv = random_tokens(rng, 8, 1, 2);
  q.features.set_requires_grad(true);
  auto f = [&]() {
    return mean(cfa_forward(net.decoder, q, kv, nullptr, nullptr, true).features);
  };
  CHECK(finite_diff_check(f, q.features, 1e-5, 1e-4).pass);
  CHECK(finite_diff_check(f, net.decoder.ffn_w1, 1e-5, 1e-4).pass);
}

TEST_CASE("hca wirings coincide exactly when the search branch is an identity") {
  FusionConfig cfg = small_config();
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(100 + trial);
    FusionNet net = make_fusion_net(cfg, rng);
    net.layers[0].search_branch.zero_output_paths();
    TokenSet f_x = random_tokens(rng, cfg.channels, 2, 2);
    TokenSet f_z{random_tokens(rng, cfg.channels, 1, 2).features, 0, 0};
    PosEncoding pos_x = sine_pos_encoding_2d(2, 2, cfg.channels);

    auto hier = hca_layer_forward(net.layers[0], f_x, f_z, &pos_x, nullptr,
                                  Topology::kHierarchical);
    auto juxt = hca_layer_forward(net.layers[0], f_x, f_z, &pos_x, nullptr,
                                  Topology::kJuxtaposed);
    CHECK(max_abs_diff(hier.first.features, juxt.first.features) <= 1e-12);
    CHECK(max_abs_diff(hier.second.features, juxt.second.features) <= 1e-12);
  }
}

TEST_CASE("hca wirings differ under random nonzero weights") {
  FusionConfig cfg = small_config();
  Rng rng(7);
  FusionNet net = make_fusion_net(cfg, rng);
  TokenSet f_x = random_tokens(rng, cfg.channels, 2, 2);
  TokenSet f_z{random_tokens(rng, cfg.channels, 1, 2).features, 0, 0};
  auto hier = hca_layer_forward(net.layers[0], f_x, f_z, nullptr, nullptr,
                                Topology::kHierarchical);
  auto juxt = hca_layer_forward(net.layers[0], f_x, f_z, nullptr, nullptr,
                                Topology::kJuxtaposed);
  CHECK(max_abs_diff(hier.first.features, juxt.first.features) == 0.0);
  CHECK(max_abs_diff(hier.second.features, juxt.second.features) > 0.0);
}

TEST_CASE("hca preserves branch token counts at tracker dims") {
  Rng rng(8);
  FusionConfig cfg;  // defaults
  FusionNet net = make_fusion_net(cfg, rng);
  TokenSet f_x = random_tokens(rng, 256, 16, 16);
  TokenSet f_z{random_tokens(rng, 256, 4, 4).features, 0, 0};
  auto [sx, sz] = hca_layer_forward(net.layers[0], f_x, f_z, nullptr, nullptr,
                                    Topology::kHierarchical);
  CHECK(sx.features.shape() == Shape{256, 256});
  CHECK(sz.features.shape() == Shape{256, 16});
}

TEST_CASE("fusion forward produces one fused vector per search token") {
  Rng rng(9);
  FusionConfig cfg;  // defaults: C=256, S=16, N=2
  FusionNet net = make_fusion_net(cfg, rng);
  TokenSet f_z = random_tokens(rng, 256, 8, 8);
  TokenSet f_x = random_tokens(rng, 256, 16, 16);
  TokenSet out = fusion_forward(net, f_z, f_x);
  CHECK(out.features.shape() == Shape{256, 256});
  CHECK(out.grid_h == 16);
  CHECK(out.grid_w == 16);
}

TEST_CASE("bypassing fs keeps the template token count through the stack") {
  Rng rng(10);
  FusionConfig cfg = small_config();
  cfg.use_fs = false;
  FusionNet net = make_fusion_net(cfg, rng);
  CHECK_FALSE(net.fs.has_value());
  TokenSet f_z = random_tokens(rng, cfg.channels, 2, 2);
  TokenSet encoded = encode_template(net, f_z);
  CHECK(encoded.token_count() == 4);
  CHECK(encoded.spatial());
  TokenSet out = fusion_forward(net, f_z, random_tokens(rng, cfg.channels, 3, 3));
  CHECK(out.features.shape() == Shape{cfg.channels, 9});
}

TEST_CASE("fusion output shape holds across modes and random configs") {
  Rng meta(11);
  for (int trial = 0; trial < 12; ++trial) {
    FusionConfig cfg;
    cfg.heads = 1 << meta.below(2);                 // 1 or 2
    cfg.channels = 4 * static_cast<int>(1 + meta.below(3)) * cfg.heads;
    cfg.sparse_tokens = 1 + static_cast<int>(meta.below(4));
    cfg.hca_layers = 1 + static_cast<int>(meta.below(2));
    cfg.ffn_hidden = 4 + static_cast<int>(meta.below(12));
    cfg.use_fs = meta.below(2) == 0;
    cfg.pos_every_layer = meta.below(2) == 0;
    cfg.mode = trial % 3 == 0   ? Topology::kHierarchical
               : trial % 3 == 1 ? Topology::kJuxtaposed
                                : Topology::kSelfAttnBaseline;
    Rng rng(1000 + trial);
    FusionNet net = make_fusion_net(cfg, rng);
    const int gh = 2 + static_cast<int>(meta.below(2));
    TokenSet f_z = random_tokens(rng, cfg.channels, 2, 2);
    TokenSet f_x = random_tokens(rng, cfg.channels, gh, 3);
    TokenSet out = fusion_forward(net, f_z, f_x);
    CHECK(out.features.shape() == Shape{cfg.channels, gh * 3});
  }
}

TEST_CASE("fusion forward is deterministic") {
  Rng rng(12);
  FusionConfig cfg = small_config();
  FusionNet net = make_fusion_net(cfg, rng);
  TokenSet f_z = random_tokens(rng, cfg.channels, 2, 2);
  TokenSet f_x = random_tokens(rng, cfg.channels, 2, 2);
  TokenSet a = fusion_forward(net, f_z, f_x);
  TokenSet b = fusion_forward(net, f_z, f_x);
  CHECK(a.features.values() == b.features.values());
}

TEST_CASE("self-attention baseline ignores the template until the decoder") {
  Rng rng(13);
  FusionConfig cfg = small_config();
  cfg.mode = Topology::kSelfAttnBaseline;
  cfg.use_fs = false;
  FusionNet net = make_fusion_net(cfg, rng);
  // Zero the decoder so the output depends only on the search branch.
  net.decoder.zero_output_paths();
  TokenSet f_x = random_tokens(rng, cfg.channels, 2, 2);
  TokenSet out_a = fusion_forward(net, random_tokens(rng, cfg.channels, 2, 2), f_x);
  TokenSet out_b = fusion_forward(net, random_tokens(rng, cfg.channels, 2, 2), f_x);
  CHECK(out_a.features.values() == out_b.features.values());
}

TEST_CASE("end-to-end fusion gradient on a reduced config") {
  FusionConfig cfg;
  cfg.channels = 8;
  cfg.heads = 2;
  cfg.sparse_tokens = 2;
  cfg.hca_layers = 1;
  cfg.ffn_hidden = 8;
  Rng rng(14);
  FusionNet net = make_fusion_net(cfg, rng);
  TokenSet f_z = random_tokens(rng, 8, 2, 2);
  TokenSet f_x = random_tokens(rng, 8, 2, 2);
  f_z.features.set_requires_grad(true);
  f_x.features.set_requires_grad(true);

  auto f = [&]() { return mean(fusion_forward(net, f_z, f_x).features); };
  CHECK(finite_diff_check(f, f_z.features, 1e-5, 1e-4).pass);
  CHECK(finite_diff_check(f, f_x.features, 1e-5, 1e-4).pass);
  CHECK(finite_diff_check(f, net.fs->seeds, 1e-5, 1e-4).pass);
  CHECK(finite_diff_check(f, net.fs->mhca.w_v, 1e-5, 1e-4).pass);
  CHECK(finite_diff_check(f, net.layers[0].search_branch.mhca.w_q, 1e-5, 1e-4).pass);
  CHECK(finite_diff_check(f, net.layers[0].template_branch.ffn_w1, 1e-5, 1e-4).pass);
  CHECK(finite_diff_check(f, net.decoder.mhca.w_o, 1e-5, 1e-4).pass);
}

TEST_CASE("config validation rejects bad values") {
  FusionConfig cfg;
  cfg.channels = 6;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = FusionConfig{};
  cfg.heads = 3;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = FusionConfig{};
  cfg.hca_layers = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = FusionConfig{};
  cfg.sparse_tokens = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}
