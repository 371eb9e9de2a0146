#include "hcat/fusion.hpp"

#include <algorithm>

namespace hcat {

void FusionConfig::validate() const {
  check(channels >= 4 && channels % 4 == 0, "fusion config: channels ",
        channels, " must be a positive multiple of 4");
  check(heads >= 1 && channels % heads == 0, "fusion config: channels ",
        channels, " not divisible by ", heads, " heads");
  check(sparse_tokens >= 1, "fusion config: sparse_tokens must be >= 1, got ",
        sparse_tokens);
  check(hca_layers >= 1, "fusion config: hca_layers must be >= 1, got ",
        hca_layers);
  check(ffn_hidden >= 1, "fusion config: ffn_hidden must be >= 1, got ",
        ffn_hidden);
}

std::vector<std::pair<std::string, Tensor>> CfaParams::named_params(
    const std::string& prefix) const {
  auto out = mhca.named_params(prefix + ".mhca");
  out.emplace_back(prefix + ".ffn.w1", ffn_w1);
  out.emplace_back(prefix + ".ffn.b1", ffn_b1);
  out.emplace_back(prefix + ".ffn.w2", ffn_w2);
  out.emplace_back(prefix + ".ffn.b2", ffn_b2);
  return out;
}

void CfaParams::zero_output_paths() {
  for (Tensor t : {mhca.w_o, mhca.b_o, ffn_w2, ffn_b2})
    std::fill(t.values().begin(), t.values().end(), 0.0);
}

std::vector<std::pair<std::string, Tensor>> FsParams::named_params(
    const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor>> out{{prefix + ".seeds", seeds}};
  for (auto& kv : mhca.named_params(prefix + ".mhca")) out.push_back(kv);
  return out;
}

std::vector<std::pair<std::string, Tensor>> FusionNet::named_params(
    const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor>> out;
  if (fs)
    for (auto& kv : fs->named_params(prefix + ".fs")) out.push_back(kv);
  for (size_t l = 0; l < layers.size(); ++l) {
    const std::string base = prefix + ".hca" + std::to_string(l + 1);
    for (auto& kv : layers[l].search_branch.named_params(base + ".search"))
      out.push_back(kv);
    for (auto& kv : layers[l].template_branch.named_params(base + ".template"))
      out.push_back(kv);
  }
  for (auto& kv : decoder.named_params(prefix + ".decoder")) out.push_back(kv);
  return out;
}

namespace {

CfaParams make_cfa_params(const FusionConfig& config, Rng& rng) {
  CfaParams cfa;
  cfa.mhca = make_mhca_params(config.channels, config.heads, rng, config.scale_mode);
  cfa.ffn_w1 = xavier_init(Shape{config.ffn_hidden, config.channels}, rng);
  cfa.ffn_w1.set_requires_grad(true);
  cfa.ffn_b1 = Tensor::zeros({config.ffn_hidden, 1}, true);
  cfa.ffn_w2 = xavier_init(Shape{config.channels, config.ffn_hidden}, rng);
  cfa.ffn_w2.set_requires_grad(true);
  cfa.ffn_b2 = Tensor::zeros({config.channels, 1}, true);
  return cfa;
}

}  // namespace

FusionNet make_fusion_net(const FusionConfig& config, Rng& rng) {
  config.validate();
  FusionNet net;
  net.config = config;
  if (config.use_fs) {
    FsParams fs;
    fs.seeds = xavier_init(Shape{config.channels, config.sparse_tokens}, rng);
    fs.seeds.set_requires_grad(true);
    fs.mhca = make_mhca_params(config.channels, config.heads, rng, config.scale_mode);
    net.fs = std::move(fs);
  }
  net.layers.reserve(static_cast<size_t>(config.hca_layers));
  for (int l = 0; l < config.hca_layers; ++l)
    net.layers.push_back({make_cfa_params(config, rng), make_cfa_params(config, rng)});
  net.decoder = make_cfa_params(config, rng);
  return net;
}

TokenSet fs_forward(const FsParams& fs, const TokenSet& template_tokens,
                    const PosEncoding& pos_z) {
  check(template_tokens.spatial(),
        "fs_forward: template tokens must carry a spatial grid");
  TokenSet seeds{fs.seeds, 0, 0};
  TokenSet attended = mhca_forward(fs.mhca, seeds, template_tokens, nullptr, &pos_z);
  return TokenSet{add(fs.seeds, attended.features), 0, 0};
}

TokenSet cfa_forward(const CfaParams& cfa, const TokenSet& q, const TokenSet& kv,
                     const PosEncoding* pos_q, const PosEncoding* pos_kv,
                     bool post_norm) {
  TokenSet attended = mhca_forward(cfa.mhca, q, kv, pos_q, pos_kv);
  Tensor mixed = add(q.features, attended.features);
  if (post_norm) mixed = layer_norm_cols(mixed);
  Tensor hidden = relu(add_col(matmul(cfa.ffn_w1, mixed), cfa.ffn_b1));
  Tensor ffn_out = add_col(matmul(cfa.ffn_w2, hidden), cfa.ffn_b2);
  Tensor out = add(mixed, ffn_out);
  if (post_norm) out = layer_norm_cols(out);
  return TokenSet{out, q.grid_h, q.grid_w};
}

std::pair<TokenSet, TokenSet> hca_layer_forward(
    const HcaLayerParams& layer, const TokenSet& search_tokens,
    const TokenSet& template_tokens, const PosEncoding* pos_search,
    const PosEncoding* pos_template, Topology mode, bool post_norm) {
  check(mode == Topology::kHierarchical || mode == Topology::kJuxtaposed,
        "hca_layer_forward: expected a cross-attention topology");
  TokenSet search_out = cfa_forward(layer.search_branch, search_tokens,
                                    template_tokens, pos_search, pos_template,
                                    post_norm);
  const TokenSet& template_kv =
      mode == Topology::kHierarchical ? search_out : search_tokens;
  TokenSet template_out =
      cfa_forward(layer.template_branch, template_tokens, template_kv,
                  pos_template, pos_search, post_norm);
  return {search_out, template_out};
}

TokenSet encode_template(const FusionNet& net, const TokenSet& template_tokens) {
  check(net.config.use_fs == net.fs.has_value(),
        "fusion net: use_fs flag does not match parameters");
  if (!net.config.use_fs) return template_tokens;
  check(template_tokens.spatial(), "encode_template: tokens lack a grid");
  PosEncoding pos_z = sine_pos_encoding_2d(
      template_tokens.grid_h, template_tokens.grid_w, net.config.channels);
  TokenSet out = fs_forward(*net.fs, template_tokens, pos_z);
  check(out.token_count() == net.config.sparse_tokens,
        "fs_forward: produced ", out.token_count(), " tokens, expected ",
        net.config.sparse_tokens);
  return out;
}

TokenSet fuse_encoded(const FusionNet& net, const TokenSet& encoded_template,
                      const TokenSet& search_tokens) {
  const FusionConfig& cfg = net.config;
  check(static_cast<int>(net.layers.size()) == cfg.hca_layers,
        "fusion net: layer count ", net.layers.size(), " vs config ",
        cfg.hca_layers);
  check(search_tokens.spatial(), "fusion: search tokens lack a grid");
  check(search_tokens.channels() == cfg.channels &&
            encoded_template.channels() == cfg.channels,
        "fusion: token width mismatch with config channels ", cfg.channels);

  PosEncoding pos_x = sine_pos_encoding_2d(search_tokens.grid_h,
                                           search_tokens.grid_w, cfg.channels);
  // Sparse template tokens have no grid, hence no positional code. Without
  // the FS stage the template keeps its grid and gets one.
  PosEncoding pos_z;
  const bool template_spatial = encoded_template.spatial();
  if (template_spatial)
    pos_z = sine_pos_encoding_2d(encoded_template.grid_h,
                                 encoded_template.grid_w, cfg.channels);

  TokenSet f_x = search_tokens;
  TokenSet f_z = encoded_template;
  for (int l = 0; l < cfg.hca_layers; ++l) {
    const bool with_pos = cfg.pos_every_layer || l == 0;
    const PosEncoding* px = with_pos ? &pos_x : nullptr;
    const PosEncoding* pz = with_pos && template_spatial ? &pos_z : nullptr;
    if (cfg.mode == Topology::kSelfAttnBaseline) {
      f_x = cfa_forward(net.layers[l].search_branch, f_x, f_x, px, px,
                        cfg.post_norm);
      f_z = cfa_forward(net.layers[l].template_branch, f_z, f_z, pz, pz,
                        cfg.post_norm);
    } else {
      std::tie(f_x, f_z) = hca_layer_forward(net.layers[l], f_x, f_z, px, pz,
                                             cfg.mode, cfg.post_norm);
    }
  }
  const bool decoder_pos = cfg.pos_every_layer;
  return cfa_forward(net.decoder, f_x, f_z, decoder_pos ? &pos_x : nullptr,
                     decoder_pos && template_spatial ? &pos_z : nullptr,
                     cfg.post_norm);
}

TokenSet fusion_forward(const FusionNet& net, const TokenSet& template_tokens,
                        const TokenSet& search_tokens) {
  return fuse_encoded(net, encode_template(net, template_tokens), search_tokens);
}

}  // namespace hcat
