#include "hcat/profiler.hpp"

#include <array>
#include <iomanip>
#include <sstream>

namespace hcat {

int64_t flops_attention(int64_t d, int64_t n_q, int64_t n_k) {
  check(d > 0, "flops_attention: width must be positive");
  check(n_q >= 0 && n_k >= 0, "flops_attention: negative token count");
  return 2 * d * n_q * n_k;
}

int64_t flops_ffn(int64_t tokens, int64_t d, int64_t hidden) {
  check(d > 0 && hidden > 0, "flops_ffn: dims must be positive");
  check(tokens >= 0, "flops_ffn: negative token count");
  return tokens * (d * hidden + hidden * d);
}

CostTotals CostReport::totals() const {
  CostTotals t;
  for (const auto& e : entries) {
    t.macs += e.macs;
    t.params += e.params;
    t.attn_core += e.core;
    t.serial_depth += e.serial_depth;
  }
  return t;
}

namespace {

// One multi-head block: four d*d projections over the given token counts
// plus the attention core.
CostEntry mhca_cost(const std::string& name, int64_t d, int64_t n_q, int64_t n_k) {
  CostEntry e;
  e.name = name;
  e.proj = d * d * (2 * n_q + 2 * n_k);  // q,o over n_q; k,v over n_k
  e.core = flops_attention(d, n_q, n_k);
  e.params = 4 * d * d + 4 * d;
  e.macs = e.proj + e.core;
  return e;
}

CostEntry cfa_cost(const std::string& name, int64_t d, int64_t hidden,
                   int64_t n_q, int64_t n_k) {
  CostEntry e = mhca_cost(name, d, n_q, n_k);
  e.ffn = flops_ffn(n_q, d, hidden);
  e.params += 2 * d * hidden + hidden + d;
  e.macs += e.ffn;
  e.serial_depth = 1;
  return e;
}

std::string config_id(const ModelConfig& cfg) {
  const char* mode = cfg.fusion.mode == Topology::kHierarchical ? "hierarchical"
                     : cfg.fusion.mode == Topology::kJuxtaposed ? "juxtaposed"
                                                                : "self_attn_baseline";
  return str("C=", cfg.fusion.channels, ",S=", cfg.fusion.sparse_tokens,
             ",N=", cfg.fusion.hca_layers, ",heads=", cfg.fusion.heads,
             ",ffn=", cfg.fusion.ffn_hidden, ",mode=", mode,
             ",fs=", cfg.fusion.use_fs ? 1 : 0, ",stride=", cfg.stride,
             ",tmpl=", cfg.template_size, ",search=", cfg.search_size);
}

}  // namespace

CostReport cost_report(const ModelConfig& cfg) {
  cfg.validate();
  CostReport report;
  report.config_id = config_id(cfg);

  const int64_t d = cfg.fusion.channels;
  const int64_t n_x = static_cast<int64_t>(cfg.search_grid()) * cfg.search_grid();
  const int64_t n_z = static_cast<int64_t>(cfg.template_grid()) * cfg.template_grid();
  const int64_t n_t = cfg.fusion.use_fs ? cfg.fusion.sparse_tokens : n_z;

  // Backbone conv stages over both patches; Siamese weights counted once.
  {
    CostEntry conv{.name = "backbone.conv"};
    const int widest = cfg.backbone_channels;
    const std::array<int64_t, 4> widths = {widest / 8, widest / 4, widest / 2, widest};
    for (int patch : {cfg.template_size, cfg.search_size}) {
      int64_t in_ch = 3, side = patch;
      for (int i = 0; i < 4; ++i) {
        const int stage_stride = (i == 3 && cfg.stride == 8) ? 1 : 2;
        side = (side + 2 - 3) / stage_stride + 1;
        conv.proj += widths[static_cast<size_t>(i)] * (in_ch * 9) * side * side;
        in_ch = widths[static_cast<size_t>(i)];
      }
    }
    int64_t in_ch = 3;
    for (int64_t w : widths) {
      conv.params += w * in_ch * 9 + w;
      in_ch = w;
    }
    conv.macs = conv.proj;
    report.entries.push_back(conv);

    CostEntry proj{.name = "backbone.proj"};
    proj.proj = d * widest * (n_x + n_z);
    proj.params = d * widest + d;
    proj.macs = proj.proj;
    report.entries.push_back(proj);
  }

  if (cfg.fusion.use_fs) {
    CostEntry fs = mhca_cost("fs", d, cfg.fusion.sparse_tokens, n_z);
    fs.params += d * cfg.fusion.sparse_tokens;  // learned seed vectors
    fs.serial_depth = 1;
    report.entries.push_back(fs);
  }

  const bool self_attn = cfg.fusion.mode == Topology::kSelfAttnBaseline;
  for (int l = 1; l <= cfg.fusion.hca_layers; ++l) {
    const std::string base = "hca" + std::to_string(l);
    report.entries.push_back(cfa_cost(base + ".search_cfa", d, cfg.fusion.ffn_hidden,
                                      n_x, self_attn ? n_x : n_t));
    report.entries.push_back(cfa_cost(base + ".template_cfa", d, cfg.fusion.ffn_hidden,
                                      n_t, self_attn ? n_t : n_x));
  }
  report.entries.push_back(cfa_cost("decoder_cfa", d, cfg.fusion.ffn_hidden, n_x, n_t));

  for (const char* head : {"head.cls", "head.reg"}) {
    const int64_t out_dim = head[5] == 'c' ? 1 : 4;
    const int64_t hidden = cfg.head_hidden;
    CostEntry e;
    e.name = head;
    e.proj = n_x * (d * hidden + hidden * hidden + hidden * out_dim);
    e.params = hidden * d + hidden + hidden * hidden + hidden + out_dim * hidden + out_dim;
    e.macs = e.proj;
    report.entries.push_back(e);
  }
  return report;
}

namespace {

// Documented per-element activation costs for the detailed view.
struct ElemCosts {
  int64_t softmax_elems = 0;  // 5 flops each
  int64_t relu_elems = 0;     // 1 flop each
  int64_t sigmoid_elems = 0;  // 4 flops each
};

ElemCosts elem_costs(const ModelConfig& cfg) {
  ElemCosts e;
  const int64_t n_x = static_cast<int64_t>(cfg.search_grid()) * cfg.search_grid();
  const int64_t n_z = static_cast<int64_t>(cfg.template_grid()) * cfg.template_grid();
  const int64_t n_t = cfg.fusion.use_fs ? cfg.fusion.sparse_tokens : n_z;
  const bool self_attn = cfg.fusion.mode == Topology::kSelfAttnBaseline;
  if (cfg.fusion.use_fs) e.softmax_elems += cfg.fusion.sparse_tokens * n_z;
  for (int l = 0; l < cfg.fusion.hca_layers; ++l) {
    e.softmax_elems += self_attn ? n_x * n_x + n_t * n_t : 2 * n_x * n_t;
    e.relu_elems += cfg.fusion.ffn_hidden * (n_x + n_t);
  }
  e.softmax_elems += n_x * n_t;                // decoder
  e.relu_elems += cfg.fusion.ffn_hidden * n_x; // decoder FFN
  e.relu_elems += 2 * 2 * cfg.head_hidden * n_x;  // two heads, two hidden layers
  e.sigmoid_elems += 5 * n_x;                  // 4 box coords + 1 score
  return e;
}

}  // namespace

std::string format_cost_report(const CostReport& report, bool machine,
                               bool flops_x2, bool detailed,
                               const ModelConfig* cfg_for_detail) {
  const int64_t unit = flops_x2 ? 2 : 1;
  std::ostringstream os;
  const CostTotals t = report.totals();
  ElemCosts elems;
  if (detailed && cfg_for_detail) elems = elem_costs(*cfg_for_detail);
  const int64_t elem_flops =
      5 * elems.softmax_elems + elems.relu_elems + 4 * elems.sigmoid_elems;
  if (machine) {
    os << "hcat-cost-report v1\n";
    os << "config " << report.config_id << "\n";
    for (const auto& e : report.entries)
      os << "row block=" << e.name << " macs=" << e.macs * unit
         << " core=" << e.core * unit << " proj=" << e.proj * unit
         << " ffn=" << e.ffn * unit << " params=" << e.params
         << " serial_depth=" << e.serial_depth << "\n";
    os << "totals macs=" << t.macs * unit << " params=" << t.params
       << " serial_depth=" << t.serial_depth << " attn_core=" << t.attn_core * unit
       << "\n";
    if (detailed && cfg_for_detail)
      os << "elemops softmax=" << elems.softmax_elems << " relu=" << elems.relu_elems
         << " sigmoid=" << elems.sigmoid_elems << " flops=" << elem_flops << "\n";
    return os.str();
  }

  const char* figure = flops_x2 ? "flops" : "macs";
  os << "cost report (" << figure << ") for " << report.config_id << "\n";
  os << std::left << std::setw(22) << "block" << std::right << std::setw(14)
     << figure << std::setw(14) << "attn core" << std::setw(14) << "params"
     << std::setw(8) << "serial" << "\n";
  for (const auto& e : report.entries)
    os << std::left << std::setw(22) << e.name << std::right << std::setw(14)
       << e.macs * unit << std::setw(14) << e.core * unit << std::setw(14)
       << e.params << std::setw(8) << e.serial_depth << "\n";
  os << std::left << std::setw(22) << "total" << std::right << std::setw(14)
     << t.macs * unit << std::setw(14) << t.attn_core * unit << std::setw(14)
     << t.params << std::setw(8) << t.serial_depth << "\n";
  os << "  " << std::fixed << std::setprecision(1)
     << static_cast<double>(t.macs * unit) / 1e6 << " M" << figure
     << " per template+search forward\n";
  if (detailed && cfg_for_detail)
    os << "  elementwise (excluded from headline): softmax "
       << elems.softmax_elems << " x5, relu " << elems.relu_elems
       << " x1, sigmoid " << elems.sigmoid_elems << " x4 = " << elem_flops
       << " flops\n";
  return os.str();
}

CostReport parse_cost_report(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  check(std::getline(is, line) && line == "hcat-cost-report v1",
        "parse_cost_report: bad or missing header");
  CostReport report;
  auto kv = [](const std::string& token, const char* key) {
    const std::string prefix = std::string(key) + "=";
    check(token.rfind(prefix, 0) == 0, "parse_cost_report: expected ", key,
          "=, got ", token);
    return token.substr(prefix.size());
  };
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "config") {
      std::getline(ls, report.config_id);
      if (!report.config_id.empty() && report.config_id[0] == ' ')
        report.config_id.erase(0, 1);
    } else if (tag == "row") {
      std::array<std::string, 6> tok;
      for (auto& s : tok) ls >> s;
      CostEntry e;
      e.name = kv(tok[0], "block");
      e.macs = std::stoll(kv(tok[1], "macs"));
      e.core = std::stoll(kv(tok[2], "core"));
      e.proj = std::stoll(kv(tok[3], "proj"));
      e.ffn = std::stoll(kv(tok[4], "ffn"));
      e.params = std::stoll(kv(tok[5], "params"));
      std::string s;
      ls >> s;
      e.serial_depth = std::stoi(kv(s, "serial_depth"));
      report.entries.push_back(e);
    } else if (tag == "totals") {
      // Recomputed from rows; validate consistency.
      std::array<std::string, 4> tok;
      for (auto& s : tok) ls >> s;
      const CostTotals t = report.totals();
      check(std::stoll(kv(tok[0], "macs")) == t.macs,
            "parse_cost_report: totals do not match rows");
      check(std::stoi(kv(tok[2], "serial_depth")) == t.serial_depth,
            "parse_cost_report: serial depth mismatch");
    } else if (tag == "elemops") {
      // Informational only.
    } else {
      fail("parse_cost_report: unknown record '", tag, "'");
    }
  }
  return report;
}

}  // namespace hcat
