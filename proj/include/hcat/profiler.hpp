#pragma once

#include "hcat/model.hpp"

namespace hcat {

// Analytic cost accounting. Counts are multiply-accumulates (MACs), matching
// the convention where an FFN over t tokens costs t * 2 * d * hidden. Bias
// adds and activations are excluded from headline numbers; an optional
// detailed view adds elementwise-op counts with documented per-element costs
// (softmax 5, relu 1, sigmoid 4 per element).

// Attention core cost 2 * d * n_q * n_k, excluding the four internal linear
// projections (reported separately by cost_report).
int64_t flops_attention(int64_t d, int64_t n_q, int64_t n_k);

// Two linear layers per token: tokens * (d*hidden + hidden*d).
int64_t flops_ffn(int64_t tokens, int64_t d, int64_t hidden);

struct CostEntry {
  std::string name;
  int64_t macs = 0;    // core + proj + ffn
  int64_t core = 0;    // attention-core MACs
  int64_t proj = 0;    // plain linear / conv / projection MACs
  int64_t ffn = 0;     // feed-forward MACs
  int64_t params = 0;
  int serial_depth = 0;  // sequential blocks this entry adds to the critical path
};

struct CostTotals {
  int64_t macs = 0;
  int64_t params = 0;
  int64_t attn_core = 0;
  int serial_depth = 0;
};

struct CostReport {
  std::string config_id;
  std::vector<CostEntry> entries;
  CostTotals totals() const;
};

// Enumerates one full template+search forward: backbone conv stages, channel
// projection, the sparsification block, every fusion block, and both heads.
// serial_depth counts the sparsification block plus each fusion block (the
// paired blocks in one layer run sequentially), so the default config scores
// 2N + 1 + 1 = 6.
CostReport cost_report(const ModelConfig& config);

// Text renderings. machine=true emits the line-oriented format below, which
// parse_cost_report round-trips:
//   hcat-cost-report v1
//   config <id>
//   row block=<name> macs=<n> core=<n> proj=<n> ffn=<n> params=<n> serial_depth=<n>
//   totals macs=<n> params=<n> serial_depth=<n> attn_core=<n>
// flops_x2 doubles every MAC figure in the rendering (flops = 2 * MACs).
// detailed adds elementwise-op counts, computed from cfg_for_detail.
std::string format_cost_report(const CostReport& report, bool machine,
                               bool flops_x2 = false, bool detailed = false,
                               const ModelConfig* cfg_for_detail = nullptr);
CostReport parse_cost_report(const std::string& text);

}  // namespace hcat
