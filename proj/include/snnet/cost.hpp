#pragma once

// Analytic FLOPs / parameter accounting.
//
// Counting convention (fixed, exact):
//   - every multiply-accumulate counts as 2 floating operations, so a linear
//     map of R rows, fan-in I, fan-out O (with bias) costs 2·R·I·O;
//   - each layer-norm, each residual add, and the head's token mean-pool
//     cost 2·N·D;
//   - gelu, softmax, and attention scaling are excluded.
// All counts are exact int64 sums of their breakdown entries.

#include <cstdint>
#include <string>
#include <vector>

#include "snnet/anchor.hpp"

namespace snnet {

struct CostItem {
  std::string name;
  int64_t flops = 0;
  int64_t params = 0;
};

struct CostReport {
  int64_t flops = 0;
  int64_t params = 0;
  std::vector<CostItem> breakdown;

  void add(std::string name, int64_t f, int64_t p) {
    breakdown.push_back({std::move(name), f, p});
    flops += f;
    params += p;
  }
  void add(const CostReport& r, const std::string& prefix) {
    for (const auto& it : r.breakdown) add(prefix + it.name, it.flops, it.params);
  }
};

// One pre-norm transformer block on N tokens of width D:
//   attention  2·(4·N·D²) + 2·(2·N²·D)    params 4D² + 4D
//   mlp        2·(2·N·D·hidden)           params 2·D·hidden + hidden + D
//   norms      2 × 2·N·D                  params 4D
//   residuals  2 × 2·N·D                  params 0
CostReport block_cost(int D, int N, int heads, double mlp_ratio);

// Embed + transitions + blocks + head for the full anchor.
CostReport anchor_cost(const AnchorSpec& spec);

// The stitching layer's token-wise affine: flops 2·N·D1·D2, params D1·D2 + D2.
CostReport stitch_layer_cost(int tokens, int d1, int d2);

// Cost of the partial anchor used by a stitch: embed + blocks 1..l with any
// stage transitions on that path (prefix side), or blocks m+1..L with entered
// stages' transitions plus the head (suffix side).
CostReport prefix_cost(const AnchorSpec& spec, int l);
CostReport suffix_cost(const AnchorSpec& spec, int entry);

}  // namespace snnet
