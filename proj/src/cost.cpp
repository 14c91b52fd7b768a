#include "snnet/cost.hpp"

#include <cmath>

namespace snnet {

namespace {

int64_t linear_flops(int64_t rows, int64_t fan_in, int64_t fan_out) {
  return 2 * rows * fan_in * fan_out;
}

int64_t linear_params(int64_t fan_in, int64_t fan_out) { return fan_in * fan_out + fan_out; }

CostItem transition_item(const AnchorSpec& spec, int stage) {
  const int64_t din = spec.dims[static_cast<size_t>(stage) - 1];
  const int64_t dout = spec.dims[static_cast<size_t>(stage)];
  return {strf("stage", stage, ".transition"), linear_flops(spec.tokens, din, dout),
          linear_params(din, dout)};
}

// Transition entering block g's stage, when g opens a stage that has one.
bool opens_transition(const AnchorSpec& spec, int g) {
  const int t = spec.stage_of_block(g);
  return t > 0 && g == spec.stage_first_block(t) &&
         spec.stages[static_cast<size_t>(t)].dim_transition;
}

void add_block_range(CostReport& r, const AnchorSpec& spec, int first, int last) {
  for (int g = first; g <= last; ++g) {
    const int t = spec.stage_of_block(g);
    if (opens_transition(spec, g)) {
      auto item = transition_item(spec, t);
      r.add(item.name, item.flops, item.params);
    }
    r.add(block_cost(spec.dims[static_cast<size_t>(t)], spec.tokens,
                     spec.heads[static_cast<size_t>(t)], spec.mlp_ratio),
          strf("block", g - 1, "."));
  }
}

void add_head(CostReport& r, const AnchorSpec& spec) {
  const int64_t D = spec.dims.back();
  const int64_t N = spec.tokens;
  const int64_t C = spec.num_classes;
  r.add("head.norm", 2 * N * D, 2 * D);
  r.add("head.pool", 2 * N * D, 0);
  r.add("head.out", 2 * D * C, linear_params(D, C));
}

}  // namespace

CostReport block_cost(int D, int N, int heads, double mlp_ratio) {
  if (D < 1 || N < 1 || heads < 1 || D % heads != 0 || !(mlp_ratio > 0))
    throw ValueError(strf("block_cost: bad dims D=", D, " N=", N, " heads=", heads, " ratio=",
                          mlp_ratio));
  const int64_t d = D, n = N;
  const int64_t hidden = std::lround(D * mlp_ratio);
  CostReport r;
  r.add("attn", 2 * (4 * n * d * d) + 2 * (2 * n * n * d), 4 * d * d + 4 * d);
  r.add("mlp", 2 * (2 * n * d * hidden), 2 * d * hidden + hidden + d);
  r.add("norm", 2 * (2 * n * d), 4 * d);
  r.add("residual", 2 * (2 * n * d), 0);
  return r;
}

CostReport anchor_cost(const AnchorSpec& spec) {
  spec.validate();
  CostReport r;
  r.add("embed", linear_flops(spec.tokens, spec.feature_dim, spec.dims[0]),
        linear_params(spec.feature_dim, spec.dims[0]));
  add_block_range(r, spec, 1, spec.total_depth());
  add_head(r, spec);
  return r;
}

CostReport stitch_layer_cost(int tokens, int d1, int d2) {
  CostReport r;
  r.add("stitch_layer", linear_flops(tokens, d1, d2), linear_params(d1, d2));
  return r;
}

CostReport prefix_cost(const AnchorSpec& spec, int l) {
  if (l < 0 || l > spec.total_depth())
    throw ValueError(strf(spec.name, ": prefix cost index ", l, " outside [0, ",
                          spec.total_depth(), "]"));
  CostReport r;
  r.add("embed", linear_flops(spec.tokens, spec.feature_dim, spec.dims[0]),
        linear_params(spec.feature_dim, spec.dims[0]));
  add_block_range(r, spec, 1, l);
  return r;
}

CostReport suffix_cost(const AnchorSpec& spec, int entry) {
  if (entry < 0 || entry > spec.total_depth())
    throw ValueError(strf(spec.name, ": suffix cost index ", entry, " outside [0, ",
                          spec.total_depth(), "]"));
  CostReport r;
  add_block_range(r, spec, entry + 1, spec.total_depth());
  add_head(r, spec);
  return r;
}

}  // namespace snnet
