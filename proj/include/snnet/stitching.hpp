#pragma once

// Stitching layers, sliding-window enumeration of valid (split, entry) pairs,
// least-squares initialization from boundary activations, and execution of
// stitched networks (fast-anchor prefix -> token-wise affine -> slow-anchor
// suffix).

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "snnet/anchor.hpp"
#include "snnet/cost.hpp"
#include "snnet/dataset.hpp"
#include "snnet/rng.hpp"
#include "snnet/tensor.hpp"

namespace snnet {

struct WindowSpec {
  int kernel = 2;
  int stride = 1;

  void validate() const {
    if (kernel < 1 || stride < 1)
      throw ValueError(strf("window: kernel ", kernel, " and stride ", stride, " must be >= 1"));
  }
};

// One enumerated split/entry pair, indices local to the stage (1-based), with
// the lowest-index sliding window that contains both sides.
struct StitchPoint {
  int l = 0;
  int m = 0;
  int window_id = 0;
};

// Depth-L windows are W_i = {i..i+k-1} for i = 1, 1+s, 1+2s, ... within 1..L;
// (l, m) is valid iff some window contains both. Equal-depth form.
std::vector<StitchPoint> enumerate_paired(int depth, const WindowSpec& window);

// Unequal depths: the source index l in 1..L1 is first aligned onto the
// target range by a(l) = round-half-up(l·L2/L1) clamped to [1, L2]; windows
// run over the target depth L2 and must contain both a(l) and m.
std::vector<StitchPoint> enumerate_unpaired(int depth_src, int depth_dst,
                                            const WindowSpec& window);

enum class InitMethod { kaiming, least_squares };

struct StitchingLayer {
  Tensor weight;  // [D1 × D2]
  Tensor bias;    // [D2]
  int pair = 0;    // adjacent-anchor pair index (position of the faster anchor)
  int stage = 0;
  int window_id = 0;
  InitMethod init_method = InitMethod::kaiming;
  double ls_residual = -1.0;  // ‖A·M − B‖_F recorded by ls_init, else -1
  bool underdetermined = false;
  // Global block indices whose boundary activations this layer regresses:
  // the first (l, m) of its window in config order.
  int canonical_l = 0;
  int canonical_m = 0;
};

enum class ConfigKind { anchor, stitch };

// Prefix source is the faster anchor in the default direction; the reverse
// direction exists only for the ablation and is never the default.
enum class StitchDirection { fast_to_slow, slow_to_fast };

struct StitchConfig {
  ConfigKind kind = ConfigKind::anchor;
  int fast_anchor = 0;  // index into StitchSpace::anchors (FLOPs-ascending)
  int slow_anchor = 0;
  int stage = 0;
  int l = 0;  // global split index into the prefix-source anchor (1-based)
  int m = 0;  // global entry index into the suffix-target anchor (1-based)
  int layer_id = -1;
};

struct StitchSpace {
  std::vector<AnchorModel> anchors;    // strictly FLOPs-ascending
  std::vector<StitchConfig> configs;   // anchors first, then (pair, stage, l, m) order
  std::vector<StitchingLayer> layers;  // one per (pair, stage, window)
  WindowSpec window;
  bool nearest_only = true;
  StitchDirection direction = StitchDirection::fast_to_slow;

  int num_configs() const { return static_cast<int>(configs.size()); }
  const StitchConfig& config(int id) const {
    if (id < 0 || id >= num_configs())
      throw ValueError(strf("config id ", id, " outside [0, ", num_configs(), ")"));
    return configs[static_cast<size_t>(id)];
  }
  // Anchor supplying the prefix / the suffix of a stitch, per direction.
  int src_anchor(const StitchConfig& c) const {
    return direction == StitchDirection::fast_to_slow ? c.fast_anchor : c.slow_anchor;
  }
  int dst_anchor(const StitchConfig& c) const {
    return direction == StitchDirection::fast_to_slow ? c.slow_anchor : c.fast_anchor;
  }
};

// Enumerates anchors + per-adjacent-pair, per-stage stitches and allocates
// zero-weight shared layers. Layers still need kaiming_init or ls_init.
// nearest_only=false (all-pairs spaces) is rejected, not half-supported.
StitchSpace space_build(std::vector<AnchorModel> anchors, const WindowSpec& window,
                        bool nearest_only = true,
                        StitchDirection direction = StitchDirection::fast_to_slow);

// weight ~ Normal(0, variance 2/D1), bias zero.
void kaiming_init(StitchingLayer& layer, Rng& rng);

// weight <- pinv(a_feats, rcond)·b_feats (the least-squares minimizer of
// ‖A·M − B‖_F), bias zero. Returns the residual, also recorded on the layer.
// Fewer rows than columns marks the layer underdetermined (recorded, legal).
double ls_init(StitchingLayer& layer, const Tensor& a_feats, const Tensor& b_feats,
               float rcond = 1e-6f);

// Boundary activations for a layer's canonical (l, m): token-flattened
// [batch·tokens × D] prefix activations of the source and target anchors.
std::pair<Tensor, Tensor> collect_boundary_features(const StitchSpace& space, int layer_id,
                                                    const Tensor& samples);

// Executes config `id`: the anchor itself, or prefix -> layer -> suffix.
// Differentiable end to end whenever the involved parameters require grad.
Tensor stitch_forward(const StitchSpace& space, int id, const Tensor& x);

// As stitch_forward, for models/layer tensors of any scalar type (the float
// path above is the space-bound convenience wrapper).
template <typename T>
TensorT<T> stitched_path_forward(const AnchorModelT<T>& src, const AnchorModelT<T>& dst,
                                 const TensorT<T>& layer_w, const TensorT<T>& layer_b, int l,
                                 int m, const TensorT<T>& x) {
  return forward_suffix(dst, linear(forward_prefix(src, x, l), layer_w, layer_b), m);
}

// Exact cost of one config under the documented counting convention.
CostReport stitch_cost(const StitchSpace& space, int id);

// Parameters stored once and shared by every config: all anchors plus all
// stitching layers.
inline int64_t space_param_count(const StitchSpace& space) {
  int64_t n = 0;
  for (const auto& a : space.anchors) n += a.param_count();
  for (const auto& l : space.layers) n += l.weight.numel() + l.bias.numel();
  return n;
}

}  // namespace snnet
