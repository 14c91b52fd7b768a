#include "snnet/stitching.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "snnet/linalg.hpp"
#include "snnet/ops.hpp"

namespace snnet {

namespace {

struct Windows {
  std::vector<int> starts;  // 1-based first index of each window
  int kernel = 0;

  bool contains(int w, int i) const {
    return i >= starts[static_cast<size_t>(w)] && i < starts[static_cast<size_t>(w)] + kernel;
  }
  // Lowest window containing both, or -1.
  int lowest_joint(int a, int b) const {
    for (int w = 0; w < static_cast<int>(starts.size()); ++w)
      if (contains(w, a) && contains(w, b)) return w;
    return -1;
  }
};

Windows make_windows(int depth, const WindowSpec& window) {
  window.validate();
  if (window.kernel > depth)
    throw ValueError(strf("window kernel ", window.kernel, " exceeds depth ", depth,
                          ": empty window set"));
  Windows w;
  w.kernel = window.kernel;
  for (int i = 1; i + window.kernel - 1 <= depth; i += window.stride) w.starts.push_back(i);
  return w;
}

// round-half-up(l · L2 / L1) clamped to [1, L2], in exact integer arithmetic.
int align_index(int l, int depth_src, int depth_dst) {
  const int64_t a = (2LL * l * depth_dst + depth_src) / (2LL * depth_src);
  return static_cast<int>(std::clamp<int64_t>(a, 1, depth_dst));
}

}  // namespace

std::vector<StitchPoint> enumerate_unpaired(int depth_src, int depth_dst,
                                            const WindowSpec& window) {
  if (depth_src < 1 || depth_dst < 1)
    throw ValueError(strf("enumerate: depths ", depth_src, ", ", depth_dst, " must be >= 1"));
  const Windows w = make_windows(depth_dst, window);
  std::vector<StitchPoint> out;
  for (int l = 1; l <= depth_src; ++l) {
    const int a = align_index(l, depth_src, depth_dst);
    for (int m = 1; m <= depth_dst; ++m) {
      const int joint = w.lowest_joint(a, m);
      if (joint >= 0) out.push_back({l, m, joint});
    }
  }
  return out;
}

std::vector<StitchPoint> enumerate_paired(int depth, const WindowSpec& window) {
  return enumerate_unpaired(depth, depth, window);
}

StitchSpace space_build(std::vector<AnchorModel> anchors, const WindowSpec& window,
                        bool nearest_only, StitchDirection direction) {
  window.validate();
  if (anchors.size() < 2)
    throw ValueError(strf("space: need at least 2 anchors, got ", anchors.size()));
  if (!nearest_only)
    throw ValueError(
        "space: nearest_only=false (skip-pair / chain stitches) is not supported; "
        "only adjacent anchor pairs can be stitched");

  for (size_t i = 1; i < anchors.size(); ++i) {
    const auto& a = anchors[0].spec;
    const auto& b = anchors[i].spec;
    if (b.tokens != a.tokens || b.feature_dim != a.feature_dim ||
        b.num_classes != a.num_classes)
      throw ValueError(strf("space: anchors ", a.name, " and ", b.name,
                            " disagree on tokens/features/classes"));
    if (b.num_stages() != a.num_stages())
      throw ValueError(strf("space: anchors ", a.name, " (", a.num_stages(), " stages) and ",
                            b.name, " (", b.num_stages(), " stages) cannot be stitched"));
  }
  for (size_t i = 0; i + 1 < anchors.size(); ++i) {
    const int64_t fa = anchor_cost(anchors[i].spec).flops;
    const int64_t fb = anchor_cost(anchors[i + 1].spec).flops;
    if (fa == fb)
      throw ValueError(strf("space: anchors ", anchors[i].spec.name, " and ",
                            anchors[i + 1].spec.name, " have equal flops ", fa,
                            "; ordering is ambiguous"));
    if (fa > fb)
      throw ValueError(strf("space: anchors not in ascending flops order (",
                            anchors[i].spec.name, " > ", anchors[i + 1].spec.name, ")"));
  }

  StitchSpace space;
  space.anchors = std::move(anchors);
  space.window = window;
  space.nearest_only = nearest_only;
  space.direction = direction;

  for (int i = 0; i < static_cast<int>(space.anchors.size()); ++i) {
    StitchConfig c;
    c.kind = ConfigKind::anchor;
    c.fast_anchor = c.slow_anchor = i;
    space.configs.push_back(c);
  }

  const bool fts = direction == StitchDirection::fast_to_slow;
  for (int pair = 0; pair + 1 < static_cast<int>(space.anchors.size()); ++pair) {
    const AnchorSpec& fast = space.anchors[static_cast<size_t>(pair)].spec;
    const AnchorSpec& slow = space.anchors[static_cast<size_t>(pair) + 1].spec;
    const AnchorSpec& src = fts ? fast : slow;
    const AnchorSpec& dst = fts ? slow : fast;
    std::map<int, int> window_layer;  // window_id -> layer index, per stage
    for (int stage = 0; stage < src.num_stages(); ++stage) {
      window_layer.clear();
      const auto points = enumerate_unpaired(src.stages[static_cast<size_t>(stage)].depth,
                                             dst.stages[static_cast<size_t>(stage)].depth,
                                             window);
      const int src_base = src.stage_first_block(stage) - 1;
      const int dst_base = dst.stage_first_block(stage) - 1;
      const int d1 = src.dims[static_cast<size_t>(stage)];
      const int d2 = dst.dims[static_cast<size_t>(stage)];
      for (const auto& p : points) {
        StitchConfig c;
        c.kind = ConfigKind::stitch;
        c.fast_anchor = pair;
        c.slow_anchor = pair + 1;
        c.stage = stage;
        c.l = src_base + p.l;
        c.m = dst_base + p.m;
        auto it = window_layer.find(p.window_id);
        if (it == window_layer.end()) {
          StitchingLayer layer;
          layer.weight = Tensor::zeros({d1, d2});
          layer.bias = Tensor::zeros({d2});
          layer.pair = pair;
          layer.stage = stage;
          layer.window_id = p.window_id;
          layer.canonical_l = c.l;
          layer.canonical_m = c.m;
          it = window_layer.emplace(p.window_id, static_cast<int>(space.layers.size())).first;
          space.layers.push_back(std::move(layer));
        }
        c.layer_id = it->second;
        space.configs.push_back(c);
      }
    }
  }
  return space;
}

void kaiming_init(StitchingLayer& layer, Rng& rng) {
  const int d1 = layer.weight.dim(0);
  const float std_dev = static_cast<float>(std::sqrt(2.0 / d1));
  for (auto& v : layer.weight.data_mut()) v = static_cast<float>(rng.normal()) * std_dev;
  std::fill(layer.bias.data_mut().begin(), layer.bias.data_mut().end(), 0.0f);
  layer.init_method = InitMethod::kaiming;
  layer.ls_residual = -1.0;
  layer.underdetermined = false;
}

double ls_init(StitchingLayer& layer, const Tensor& a_feats, const Tensor& b_feats,
               float rcond) {
  if (a_feats.ndim() != 2 || b_feats.ndim() != 2 || a_feats.dim(0) != b_feats.dim(0))
    throw ValueError(strf("ls_init: feature shapes ", shape_str(a_feats.shape()), " vs ",
                          shape_str(b_feats.shape()), " (row counts must match)"));
  const int rows = a_feats.dim(0), d1 = a_feats.dim(1), d2 = b_feats.dim(1);
  if (d1 != layer.weight.dim(0) || d2 != layer.weight.dim(1))
    throw ValueError(strf("ls_init: features [", rows, " x ", d1, "] -> [", rows, " x ", d2,
                          "] do not fit layer ", shape_str(layer.weight.shape())));
  auto m = matmul(pinv(a_feats, rcond), b_feats);  // [d1 × d2]

  // Residual ‖A·M − B‖_F in f64.
  std::vector<double> ad(a_feats.data().begin(), a_feats.data().end());
  std::vector<double> md(m.data().begin(), m.data().end());
  std::vector<double> am(static_cast<size_t>(rows) * d2, 0.0);
  mm_nn_acc(ad.data(), md.data(), am.data(), rows, d1, d2);
  double sq = 0.0;
  for (size_t i = 0; i < am.size(); ++i) {
    const double diff = am[i] - static_cast<double>(b_feats.data()[i]);
    sq += diff * diff;
  }
  const double residual = std::sqrt(sq);

  std::copy(m.data().begin(), m.data().end(), layer.weight.data_mut().begin());
  std::fill(layer.bias.data_mut().begin(), layer.bias.data_mut().end(), 0.0f);
  layer.init_method = InitMethod::least_squares;
  layer.ls_residual = residual;
  layer.underdetermined = rows < d1;
  return residual;
}

std::pair<Tensor, Tensor> collect_boundary_features(const StitchSpace& space, int layer_id,
                                                    const Tensor& samples) {
  if (layer_id < 0 || layer_id >= static_cast<int>(space.layers.size()))
    throw ValueError(strf("layer id ", layer_id, " outside [0, ", space.layers.size(), ")"));
  const auto& layer = space.layers[static_cast<size_t>(layer_id)];
  const bool fts = space.direction == StitchDirection::fast_to_slow;
  const auto& src = space.anchors[static_cast<size_t>(fts ? layer.pair : layer.pair + 1)];
  const auto& dst = space.anchors[static_cast<size_t>(fts ? layer.pair + 1 : layer.pair)];
  NoGradGuard ng;
  auto flatten = [](Tensor t) {
    return reshape(t, {t.dim(0) * t.dim(1), t.dim(2)});
  };
  return {flatten(forward_prefix(src, samples, layer.canonical_l)),
          flatten(forward_prefix(dst, samples, layer.canonical_m))};
}

Tensor stitch_forward(const StitchSpace& space, int id, const Tensor& x) {
  const auto& c = space.config(id);
  if (c.kind == ConfigKind::anchor)
    return anchor_forward(space.anchors[static_cast<size_t>(c.fast_anchor)], x);
  const auto& layer = space.layers[static_cast<size_t>(c.layer_id)];
  return stitched_path_forward(space.anchors[static_cast<size_t>(space.src_anchor(c))],
                               space.anchors[static_cast<size_t>(space.dst_anchor(c))],
                               layer.weight, layer.bias, c.l, c.m, x);
}

CostReport stitch_cost(const StitchSpace& space, int id) {
  const auto& c = space.config(id);
  if (c.kind == ConfigKind::anchor)
    return anchor_cost(space.anchors[static_cast<size_t>(c.fast_anchor)].spec);
  const auto& src = space.anchors[static_cast<size_t>(space.src_anchor(c))].spec;
  const auto& dst = space.anchors[static_cast<size_t>(space.dst_anchor(c))].spec;
  const auto& layer = space.layers[static_cast<size_t>(c.layer_id)];
  CostReport r;
  r.add(prefix_cost(src, c.l), src.name + ".");
  r.add(stitch_layer_cost(src.tokens, layer.weight.dim(0), layer.weight.dim(1)), "");
  r.add(suffix_cost(dst, c.m), dst.name + ".");
  return r;
}

}  // namespace snnet
