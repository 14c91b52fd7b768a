#pragma once

// Toy transformer anchors: spec types, parameter layout, initialization, and
// the forward pass split into prefix (embed + blocks 1..l) and suffix
// (blocks m+1..L + head) so a network can be cut at any block boundary.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "snnet/common.hpp"
#include "snnet/ops.hpp"
#include "snnet/rng.hpp"
#include "snnet/tensor.hpp"

namespace snnet {

struct StageSpec {
  int depth = 1;
  // Whether a linear projection from the previous stage's width runs before
  // this stage's first block. Never set on stage 0.
  bool dim_transition = false;
};

struct AnchorSpec {
  std::string name;
  std::vector<StageSpec> stages;
  std::vector<int> dims;   // embed width per stage
  std::vector<int> heads;  // attention heads per stage
  int tokens = 16;
  int feature_dim = 8;
  int num_classes = 10;
  double mlp_ratio = 4.0;

  int num_stages() const { return static_cast<int>(stages.size()); }

  int total_depth() const {
    int d = 0;
    for (const auto& s : stages) d += s.depth;
    return d;
  }

  // Stage index of 1-based global block g.
  int stage_of_block(int g) const {
    int acc = 0;
    for (int t = 0; t < num_stages(); ++t) {
      acc += stages[static_cast<size_t>(t)].depth;
      if (g <= acc) return t;
    }
    throw ValueError(strf(name, ": block ", g, " beyond depth ", total_depth()));
  }

  // 1-based global index of the first block of stage t.
  int stage_first_block(int t) const {
    int acc = 1;
    for (int i = 0; i < t; ++i) acc += stages[static_cast<size_t>(i)].depth;
    return acc;
  }

  int dim_of_block(int g) const { return dims[static_cast<size_t>(stage_of_block(g))]; }
  int heads_of_block(int g) const { return heads[static_cast<size_t>(stage_of_block(g))]; }

  int mlp_hidden(int stage) const {
    const int h = static_cast<int>(std::lround(dims[static_cast<size_t>(stage)] * mlp_ratio));
    return h;
  }

  void validate() const {
    if (name.empty()) throw ValueError("anchor spec: empty name");
    if (stages.empty()) throw ValueError(strf(name, ": at least one stage required"));
    if (dims.size() != stages.size() || heads.size() != stages.size())
      throw ValueError(strf(name, ": stages/dims/heads length mismatch (", stages.size(), "/",
                            dims.size(), "/", heads.size(), ")"));
    if (stages[0].dim_transition)
      throw ValueError(strf(name, ": stage 0 cannot carry a dim transition"));
    for (size_t t = 0; t < stages.size(); ++t) {
      if (stages[t].depth < 1) throw ValueError(strf(name, ": stage ", t, " depth must be >= 1"));
      if (dims[t] < 1 || heads[t] < 1)
        throw ValueError(strf(name, ": stage ", t, " dims/heads must be >= 1"));
      if (dims[t] % heads[t] != 0)
        throw ValueError(strf(name, ": stage ", t, " width ", dims[t], " not divisible by ",
                              heads[t], " heads"));
      if (t > 0 && dims[t] != dims[t - 1] && !stages[t].dim_transition)
        throw ValueError(strf(name, ": stage ", t, " changes width ", dims[t - 1], " -> ", dims[t],
                              " without a dim transition"));
      if (mlp_hidden(static_cast<int>(t)) < 1)
        throw ValueError(strf(name, ": mlp_ratio ", mlp_ratio, " gives empty hidden layer"));
    }
    if (tokens < 1 || feature_dim < 1 || num_classes < 2)
      throw ValueError(strf(name, ": bad tokens/features/classes ", tokens, "/", feature_dim, "/",
                            num_classes));
    if (!(mlp_ratio > 0)) throw ValueError(strf(name, ": mlp_ratio must be positive"));
  }
};

struct Provenance {
  uint64_t seed = 0;
  int epochs = 0;
  double val_accuracy = 0.0;
  bool trained = false;
};

template <typename T>
struct BlockParamsT {
  TensorT<T> ln1_g, ln1_b;
  TensorT<T> qkv_w, qkv_b;  // fused query/key/value projection, [D × 3D]
  TensorT<T> proj_w, proj_b;
  TensorT<T> ln2_g, ln2_b;
  TensorT<T> fc1_w, fc1_b;
  TensorT<T> fc2_w, fc2_b;
};

template <typename T>
struct NamedParamT {
  std::string name;
  TensorT<T> tensor;  // shares storage with the owning model
};

template <typename T>
struct AnchorModelT {
  AnchorSpec spec;
  TensorT<T> embed_w, embed_b;
  std::vector<TensorT<T>> trans_w, trans_b;  // one per stage; undefined when absent
  std::vector<BlockParamsT<T>> blocks;       // indexed by global block - 1
  TensorT<T> head_ln_g, head_ln_b;
  TensorT<T> head_w, head_b;
  Provenance provenance;

  // Allocates every parameter tensor. Linear weights draw from
  // Normal(0, 1/fan_in); norms start at identity, biases at zero.
  static AnchorModelT create(const AnchorSpec& spec, Rng& rng) {
    spec.validate();
    AnchorModelT m;
    m.spec = spec;
    auto lecun = [&rng](int fan_in, std::vector<int> shape) {
      return TensorT<T>::randn(std::move(shape), rng,
                               static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in))));
    };
    const int d0 = spec.dims[0];
    m.embed_w = lecun(spec.feature_dim, {spec.feature_dim, d0});
    m.embed_b = TensorT<T>::zeros({d0});
    m.trans_w.resize(spec.stages.size());
    m.trans_b.resize(spec.stages.size());
    for (int t = 1; t < spec.num_stages(); ++t) {
      if (!spec.stages[static_cast<size_t>(t)].dim_transition) continue;
      const int din = spec.dims[static_cast<size_t>(t) - 1];
      const int dout = spec.dims[static_cast<size_t>(t)];
      m.trans_w[static_cast<size_t>(t)] = lecun(din, {din, dout});
      m.trans_b[static_cast<size_t>(t)] = TensorT<T>::zeros({dout});
    }
    const int L = spec.total_depth();
    for (int g = 1; g <= L; ++g) {
      const int t = spec.stage_of_block(g);
      const int D = spec.dims[static_cast<size_t>(t)];
      const int H = spec.mlp_hidden(t);
      BlockParamsT<T> b;
      b.ln1_g = TensorT<T>::filled({D}, T{1});
      b.ln1_b = TensorT<T>::zeros({D});
      b.qkv_w = lecun(D, {D, 3 * D});
      b.qkv_b = TensorT<T>::zeros({3 * D});
      b.proj_w = lecun(D, {D, D});
      b.proj_b = TensorT<T>::zeros({D});
      b.ln2_g = TensorT<T>::filled({D}, T{1});
      b.ln2_b = TensorT<T>::zeros({D});
      b.fc1_w = lecun(D, {D, H});
      b.fc1_b = TensorT<T>::zeros({H});
      b.fc2_w = lecun(H, {H, D});
      b.fc2_b = TensorT<T>::zeros({D});
      m.blocks.push_back(std::move(b));
    }
    const int dl = spec.dims.back();
    m.head_ln_g = TensorT<T>::filled({dl}, T{1});
    m.head_ln_b = TensorT<T>::zeros({dl});
    m.head_w = lecun(dl, {dl, spec.num_classes});
    m.head_b = TensorT<T>::zeros({spec.num_classes});
    return m;
  }

  // Stable parameter enumeration; the checkpoint directory, the optimizer,
  // and requires_grad toggles all walk this order.
  std::vector<NamedParamT<T>> named_params() const {
    std::vector<NamedParamT<T>> out;
    out.push_back({"embed.w", embed_w});
    out.push_back({"embed.b", embed_b});
    for (int t = 1; t < spec.num_stages(); ++t) {
      if (!spec.stages[static_cast<size_t>(t)].dim_transition) continue;
      out.push_back({strf("stage", t, ".transition.w"), trans_w[static_cast<size_t>(t)]});
      out.push_back({strf("stage", t, ".transition.b"), trans_b[static_cast<size_t>(t)]});
    }
    for (size_t i = 0; i < blocks.size(); ++i) {
      const auto& b = blocks[i];
      const std::string p = strf("block", i, ".");
      out.push_back({p + "ln1.g", b.ln1_g});
      out.push_back({p + "ln1.b", b.ln1_b});
      out.push_back({p + "qkv.w", b.qkv_w});
      out.push_back({p + "qkv.b", b.qkv_b});
      out.push_back({p + "proj.w", b.proj_w});
      out.push_back({p + "proj.b", b.proj_b});
      out.push_back({p + "ln2.g", b.ln2_g});
      out.push_back({p + "ln2.b", b.ln2_b});
      out.push_back({p + "fc1.w", b.fc1_w});
      out.push_back({p + "fc1.b", b.fc1_b});
      out.push_back({p + "fc2.w", b.fc2_w});
      out.push_back({p + "fc2.b", b.fc2_b});
    }
    out.push_back({"head.ln.g", head_ln_g});
    out.push_back({"head.ln.b", head_ln_b});
    out.push_back({"head.out.w", head_w});
    out.push_back({"head.out.b", head_b});
    return out;
  }

  void set_requires_grad(bool v) {
    for (auto& p : named_params()) p.tensor.set_requires_grad(v);
  }

  // Deep copy: parameter storage is duplicated, not shared.
  AnchorModelT clone() const {
    AnchorModelT m;
    m.spec = spec;
    m.provenance = provenance;
    m.embed_w = embed_w.clone();
    m.embed_b = embed_b.clone();
    m.trans_w.resize(trans_w.size());
    m.trans_b.resize(trans_b.size());
    for (size_t t = 0; t < trans_w.size(); ++t) {
      if (trans_w[t].defined()) m.trans_w[t] = trans_w[t].clone();
      if (trans_b[t].defined()) m.trans_b[t] = trans_b[t].clone();
    }
    for (const auto& b : blocks)
      m.blocks.push_back({b.ln1_g.clone(), b.ln1_b.clone(), b.qkv_w.clone(), b.qkv_b.clone(),
                          b.proj_w.clone(), b.proj_b.clone(), b.ln2_g.clone(), b.ln2_b.clone(),
                          b.fc1_w.clone(), b.fc1_b.clone(), b.fc2_w.clone(), b.fc2_b.clone()});
    m.head_ln_g = head_ln_g.clone();
    m.head_ln_b = head_ln_b.clone();
    m.head_w = head_w.clone();
    m.head_b = head_b.clone();
    return m;
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& p : named_params()) n += p.tensor.numel();
    return n;
  }
};

using AnchorModel = AnchorModelT<float>;

namespace detail {

template <typename T>
TensorT<T> block_forward(const AnchorModelT<T>& m, int g, const TensorT<T>& h) {
  const auto& b = m.blocks[static_cast<size_t>(g - 1)];
  const int H = m.spec.heads_of_block(g);
  const int hd = m.spec.dim_of_block(g) / H;
  const int D = m.spec.dim_of_block(g);

  auto h1 = layer_norm(h, b.ln1_g, b.ln1_b);
  auto qkv = linear(h1, b.qkv_w, b.qkv_b);
  auto q = split_heads(slice_last(qkv, 0, D), H);
  auto k = split_heads(slice_last(qkv, D, D), H);
  auto v = split_heads(slice_last(qkv, 2 * D, D), H);
  auto scores = scale(bmm_nt(q, k), static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd))));
  auto ctx = merge_heads(bmm_nn(softmax_last(scores), v));
  auto attended = add(h, linear(ctx, b.proj_w, b.proj_b));

  auto h2 = layer_norm(attended, b.ln2_g, b.ln2_b);
  auto mlp = linear(gelu(linear(h2, b.fc1_w, b.fc1_b)), b.fc2_w, b.fc2_b);
  return add(attended, mlp);
}

// Projection into stage t's width, when that stage opens with one.
template <typename T>
TensorT<T> maybe_transition(const AnchorModelT<T>& m, int g, const TensorT<T>& h) {
  const int t = m.spec.stage_of_block(g);
  if (t > 0 && g == m.spec.stage_first_block(t) && m.spec.stages[static_cast<size_t>(t)].dim_transition)
    return linear(h, m.trans_w[static_cast<size_t>(t)], m.trans_b[static_cast<size_t>(t)]);
  return h;
}

}  // namespace detail

// Embed + blocks 1..l. l = 0 returns the embedding alone. The activation is
// the value flowing out of block l, before any projection owned by the next
// stage (stage projections run when the consuming side enters that stage).
template <typename T>
TensorT<T> forward_prefix(const AnchorModelT<T>& m, const TensorT<T>& x, int l) {
  if (x.ndim() != 3 || x.dim(1) != m.spec.tokens || x.dim(2) != m.spec.feature_dim)
    throw ValueError(strf(m.spec.name, ": input ", shape_str(x.shape()), ", want [batch, ",
                          m.spec.tokens, ", ", m.spec.feature_dim, "]"));
  const int L = m.spec.total_depth();
  if (l < 0 || l > L)
    throw ValueError(strf(m.spec.name, ": prefix index ", l, " outside [0, ", L, "]"));
  auto h = linear(x, m.embed_w, m.embed_b);
  for (int g = 1; g <= l; ++g) h = detail::block_forward(m, g, detail::maybe_transition(m, g, h));
  return h;
}

// Blocks m+1..L + head. m = total depth runs the head alone.
template <typename T>
TensorT<T> forward_suffix(const AnchorModelT<T>& m, const TensorT<T>& a, int entry) {
  const int L = m.spec.total_depth();
  if (entry < 0 || entry > L)
    throw ValueError(strf(m.spec.name, ": suffix index ", entry, " outside [0, ", L, "]"));
  const int want = (entry == 0) ? m.spec.dims[0] : m.spec.dim_of_block(entry);
  if (a.ndim() != 3 || a.dim(1) != m.spec.tokens || a.dim(2) != want)
    throw ValueError(strf(m.spec.name, ": suffix at ", entry, " wants activation [batch, ",
                          m.spec.tokens, ", ", want, "], got ", shape_str(a.shape())));
  auto h = a;
  for (int g = entry + 1; g <= L; ++g)
    h = detail::block_forward(m, g, detail::maybe_transition(m, g, h));
  auto pooled = mean_axis(layer_norm(h, m.head_ln_g, m.head_ln_b), 1);
  return linear(pooled, m.head_w, m.head_b);
}

template <typename T>
TensorT<T> anchor_forward(const AnchorModelT<T>& m, const TensorT<T>& x) {
  return forward_suffix(m, forward_prefix(m, x, 0), 0);
}

// The default three-anchor family: widths and depths grow together so the
// space exercises unpaired (unequal-depth) enumeration.
inline std::vector<AnchorSpec> default_family(int tokens = 16, int feature_dim = 8,
                                              int num_classes = 10) {
  auto mk = [&](std::string name, int depth, int dim, int heads) {
    AnchorSpec s;
    s.name = std::move(name);
    s.stages = {StageSpec{depth, false}};
    s.dims = {dim};
    s.heads = {heads};
    s.tokens = tokens;
    s.feature_dim = feature_dim;
    s.num_classes = num_classes;
    return s;
  };
  return {mk("ti", 4, 32, 2), mk("s", 8, 64, 4), mk("b", 12, 96, 6)};
}

}  // namespace snnet
