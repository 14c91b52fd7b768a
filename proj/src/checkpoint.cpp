#include "snnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "json.hpp"

namespace snnet {
namespace {

using nlohmann::json;  // ordered by key (std::map), so dumps are canonical

constexpr char kMagic[4] = {'S', 'N', 'N', 'T'};

void append_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t read_u32(const std::string& buf, size_t pos) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + static_cast<size_t>(i)]))
         << (8 * i);
  return v;
}

uint64_t read_u64(const std::string& buf, size_t pos) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + static_cast<size_t>(i)]))
         << (8 * i);
  return v;
}

// ---------------------------------------------------------------------------
// Container primitives

struct Container {
  json meta;                                          // everything except "tensors"
  std::map<std::string, Tensor> tensors;              // sorted by name = payload order
};

void write_container(const std::string& path, Container c) {
  json dir = json::object();
  uint64_t offset = 0;
  for (const auto& [name, t] : c.tensors) {
    json entry;
    entry["offset"] = offset;
    entry["shape"] = t.shape();
    dir[name] = std::move(entry);
    offset += static_cast<uint64_t>(t.numel()) * sizeof(float);
  }
  c.meta["tensors"] = std::move(dir);
  const std::string manifest = c.meta.dump();

  std::string out;
  out.reserve(16 + manifest.size() + offset);
  out.append(kMagic, 4);
  append_u32(out, kCheckpointVersion);
  append_u64(out, manifest.size());
  out += manifest;
  for (const auto& [name, t] : c.tensors) {
    const auto span = t.data();
    if constexpr (std::endian::native == std::endian::little) {
      const size_t pos = out.size();
      out.resize(pos + span.size() * sizeof(float));
      std::memcpy(out.data() + pos, span.data(), span.size() * sizeof(float));
    } else {
      for (float f : span) append_u32(out, std::bit_cast<uint32_t>(f));
    }
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ValueError(strf("cannot open ", path, " for writing"));
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  f.flush();
  if (!f) throw ValueError(strf("short write to ", path));
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValueError(strf("cannot open ", path));
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (f.bad()) throw ValueError(strf("read error on ", path));
  return buf;
}

json parse_manifest(const std::string& path, const std::string& buf, size_t* payload_pos) {
  if (buf.size() < 16) throw ValueError(strf(path, ": too short to be a checkpoint"));
  if (std::memcmp(buf.data(), kMagic, 4) != 0)
    throw ValueError(strf(path, ": bad magic, not a checkpoint file"));
  const uint32_t version = read_u32(buf, 4);
  if (version != kCheckpointVersion)
    throw ValueError(
        strf(path, ": unsupported format version ", version, " (expected ", kCheckpointVersion, ")"));
  const uint64_t mlen = read_u64(buf, 8);
  if (16 + mlen > buf.size())
    throw ValueError(strf(path, ": manifest length ", mlen, " exceeds file size ", buf.size()));
  json meta;
  try {
    meta = json::parse(buf.substr(16, mlen));
  } catch (const json::exception& e) {
    throw ValueError(strf(path, ": malformed manifest: ", e.what()));
  }
  if (payload_pos) *payload_pos = 16 + static_cast<size_t>(mlen);
  return meta;
}

Container read_container(const std::string& path) {
  const std::string buf = slurp(path);
  size_t payload_pos = 0;
  json meta = parse_manifest(path, buf, &payload_pos);
  const size_t payload_bytes = buf.size() - payload_pos;

  Container c;
  try {
    const json dir = meta.at("tensors");
    if (!dir.is_object()) throw ValueError(strf(path, ": tensor directory is not an object"));
    // Entries must tile the payload exactly, in name order with no gaps.
    uint64_t expect_offset = 0;
    for (const auto& [name, entry] : dir.items()) {
      const uint64_t offset = entry.at("offset").get<uint64_t>();
      const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
      int64_t numel = 1;
      for (int d : shape) {
        if (d < 1) throw ValueError(strf(path, ": tensor ", name, " has non-positive dim ", d));
        numel *= d;
      }
      if (offset != expect_offset)
        throw ValueError(strf(path, ": tensor ", name, " at offset ", offset, ", expected ",
                              expect_offset, "; directory does not tile the payload"));
      const uint64_t nbytes = static_cast<uint64_t>(numel) * sizeof(float);
      if (offset + nbytes > payload_bytes)
        throw ValueError(strf(path, ": tensor ", name, " extends past end of payload"));
      std::vector<float> data(static_cast<size_t>(numel));
      if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(data.data(), buf.data() + payload_pos + offset, nbytes);
      } else {
        for (size_t i = 0; i < data.size(); ++i)
          data[i] = std::bit_cast<float>(read_u32(buf, payload_pos + offset + i * 4));
      }
      c.tensors.emplace(name, Tensor::from(shape, std::move(data)));
      expect_offset = offset + nbytes;
    }
    if (expect_offset != payload_bytes)
      throw ValueError(strf(path, ": payload has ", payload_bytes, " bytes but directory covers ",
                            expect_offset));
    meta.erase("tensors");
    c.meta = std::move(meta);
  } catch (const json::exception& e) {
    throw ValueError(strf(path, ": malformed manifest: ", e.what()));
  }
  return c;
}

std::string meta_kind(const std::string& path, const json& meta) {
  try {
    return meta.at("kind").get<std::string>();
  } catch (const json::exception&) {
    throw ValueError(strf(path, ": manifest has no kind field"));
  }
}

void require_kind(const std::string& path, const json& meta, const std::string& want) {
  const std::string got = meta_kind(path, meta);
  if (got != want)
    throw ValueError(strf(path, ": expected a ", want, " checkpoint, found ", got));
}

Tensor take_tensor(const std::string& path, Container& c, const std::string& name,
                   const std::vector<int>& shape) {
  auto it = c.tensors.find(name);
  if (it == c.tensors.end()) throw ValueError(strf(path, ": missing tensor ", name));
  if (it->second.shape() != shape)
    throw ValueError(strf(path, ": tensor ", name, " has shape ", shape_str(it->second.shape()),
                          ", expected ", shape_str(shape)));
  Tensor t = std::move(it->second);
  c.tensors.erase(it);
  return t;
}

void require_drained(const std::string& path, const Container& c) {
  if (!c.tensors.empty())
    throw ValueError(strf(path, ": unexpected tensor ", c.tensors.begin()->first));
}

// ---------------------------------------------------------------------------
// Metadata converters

json spec_to_json(const AnchorSpec& s) {
  json stages = json::array();
  for (const auto& st : s.stages)
    stages.push_back(json{{"depth", st.depth}, {"transition", st.dim_transition}});
  return json{{"name", s.name},           {"stages", std::move(stages)},
              {"dims", s.dims},           {"heads", s.heads},
              {"tokens", s.tokens},       {"feature_dim", s.feature_dim},
              {"num_classes", s.num_classes}, {"mlp_ratio", s.mlp_ratio}};
}

AnchorSpec spec_from_json(const json& j) {
  AnchorSpec s;
  s.name = j.at("name").get<std::string>();
  for (const auto& st : j.at("stages"))
    s.stages.push_back({st.at("depth").get<int>(), st.at("transition").get<bool>()});
  s.dims = j.at("dims").get<std::vector<int>>();
  s.heads = j.at("heads").get<std::vector<int>>();
  s.tokens = j.at("tokens").get<int>();
  s.feature_dim = j.at("feature_dim").get<int>();
  s.num_classes = j.at("num_classes").get<int>();
  s.mlp_ratio = j.at("mlp_ratio").get<double>();
  s.validate();
  return s;
}

json provenance_to_json(const Provenance& p) {
  return json{{"seed", p.seed},
              {"epochs", p.epochs},
              {"val_accuracy", p.val_accuracy},
              {"trained", p.trained}};
}

Provenance provenance_from_json(const json& j) {
  Provenance p;
  p.seed = j.at("seed").get<uint64_t>();
  p.epochs = j.at("epochs").get<int>();
  p.val_accuracy = j.at("val_accuracy").get<double>();
  p.trained = j.at("trained").get<bool>();
  return p;
}

void put_anchor_tensors(Container& c, const std::string& prefix, const AnchorModel& m) {
  for (const auto& p : m.named_params()) c.tensors.emplace(prefix + p.name, p.tensor);
}

void fill_anchor_tensors(const std::string& path, Container& c, const std::string& prefix,
                         AnchorModel& m) {
  for (auto& p : m.named_params()) {
    Tensor t = take_tensor(path, c, prefix + p.name, p.tensor.shape());
    std::copy(t.data().begin(), t.data().end(), p.tensor.data_mut().begin());
  }
}

AnchorModel anchor_from_parts(const std::string& path, Container& c, const std::string& prefix,
                              const json& spec_j, const json& prov_j) {
  const AnchorSpec spec = spec_from_json(spec_j);
  Rng scratch(0);  // every parameter is overwritten from the payload below
  AnchorModel m = AnchorModel::create(spec, scratch);
  m.provenance = provenance_from_json(prov_j);
  fill_anchor_tensors(path, c, prefix, m);
  return m;
}

const char* direction_name(StitchDirection d) {
  return d == StitchDirection::fast_to_slow ? "fast_to_slow" : "slow_to_fast";
}

StitchDirection direction_from_name(const std::string& path, const std::string& s) {
  if (s == "fast_to_slow") return StitchDirection::fast_to_slow;
  if (s == "slow_to_fast") return StitchDirection::slow_to_fast;
  throw ValueError(strf(path, ": unknown stitch direction ", s));
}

const char* init_name(InitMethod m) {
  return m == InitMethod::least_squares ? "least_squares" : "kaiming";
}

InitMethod init_from_name(const std::string& path, const std::string& s) {
  if (s == "least_squares") return InitMethod::least_squares;
  if (s == "kaiming") return InitMethod::kaiming;
  throw ValueError(strf(path, ": unknown init method ", s));
}

}  // namespace

// ---------------------------------------------------------------------------
// Public API

std::string checkpoint_kind(const std::string& path) {
  const std::string buf = slurp(path);
  return meta_kind(path, parse_manifest(path, buf, nullptr));
}

void save_dataset(const std::string& path, const SyntheticTask& task, const Dataset& data) {
  task.validate();
  Container c;
  c.meta["kind"] = "dataset";
  c.meta["task"] = json{{"seed", task.seed},
                        {"train_size", task.train_size},
                        {"val_size", task.val_size},
                        {"noise_rate", task.noise_rate},
                        {"tokens", task.tokens},
                        {"feature_dim", task.feature_dim},
                        {"num_classes", task.num_classes}};
  auto put_split = [&](const std::string& prefix, const LabeledSet& s) {
    std::vector<float> y(s.y.begin(), s.y.end());
    const int rows = static_cast<int>(y.size());
    c.tensors.emplace(prefix + ".x", s.x);
    c.tensors.emplace(prefix + ".y", Tensor::from({rows}, std::move(y)));
  };
  put_split("train", data.train);
  put_split("val", data.val);
  write_container(path, std::move(c));
}

DatasetCheckpoint load_dataset(const std::string& path) {
  Container c = read_container(path);
  require_kind(path, c.meta, "dataset");
  DatasetCheckpoint out;
  try {
    const json& t = c.meta.at("task");
    out.task.seed = t.at("seed").get<uint64_t>();
    out.task.train_size = t.at("train_size").get<int>();
    out.task.val_size = t.at("val_size").get<int>();
    out.task.noise_rate = t.at("noise_rate").get<double>();
    out.task.tokens = t.at("tokens").get<int>();
    out.task.feature_dim = t.at("feature_dim").get<int>();
    out.task.num_classes = t.at("num_classes").get<int>();
  } catch (const json::exception& e) {
    throw ValueError(strf(path, ": malformed manifest: ", e.what()));
  }
  out.task.validate();
  auto take_split = [&](const std::string& prefix, int rows) {
    LabeledSet s;
    s.x = take_tensor(path, c, prefix + ".x", {rows, out.task.tokens, out.task.feature_dim});
    Tensor y = take_tensor(path, c, prefix + ".y", {rows});
    s.y.reserve(static_cast<size_t>(rows));
    for (float v : y.data()) {
      const int label = static_cast<int>(v);
      if (static_cast<float>(label) != v || label < 0 || label >= out.task.num_classes)
        throw ValueError(strf(path, ": ", prefix, ".y contains invalid label ", v));
      s.y.push_back(label);
    }
    return s;
  };
  out.data.train = take_split("train", out.task.train_size);
  out.data.val = take_split("val", out.task.val_size);
  require_drained(path, c);
  return out;
}

void save_anchor(const std::string& path, const AnchorModel& model) {
  Container c;
  c.meta["kind"] = "anchor";
  c.meta["spec"] = spec_to_json(model.spec);
  c.meta["provenance"] = provenance_to_json(model.provenance);
  put_anchor_tensors(c, "", model);
  write_container(path, std::move(c));
}

AnchorModel load_anchor(const std::string& path) {
  Container c = read_container(path);
  require_kind(path, c.meta, "anchor");
  try {
    AnchorModel m = anchor_from_parts(path, c, "", c.meta.at("spec"), c.meta.at("provenance"));
    require_drained(path, c);
    return m;
  } catch (const json::exception& e) {
    throw ValueError(strf(path, ": malformed manifest: ", e.what()));
  }
}

void save_space(const std::string& path, const StitchSpace& space, bool trained) {
  Container c;
  c.meta["kind"] = "space";
  c.meta["trained"] = trained;
  c.meta["window"] = json{{"kernel", space.window.kernel}, {"stride", space.window.stride}};
  c.meta["nearest_only"] = space.nearest_only;
  c.meta["direction"] = direction_name(space.direction);

  json anchors = json::array();
  for (const auto& m : space.anchors) {
    anchors.push_back(json{{"spec", spec_to_json(m.spec)},
                           {"provenance", provenance_to_json(m.provenance)}});
    put_anchor_tensors(c, strf("anchor.", m.spec.name, "."), m);
  }
  c.meta["anchors"] = std::move(anchors);

  json configs = json::array();
  for (const auto& cf : space.configs)
    configs.push_back(json{{"kind", cf.kind == ConfigKind::anchor ? "anchor" : "stitch"},
                           {"fast", cf.fast_anchor},
                           {"slow", cf.slow_anchor},
                           {"stage", cf.stage},
                           {"l", cf.l},
                           {"m", cf.m},
                           {"layer", cf.layer_id}});
  c.meta["configs"] = std::move(configs);

  json layers = json::array();
  for (size_t i = 0; i < space.layers.size(); ++i) {
    const auto& ly = space.layers[i];
    layers.push_back(json{{"pair", ly.pair},
                          {"stage", ly.stage},
                          {"window", ly.window_id},
                          {"init", init_name(ly.init_method)},
                          {"ls_residual", ly.ls_residual},
                          {"underdetermined", ly.underdetermined},
                          {"canonical_l", ly.canonical_l},
                          {"canonical_m", ly.canonical_m}});
    c.tensors.emplace(strf("layer", i, ".weight"), ly.weight);
    c.tensors.emplace(strf("layer", i, ".bias"), ly.bias);
  }
  c.meta["layers"] = std::move(layers);
  write_container(path, std::move(c));
}

SpaceCheckpoint load_space(const std::string& path) {
  Container c = read_container(path);
  require_kind(path, c.meta, "space");
  SpaceCheckpoint out;
  StitchSpace& sp = out.space;
  try {
    out.trained = c.meta.at("trained").get<bool>();
    sp.window.kernel = c.meta.at("window").at("kernel").get<int>();
    sp.window.stride = c.meta.at("window").at("stride").get<int>();
    sp.window.validate();
    sp.nearest_only = c.meta.at("nearest_only").get<bool>();
    sp.direction = direction_from_name(path, c.meta.at("direction").get<std::string>());

    for (const auto& aj : c.meta.at("anchors")) {
      AnchorModel m = anchor_from_parts(path, c, strf("anchor.", aj.at("spec").at("name").get<std::string>(), "."),
                                        aj.at("spec"), aj.at("provenance"));
      sp.anchors.push_back(std::move(m));
    }
    if (sp.anchors.size() < 2)
      throw ValueError(strf(path, ": space has ", sp.anchors.size(), " anchors, need at least 2"));

    const int na = static_cast<int>(sp.anchors.size());
    const json& layers_j = c.meta.at("layers");
    for (size_t i = 0; i < layers_j.size(); ++i) {
      const json& lj = layers_j[i];
      StitchingLayer ly;
      ly.pair = lj.at("pair").get<int>();
      ly.stage = lj.at("stage").get<int>();
      ly.window_id = lj.at("window").get<int>();
      ly.init_method = init_from_name(path, lj.at("init").get<std::string>());
      ly.ls_residual = lj.at("ls_residual").get<double>();
      ly.underdetermined = lj.at("underdetermined").get<bool>();
      ly.canonical_l = lj.at("canonical_l").get<int>();
      ly.canonical_m = lj.at("canonical_m").get<int>();
      if (ly.pair < 0 || ly.pair + 1 >= na)
        throw ValueError(strf(path, ": layer ", i, " references anchor pair ", ly.pair));
      const auto& src =
          sp.anchors[static_cast<size_t>(sp.direction == StitchDirection::fast_to_slow ? ly.pair : ly.pair + 1)];
      const auto& dst =
          sp.anchors[static_cast<size_t>(sp.direction == StitchDirection::fast_to_slow ? ly.pair + 1 : ly.pair)];
      if (ly.stage < 0 || ly.stage >= src.spec.num_stages())
        throw ValueError(strf(path, ": layer ", i, " references stage ", ly.stage));
      const int d1 = src.spec.dims[static_cast<size_t>(ly.stage)];
      const int d2 = dst.spec.dims[static_cast<size_t>(ly.stage)];
      ly.weight = take_tensor(path, c, strf("layer", i, ".weight"), {d1, d2});
      ly.bias = take_tensor(path, c, strf("layer", i, ".bias"), {d2});
      sp.layers.push_back(std::move(ly));
    }

    for (const auto& cj : c.meta.at("configs")) {
      StitchConfig cf;
      const std::string kind = cj.at("kind").get<std::string>();
      if (kind == "anchor") cf.kind = ConfigKind::anchor;
      else if (kind == "stitch") cf.kind = ConfigKind::stitch;
      else throw ValueError(strf(path, ": unknown config kind ", kind));
      cf.fast_anchor = cj.at("fast").get<int>();
      cf.slow_anchor = cj.at("slow").get<int>();
      cf.stage = cj.at("stage").get<int>();
      cf.l = cj.at("l").get<int>();
      cf.m = cj.at("m").get<int>();
      cf.layer_id = cj.at("layer").get<int>();
      if (cf.fast_anchor < 0 || cf.fast_anchor >= na || cf.slow_anchor < 0 || cf.slow_anchor >= na)
        throw ValueError(strf(path, ": config references anchor outside [0, ", na, ")"));
      if (cf.kind == ConfigKind::stitch &&
          (cf.layer_id < 0 || cf.layer_id >= static_cast<int>(sp.layers.size())))
        throw ValueError(strf(path, ": config references layer ", cf.layer_id, " of ",
                              sp.layers.size()));
      sp.configs.push_back(cf);
    }
  } catch (const json::exception& e) {
    throw ValueError(strf(path, ": malformed manifest: ", e.what()));
  }
  require_drained(path, c);
  return out;
}

}  // namespace snnet
