#include "snnet/runconfig.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace snnet {
namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Strips a comment starting at '#' or ';' when at line start or after
// whitespace, so values themselves can never contain either character
// mid-token without quoting (which this format does not support).
std::string strip_comment(const std::string& line) {
  for (size_t i = 0; i < line.size(); ++i) {
    if ((line[i] == '#' || line[i] == ';') &&
        (i == 0 || line[i - 1] == ' ' || line[i - 1] == '\t'))
      return line.substr(0, i);
  }
  return line;
}

struct IniFile {
  // section -> key -> value; insertion-ordered keys are not needed because
  // every consumer takes keys by name and leftovers are rejected wholesale.
  std::map<std::string, std::map<std::string, std::string>> sections;
  std::string origin;
};

IniFile scan_ini(const std::string& text, const std::string& origin) {
  IniFile ini;
  ini.origin = origin;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string body = trim(strip_comment(line));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']')
        throw ValueError(strf(origin, ":", lineno, ": unterminated section header"));
      section = trim(body.substr(1, body.size() - 2));
      if (section.empty())
        throw ValueError(strf(origin, ":", lineno, ": empty section name"));
      ini.sections[section];  // declare even if empty
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ValueError(strf(origin, ":", lineno, ": expected key = value, got \"", body, "\""));
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    if (key.empty()) throw ValueError(strf(origin, ":", lineno, ": empty key"));
    if (section.empty())
      throw ValueError(strf(origin, ":", lineno, ": key \"", key, "\" outside any [section]"));
    auto [it, fresh] = ini.sections[section].emplace(key, value);
    if (!fresh)
      throw ValueError(strf(origin, ":", lineno, ": duplicate key \"", key, "\" in [", section, "]"));
  }
  return ini;
}

// Typed view over one section that tracks which keys were consumed.
class Section {
 public:
  Section(IniFile& ini, std::string name) : ini_(ini), name_(std::move(name)) {
    auto it = ini_.sections.find(name_);
    if (it != ini_.sections.end()) kv_ = &it->second;
  }

  bool has(const std::string& key) const { return kv_ && kv_->count(key); }

  std::string raw(const std::string& key) {
    taken_.insert(key);
    return kv_->at(key);
  }

  std::string get_string(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    return raw(key);
  }

  int64_t get_int(const std::string& key, int64_t fallback) {
    if (!has(key)) return fallback;
    return parse_int(key, raw(key));
  }

  uint64_t get_uint(const std::string& key, uint64_t fallback) {
    if (!has(key)) return fallback;
    const std::string v = raw(key);
    errno = 0;
    char* end = nullptr;
    const unsigned long long parsed = std::strtoull(v.c_str(), &end, 10);
    if (errno != 0 || end != v.c_str() + v.size() || v.empty() || v.front() == '-')
      die(key, v, "an unsigned integer");
    return parsed;
  }

  double get_double(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const std::string v = raw(key);
    return parse_double(key, v);
  }

  std::vector<std::string> get_names(const std::string& key) {
    std::vector<std::string> out;
    for (const std::string& item : split(raw(key))) {
      if (item.empty()) die(key, kv_->at(key), "a comma-separated list of names");
      out.push_back(item);
    }
    if (out.empty()) die(key, kv_->at(key), "a non-empty list of names");
    return out;
  }

  std::vector<int> get_int_list(const std::string& key) {
    std::vector<int> out;
    const std::string whole = kv_->at(key);
    for (const std::string& item : split(raw(key)))
      out.push_back(static_cast<int>(parse_int(key, item)));
    if (out.empty()) die(key, whole, "a non-empty comma-separated integer list");
    return out;
  }

  [[noreturn]] void die(const std::string& key, const std::string& value,
                        const std::string& expected) const {
    throw ValueError(strf(ini_.origin, ": [", name_, "] ", key, " = \"", value, "\" is not ",
                          expected));
  }

  // Every key must have been consumed by now.
  void finish() {
    if (!kv_) return;
    for (const auto& [key, value] : *kv_)
      if (!taken_.count(key))
        throw ValueError(strf(ini_.origin, ": unknown key \"", key, "\" in [", name_, "]"));
  }

 private:
  static std::vector<std::string> split(const std::string& v) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(v);
    while (std::getline(in, item, ',')) out.push_back(trim(item));
    return out;
  }

  int64_t parse_int(const std::string& key, const std::string& v) const {
    errno = 0;
    char* end = nullptr;
    const long long parsed = std::strtoll(v.c_str(), &end, 10);
    if (errno != 0 || v.empty() || end != v.c_str() + v.size()) die(key, v, "an integer");
    return parsed;
  }

  double parse_double(const std::string& key, const std::string& v) const {
    errno = 0;
    char* end = nullptr;
    const double parsed = std::strtod(v.c_str(), &end);
    if (errno != 0 || v.empty() || end != v.c_str() + v.size()) die(key, v, "a number");
    return parsed;
  }

  IniFile& ini_;
  std::string name_;
  std::map<std::string, std::string>* kv_ = nullptr;
  std::set<std::string> taken_;
};

std::vector<AnchorSpec> parse_family(Section& sec, const SyntheticTask& task,
                                     const std::string& origin) {
  if (!sec.has("family")) return default_family(task.tokens, task.feature_dim, task.num_classes);

  std::vector<AnchorSpec> specs;
  std::set<std::string> seen;
  for (const std::string& name : sec.get_names("family")) {
    if (name.find('.') != std::string::npos)
      throw ValueError(strf(origin, ": anchor name \"", name, "\" may not contain '.'"));
    if (!seen.insert(name).second)
      throw ValueError(strf(origin, ": anchor \"", name, "\" listed twice in family"));
    for (const char* field : {"depths", "dims", "heads"})
      if (!sec.has(name + "." + field))
        throw ValueError(strf(origin, ": [anchors] missing ", name, ".", field,
                              " for family member \"", name, "\""));
    AnchorSpec s;
    s.name = name;
    const std::vector<int> depths = sec.get_int_list(name + ".depths");
    std::vector<int> transitions(depths.size(), 0);
    if (sec.has(name + ".transitions")) transitions = sec.get_int_list(name + ".transitions");
    if (transitions.size() != depths.size())
      throw ValueError(strf(origin, ": [anchors] ", name, ".transitions has ", transitions.size(),
                            " entries for ", depths.size(), " stages"));
    for (size_t t = 0; t < depths.size(); ++t) {
      if (transitions[t] != 0 && transitions[t] != 1)
        throw ValueError(strf(origin, ": [anchors] ", name, ".transitions entries must be 0 or 1"));
      s.stages.push_back({depths[t], transitions[t] == 1});
    }
    s.dims = sec.get_int_list(name + ".dims");
    s.heads = sec.get_int_list(name + ".heads");
    s.mlp_ratio = sec.get_double(name + ".mlp_ratio", s.mlp_ratio);
    s.tokens = task.tokens;
    s.feature_dim = task.feature_dim;
    s.num_classes = task.num_classes;
    s.validate();
    specs.push_back(std::move(s));
  }
  return specs;
}

}  // namespace

void RunConfig::validate() const {
  task.validate();
  if (anchors.size() < 2)
    throw ValueError(strf("config declares ", anchors.size(), " anchors; stitching needs >= 2"));
  for (const auto& s : anchors) {
    s.validate();
    if (s.tokens != task.tokens || s.feature_dim != task.feature_dim ||
        s.num_classes != task.num_classes)
      throw ValueError(strf("anchor ", s.name, " disagrees with the task interface"));
  }
  window.validate();
  if (n_init < 1 || n_init > task.train_size)
    throw ValueError(strf("n_init ", n_init, " outside [1, train_size=", task.train_size, "]"));
  if (rcond <= 0) throw ValueError(strf("rcond ", rcond, " must be > 0"));
  if (pretrain.lr <= 0 || pretrain.epochs < 0 || pretrain.batch_size < 1 ||
      pretrain.weight_decay < 0)
    throw ValueError("pretrain hyperparameters out of range");
  train.validate();
  if (workdir.empty()) throw ValueError("workdir must be non-empty");
}

RunConfig default_run_config() {
  RunConfig c;
  c.anchors = default_family(c.task.tokens, c.task.feature_dim, c.task.num_classes);
  return c;
}

RunConfig parse_run_config_text(const std::string& text, const std::string& origin) {
  IniFile ini = scan_ini(text, origin);
  static const std::set<std::string> known = {"task", "anchors", "stitching", "training", "paths"};
  for (const auto& [name, kv] : ini.sections)
    if (!known.count(name))
      throw ValueError(strf(origin, ": unknown section [", name, "]"));

  RunConfig c;

  Section task(ini, "task");
  c.task.seed = task.get_uint("seed", c.task.seed);
  c.task.train_size = static_cast<int>(task.get_int("train_size", c.task.train_size));
  c.task.val_size = static_cast<int>(task.get_int("val_size", c.task.val_size));
  c.task.noise_rate = task.get_double("noise_rate", c.task.noise_rate);
  c.task.tokens = static_cast<int>(task.get_int("tokens", c.task.tokens));
  c.task.feature_dim = static_cast<int>(task.get_int("feature_dim", c.task.feature_dim));
  c.task.num_classes = static_cast<int>(task.get_int("num_classes", c.task.num_classes));
  task.finish();

  Section anchors(ini, "anchors");
  c.anchors = parse_family(anchors, c.task, origin);
  c.pretrain.lr = anchors.get_double("pretrain_lr", c.pretrain.lr);
  c.pretrain.epochs = static_cast<int>(anchors.get_int("pretrain_epochs", c.pretrain.epochs));
  c.pretrain.batch_size =
      static_cast<int>(anchors.get_int("pretrain_batch", c.pretrain.batch_size));
  c.pretrain.weight_decay = anchors.get_double("pretrain_weight_decay", c.pretrain.weight_decay);
  c.pretrain.seed = anchors.get_uint("pretrain_seed", c.pretrain.seed);
  anchors.finish();

  Section stitching(ini, "stitching");
  c.window.kernel = static_cast<int>(stitching.get_int("kernel", c.window.kernel));
  c.window.stride = static_cast<int>(stitching.get_int("stride", c.window.stride));
  c.n_init = static_cast<int>(stitching.get_int("n_init", c.n_init));
  c.rcond = stitching.get_double("rcond", c.rcond);
  if (stitching.has("init_method")) {
    const std::string v = stitching.raw("init_method");
    if (v == "least_squares") c.init_method = InitMethod::least_squares;
    else if (v == "kaiming") c.init_method = InitMethod::kaiming;
    else stitching.die("init_method", v, "one of least_squares, kaiming");
  }
  if (stitching.has("direction")) {
    const std::string v = stitching.raw("direction");
    if (v == "fast_to_slow") c.direction = StitchDirection::fast_to_slow;
    else if (v == "slow_to_fast") c.direction = StitchDirection::slow_to_fast;
    else stitching.die("direction", v, "one of fast_to_slow, slow_to_fast");
  }
  stitching.finish();

  Section training(ini, "training");
  c.train.epochs = static_cast<int>(training.get_int("epochs", c.train.epochs));
  c.train.batch_size = static_cast<int>(training.get_int("batch_size", c.train.batch_size));
  c.train.lr_stitch = training.get_double("lr_stitch", c.train.lr_stitch);
  if (training.has("anchor_lr_scale")) {
    const std::string v = training.raw("anchor_lr_scale");
    if (v == "auto") c.train.anchor_lr_scale = -1.0;
    else {
      c.train.anchor_lr_scale = training.get_double("anchor_lr_scale", 0.0);
      if (c.train.anchor_lr_scale < 0)
        training.die("anchor_lr_scale", v, "\"auto\" or a non-negative number");
    }
  }
  c.train.weight_decay = training.get_double("weight_decay", c.train.weight_decay);
  if (training.has("distill")) {
    const std::string v = training.raw("distill");
    if (v == "off") c.train.distill = TrainConfig::Distill::off;
    else if (v == "largest_anchor") c.train.distill = TrainConfig::Distill::largest_anchor;
    else training.die("distill", v, "one of off, largest_anchor");
  }
  c.train.distill_weight = training.get_double("distill_weight", c.train.distill_weight);
  if (training.has("tune_scope")) {
    const std::string v = training.raw("tune_scope");
    if (v == "full") c.train.tune_scope = TrainConfig::TuneScope::full;
    else if (v == "stitch_layers_only")
      c.train.tune_scope = TrainConfig::TuneScope::stitch_layers_only;
    else training.die("tune_scope", v, "one of full, stitch_layers_only");
  }
  c.train.seed = training.get_uint("seed", c.train.seed);
  training.finish();

  Section paths(ini, "paths");
  c.workdir = paths.get_string("workdir", c.workdir);
  paths.finish();
  if (const char* env = std::getenv("SNNET_WORKDIR"); env != nullptr && *env != '\0')
    c.workdir = env;

  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValueError(strf("cannot open config file ", path));
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_run_config_text(buf.str(), path);
}

}  // namespace snnet
