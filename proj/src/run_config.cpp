// Copyright 2026 The coa Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "coa/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#define TOML_EXCEPTIONS 1
#include "toml.hpp"

#include "coa/error.hpp"

namespace coa::config {

namespace {

enum class Kind { kBool, kInt, kFloat, kString, kStrings, kInts, kFloats };

struct Value {
  bool b = false;
  std::int64_t i = 0;
  double f = 0.0;
  std::string s;
  std::vector<std::string> ss;
  std::vector<std::int64_t> is;
  std::vector<double> fs;
};

struct Field {
  std::string key;
  Kind kind;
  std::function<void(RunConfig&, const Value&)> set;
  std::function<Value(const RunConfig&)> get;
};

std::string_view kind_name(Kind k) {
  switch (k) {
    case Kind::kBool: return "a boolean";
    case Kind::kInt: return "an integer";
    case Kind::kFloat: return "a number";
    case Kind::kString: return "a string";
    case Kind::kStrings: return "a list of strings";
    case Kind::kInts: return "a list of integers";
    case Kind::kFloats: return "a list of numbers";
  }
  return "?";
}

template <class T>
T as_unsigned(std::int64_t v) {
  if (v < 0) fail(ErrorKind::kConfig, "must be >= 0, got " + std::to_string(v));
  return static_cast<T>(v);
}

Field b_field(std::string key, std::function<bool&(RunConfig&)> ref) {
  return {key, Kind::kBool,
          [ref](RunConfig& c, const Value& v) { ref(c) = v.b; },
          [ref](const RunConfig& c) {
            Value v;
            v.b = ref(const_cast<RunConfig&>(c));
            return v;
          }};
}

template <class T>
Field u_field(std::string key, std::function<T&(RunConfig&)> ref) {
  return {key, Kind::kInt,
          [ref](RunConfig& c, const Value& v) { ref(c) = as_unsigned<T>(v.i); },
          [ref](const RunConfig& c) {
            Value v;
            v.i = static_cast<std::int64_t>(ref(const_cast<RunConfig&>(c)));
            return v;
          }};
}

Field f_field(std::string key, std::function<double&(RunConfig&)> ref) {
  return {key, Kind::kFloat,
          [ref](RunConfig& c, const Value& v) { ref(c) = v.f; },
          [ref](const RunConfig& c) {
            Value v;
            v.f = ref(const_cast<RunConfig&>(c));
            return v;
          }};
}

// String-valued enum: parse on set, name on get.
template <class E>
Field e_field(std::string key, std::function<E&(RunConfig&)> ref,
              E (*parse)(std::string_view), std::string_view (*name)(E)) {
  return {key, Kind::kString,
          [ref, parse](RunConfig& c, const Value& v) { ref(c) = parse(v.s); },
          [ref, name](const RunConfig& c) {
            Value v;
            v.s = std::string(name(ref(const_cast<RunConfig&>(c))));
            return v;
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> kFields = [] {
    std::vector<Field> f;
    f.push_back({"profile", Kind::kString,
                 [](RunConfig& c, const Value& v) { c.profile = v.s; },
                 [](const RunConfig& c) { Value v; v.s = c.profile; return v; }});
    f.push_back(u_field<std::uint64_t>("seed", [](RunConfig& c) -> auto& { return c.seed; }));
    f.push_back(e_field<sim::TaskId>("task.name", [](RunConfig& c) -> auto& { return c.task; },
                                     sim::parse_task, sim::task_name));
    f.push_back(f_field("task.spread", [](RunConfig& c) -> auto& { return c.spread; }));
    f.push_back(u_field<std::size_t>("task.demos", [](RunConfig& c) -> auto& { return c.demos; }));

    f.push_back(e_field<data::Ordering>("model.ordering",
                                        [](RunConfig& c) -> auto& { return c.model.ordering; },
                                        data::parse_ordering, data::ordering_name));
    f.push_back(e_field<data::KeyframeMode>("model.keyframe",
                                            [](RunConfig& c) -> auto& { return c.model.keyframe; },
                                            data::parse_keyframe_mode, data::keyframe_mode_name));
    f.push_back(u_field<std::size_t>("model.enc_layers", [](RunConfig& c) -> auto& { return c.model.enc_layers; }));
    f.push_back(u_field<std::size_t>("model.trunk_layers", [](RunConfig& c) -> auto& { return c.model.trunk_layers; }));
    f.push_back(u_field<std::size_t>("model.heads", [](RunConfig& c) -> auto& { return c.model.heads; }));
    f.push_back(u_field<std::size_t>("model.d_model", [](RunConfig& c) -> auto& { return c.model.d_model; }));
    f.push_back(u_field<std::size_t>("model.d_ff", [](RunConfig& c) -> auto& { return c.model.d_ff; }));
    f.push_back(f_field("model.dropout", [](RunConfig& c) -> auto& { return c.model.dropout; }));
    f.push_back(u_field<std::size_t>("model.mtp_heads", [](RunConfig& c) -> auto& { return c.model.mtp_heads; }));
    f.push_back(u_field<std::size_t>("model.max_len", [](RunConfig& c) -> auto& { return c.model.max_len; }));
    f.push_back(e_field<model::ObsMode>("model.obs_mode",
                                        [](RunConfig& c) -> auto& { return c.model.obs_mode; },
                                        model::parse_obs_mode, model::obs_mode_name));
    f.push_back(f_field("model.lambda_act", [](RunConfig& c) -> auto& { return c.model.lambda_act; }));
    f.push_back(f_field("model.lambda_lat", [](RunConfig& c) -> auto& { return c.model.lambda_lat; }));
    f.push_back(f_field("model.lambda_stop", [](RunConfig& c) -> auto& { return c.model.lambda_stop; }));
    f.push_back(e_field<model::LossVariant>("model.loss",
                                            [](RunConfig& c) -> auto& { return c.model.loss; },
                                            model::parse_loss_variant, model::loss_variant_name));
    f.push_back(b_field("model.reencode_actions", [](RunConfig& c) -> auto& { return c.model.reencode_actions; }));
    f.push_back(e_field<model::StopRule>("model.stop_rule",
                                         [](RunConfig& c) -> auto& { return c.model.stop_rule; },
                                         model::parse_stop_rule, model::stop_rule_name));
    f.push_back(f_field("model.stop_epsilon", [](RunConfig& c) -> auto& { return c.model.stop_epsilon; }));

    f.push_back(b_field("ensemble.enabled", [](RunConfig& c) -> auto& { return c.model.ensemble.enabled; }));
    f.push_back(f_field("ensemble.m", [](RunConfig& c) -> auto& { return c.model.ensemble.m; }));
    f.push_back(u_field<std::size_t>("ensemble.max_entries", [](RunConfig& c) -> auto& { return c.model.ensemble.max_entries; }));

    f.push_back(u_field<std::int64_t>("train.iterations", [](RunConfig& c) -> auto& { return c.train.iterations; }));
    f.push_back(u_field<std::size_t>("train.batch_size", [](RunConfig& c) -> auto& { return c.train.batch_size; }));
    f.push_back(f_field("train.lr", [](RunConfig& c) -> auto& { return c.train.lr; }));
    f.push_back(f_field("train.weight_decay", [](RunConfig& c) -> auto& { return c.train.weight_decay; }));
    f.push_back(u_field<std::int64_t>("train.eval_every", [](RunConfig& c) -> auto& { return c.train.eval_every; }));
    f.push_back(u_field<std::int64_t>("train.checkpoint_every", [](RunConfig& c) -> auto& { return c.train.checkpoint_every; }));
    f.push_back(u_field<std::size_t>("train.eval_episodes", [](RunConfig& c) -> auto& { return c.train.eval_episodes; }));

    f.push_back(u_field<std::size_t>("eval.episodes", [](RunConfig& c) -> auto& { return c.eval_episodes; }));
    f.push_back(e_field<analysis::Split>("eval.split", [](RunConfig& c) -> auto& { return c.eval_split; },
                                         analysis::parse_split, analysis::split_name));
    f.push_back(u_field<std::uint64_t>("eval.seed_base", [](RunConfig& c) -> auto& { return c.eval_seed_base; }));

    f.push_back({"ablate.axes", Kind::kStrings,
                 [](RunConfig& c, const Value& v) { c.ablate_axes = v.ss; },
                 [](const RunConfig& c) { Value v; v.ss = c.ablate_axes; return v; }});
    f.push_back({"ablate.seeds", Kind::kInts,
                 [](RunConfig& c, const Value& v) {
                   c.ablate_seeds.clear();
                   for (auto s : v.is) c.ablate_seeds.push_back(as_unsigned<std::uint64_t>(s));
                 },
                 [](const RunConfig& c) {
                   Value v;
                   for (auto s : c.ablate_seeds) v.is.push_back(static_cast<std::int64_t>(s));
                   return v;
                 }});
    f.push_back({"ablate.splits", Kind::kStrings,
                 [](RunConfig& c, const Value& v) {
                   c.ablate_splits.clear();
                   for (const auto& s : v.ss) c.ablate_splits.push_back(analysis::parse_split(s));
                 },
                 [](const RunConfig& c) {
                   Value v;
                   for (auto s : c.ablate_splits) v.ss.emplace_back(analysis::split_name(s));
                   return v;
                 }});

    f.push_back({"analysis.spreads", Kind::kFloats,
                 [](RunConfig& c, const Value& v) { c.analysis_spreads = v.fs; },
                 [](const RunConfig& c) { Value v; v.fs = c.analysis_spreads; return v; }});
    f.push_back({"analysis.variants", Kind::kStrings,
                 [](RunConfig& c, const Value& v) {
                   for (const auto& s : v.ss) data::parse_ordering(s);
                   c.analysis_variants = v.ss;
                 },
                 [](const RunConfig& c) { Value v; v.ss = c.analysis_variants; return v; }});
    f.push_back(u_field<std::size_t>("analysis.locality_window",
                                     [](RunConfig& c) -> auto& { return c.locality_window; }));
    return f;
  }();
  return kFields;
}

const Field* find_field(std::string_view key) {
  for (const auto& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

[[noreturn]] void config_error(const std::string& key, const std::string& where,
                               const std::string& what) {
  fail(ErrorKind::kConfig, "config: key '" + key + "' (" + where + "): " + what);
}

std::string where(const toml::node& n, std::string_view source) {
  const auto& b = n.source().begin;
  return std::string(source) + " line " + std::to_string(b.line) + ", column " +
         std::to_string(b.column);
}

Value from_node(const Field& f, const toml::node& n, const std::string& loc) {
  Value v;
  const auto mismatch = [&] {
    config_error(f.key, loc, "expected " + std::string(kind_name(f.kind)) + ", got " +
                                 std::string(toml::impl::node_type_friendly_names[
                                     static_cast<std::size_t>(n.type())]));
  };
  auto num = [&](const toml::node& x, double& out) {
    if (auto d = x.as_floating_point()) out = d->get();
    else if (auto i = x.as_integer()) out = static_cast<double>(i->get());
    else mismatch();
  };
  switch (f.kind) {
    case Kind::kBool:
      if (auto b = n.as_boolean()) v.b = b->get(); else mismatch();
      break;
    case Kind::kInt:
      if (auto i = n.as_integer()) v.i = i->get(); else mismatch();
      break;
    case Kind::kFloat:
      num(n, v.f);
      break;
    case Kind::kString:
      if (auto s = n.as_string()) v.s = s->get(); else mismatch();
      break;
    case Kind::kStrings:
    case Kind::kInts:
    case Kind::kFloats: {
      const auto* arr = n.as_array();
      if (!arr) mismatch();
      for (const auto& e : *arr) {
        if (f.kind == Kind::kStrings) {
          if (auto s = e.as_string()) v.ss.push_back(s->get()); else mismatch();
        } else if (f.kind == Kind::kInts) {
          if (auto i = e.as_integer()) v.is.push_back(i->get()); else mismatch();
        } else {
          double d = 0.0;
          num(e, d);
          v.fs.push_back(d);
        }
      }
      break;
    }
  }
  return v;
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = s.find(',', start);
    out.emplace_back(s.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::int64_t parse_int(const std::string& key, std::string_view s) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    config_error(key, "flag", "expected an integer, got '" + std::string(s) + "'");
  }
  return v;
}

double parse_float(const std::string& key, std::string_view s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    config_error(key, "flag", "expected a number, got '" + std::string(s) + "'");
  }
  return v;
}

Value from_flag(const Field& f, std::string_view s) {
  Value v;
  switch (f.kind) {
    case Kind::kBool:
      if (s == "true" || s == "1") v.b = true;
      else if (s == "false" || s == "0") v.b = false;
      else config_error(f.key, "flag", "expected true or false, got '" + std::string(s) + "'");
      break;
    case Kind::kInt: v.i = parse_int(f.key, s); break;
    case Kind::kFloat: v.f = parse_float(f.key, s); break;
    case Kind::kString: v.s = std::string(s); break;
    case Kind::kStrings: v.ss = split_list(s); break;
    case Kind::kInts:
      for (const auto& x : split_list(s)) v.is.push_back(parse_int(f.key, x));
      break;
    case Kind::kFloats:
      for (const auto& x : split_list(s)) v.fs.push_back(parse_float(f.key, x));
      break;
  }
  return v;
}

void apply(RunConfig& c, const Field& f, const Value& v, const std::string& loc,
           const char* origin) {
  try {
    f.set(c, v);
  } catch (const Error& e) {
    config_error(f.key, loc, e.what());
  }
  c.provenance[f.key] = origin;
}

// Leaves of the parsed file with their dotted keys.
void collect(const toml::table& t, const std::string& prefix,
             std::vector<std::pair<std::string, const toml::node*>>& out) {
  for (const auto& [k, node] : t) {
    const std::string key = prefix.empty() ? std::string(k.str())
                                           : prefix + "." + std::string(k.str());
    if (const auto* sub = node.as_table()) {
      collect(*sub, key, out);
    } else {
      out.emplace_back(key, &node);
    }
  }
}

// Written by to_toml; accepted and ignored on load.
bool is_metadata(std::string_view key) {
  return key == "tool_version" || key.rfind("provenance.", 0) == 0;
}

void finalize(RunConfig& c) {
  c.model.profile = c.profile;
  c.train.profile = c.profile;
  c.train.seed = c.seed;
  if (c.provenance["ablate.seeds"] == "default") {
    c.ablate_seeds = {c.seed, c.seed + 1, c.seed + 2};
  }
  try {
    c.model.validate();
    c.train.validate();
    c.task_spec().validate();
    analysis::ablation_cells(c.model, c.ablate_axes);
  } catch (const Error& e) {
    fail(ErrorKind::kConfig, std::string("config: ") + e.what());
  }
  if (c.demos == 0) fail(ErrorKind::kConfig, "config: task.demos must be >= 1");
  if (c.eval_episodes == 0) fail(ErrorKind::kConfig, "config: eval.episodes must be >= 1");
  if (c.ablate_seeds.empty()) fail(ErrorKind::kConfig, "config: ablate.seeds is empty");
}

}  // namespace

std::vector<std::string> known_keys() {
  std::vector<std::string> k;
  for (const auto& f : fields()) k.push_back(f.key);
  return k;
}

RunConfig parse_config(std::string_view text, std::string_view source,
                       const std::vector<std::pair<std::string, std::string>>& overrides) {
  toml::table file;
  try {
    file = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    const auto& b = e.source().begin;
    fail(ErrorKind::kConfig, "config: " + std::string(source) + " line " +
                                 std::to_string(b.line) + ", column " +
                                 std::to_string(b.column) + ": " +
                                 std::string(e.description()));
  }
  std::vector<std::pair<std::string, const toml::node*>> leaves;
  collect(file, "", leaves);
  for (const auto& [key, node] : leaves) {
    if (!is_metadata(key) && !find_field(key)) {
      config_error(key, where(*node, source), "unknown key");
    }
  }
  for (const auto& [key, value] : overrides) {
    if (!find_field(key)) config_error(key, "flag", "unknown key");
  }

  // The profile picks the defaults everything else is layered on.
  std::string profile = "desk";
  for (const auto& [key, node] : leaves) {
    if (key == "profile") profile = from_node(*find_field(key), *node, where(*node, source)).s;
  }
  for (const auto& [key, value] : overrides) {
    if (key == "profile") profile = value;
  }
  RunConfig c;
  try {
    c.model = model::default_config(profile);
    c.train = train::default_train_config(profile);
  } catch (const Error& e) {
    config_error("profile", "resolved", e.what());
  }
  c.profile = profile;
  for (const auto& f : fields()) c.provenance[f.key] = "default";

  for (const auto& [key, node] : leaves) {
    if (is_metadata(key)) continue;
    const Field& f = *find_field(key);
    const auto loc = where(*node, source);
    apply(c, f, from_node(f, *node, loc), loc, "file");
  }
  for (const auto& [key, value] : overrides) {
    const Field& f = *find_field(key);
    apply(c, f, from_flag(f, value), "flag", "flag");
  }
  finalize(c);
  return c;
}

RunConfig load_config(const std::optional<std::filesystem::path>& file,
                      const std::vector<std::pair<std::string, std::string>>& overrides) {
  if (!file) return parse_config("", "defaults", overrides);
  std::ifstream in(*file);
  if (!in) fail(ErrorKind::kConfig, "config: cannot open " + file->string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), file->string(), overrides);
}

std::string to_toml(const RunConfig& c) {
  toml::table root;
  root.insert_or_assign("tool_version", COA_VERSION);
  toml::table prov;
  for (const auto& f : fields()) {
    const auto v = f.get(c);
    const auto dot = f.key.rfind('.');
    toml::table* t = &root;
    if (dot != std::string::npos) {
      const auto section = f.key.substr(0, dot);
      if (!root.contains(section)) root.insert_or_assign(section, toml::table{});
      t = root[section].as_table();
    }
    const auto leaf = dot == std::string::npos ? f.key : f.key.substr(dot + 1);
    switch (f.kind) {
      case Kind::kBool: t->insert_or_assign(leaf, v.b); break;
      case Kind::kInt: t->insert_or_assign(leaf, v.i); break;
      case Kind::kFloat: t->insert_or_assign(leaf, v.f); break;
      case Kind::kString: t->insert_or_assign(leaf, v.s); break;
      case Kind::kStrings: {
        toml::array a;
        for (const auto& s : v.ss) a.push_back(s);
        t->insert_or_assign(leaf, std::move(a));
        break;
      }
      case Kind::kInts: {
        toml::array a;
        for (auto x : v.is) a.push_back(x);
        t->insert_or_assign(leaf, std::move(a));
        break;
      }
      case Kind::kFloats: {
        toml::array a;
        for (auto x : v.fs) a.push_back(x);
        t->insert_or_assign(leaf, std::move(a));
        break;
      }
    }
    const auto it = c.provenance.find(f.key);
    prov.insert_or_assign(f.key, it == c.provenance.end() ? "default" : it->second);
  }
  root.insert_or_assign("provenance", std::move(prov));
  std::ostringstream out;
  out << toml::toml_formatter(root) << '\n';
  return out.str();
}

void write_resolved(const std::filesystem::path& dir, const RunConfig& c) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::kIo, "cannot create " + dir.string() + ": " + ec.message());
  const auto path = dir / "resolved_config.toml";
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << to_toml(c);
  if (!out) fail(ErrorKind::kIo, "write failed: " + path.string());
}

}  // namespace coa::config
