// SPDX-License-Identifier: Apache-2.0
#include "run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "jerkrom/error.hpp"
#include "jerkrom/fingerprint.hpp"

namespace jerkrom::app {

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& prefix) {
  if (!obj.is_object()) throw ConfigError(prefix + " must be an object", prefix);
  for (const auto& [k, _] : obj.items()) {
    if (!known.count(k)) throw ConfigError("unknown key '" + prefix + "." + k + "'", prefix + "." + k);
  }
}

template <typename V>
void read(const json& obj, const std::string& key, V& out, const std::string& prefix) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for '" + prefix + "." + key + "': " + e.what(), prefix + "." + key);
  }
}

json data_to_tree(const DataConfig& d) {
  return json{{"source", d.source},
              {"nx", d.nx},
              {"ndim", d.ndim},
              {"trajectories", d.trajectories},
              {"n_train", d.n_train},
              {"n_test", d.n_test},
              {"burn_in", d.burn_in},
              {"train_steps", d.train_steps},
              {"extrap_steps", d.extrap_steps},
              {"viscosity", d.viscosity},
              {"forcing_amplitude", d.forcing_amplitude},
              {"sim_dt", d.sim_dt},
              {"snapshot_dt", d.snapshot_dt},
              {"oversample", d.oversample},
              {"seed", d.seed},
              {"workers", d.workers}};
}

DataConfig data_from_tree(const json& j) {
  reject_unknown(j,
                 {"source", "nx", "ndim", "trajectories", "n_train", "n_test", "burn_in", "train_steps",
                  "extrap_steps", "viscosity", "forcing_amplitude", "sim_dt", "snapshot_dt", "oversample",
                  "seed", "workers"},
                 "data");
  DataConfig d;
  const std::string p = "data";
  read(j, "source", d.source, p);
  read(j, "nx", d.nx, p);
  read(j, "ndim", d.ndim, p);
  read(j, "trajectories", d.trajectories, p);
  read(j, "n_train", d.n_train, p);
  read(j, "n_test", d.n_test, p);
  read(j, "burn_in", d.burn_in, p);
  read(j, "train_steps", d.train_steps, p);
  read(j, "extrap_steps", d.extrap_steps, p);
  read(j, "viscosity", d.viscosity, p);
  read(j, "forcing_amplitude", d.forcing_amplitude, p);
  read(j, "sim_dt", d.sim_dt, p);
  read(j, "snapshot_dt", d.snapshot_dt, p);
  read(j, "oversample", d.oversample, p);
  read(j, "seed", d.seed, p);
  read(j, "workers", d.workers, p);
  return d;
}

json eval_to_tree(const EvalConfig& e) {
  return json{{"method", ode::to_string(e.integrator.method)},
              {"max_substep", e.integrator.max_substep},
              {"rtol", e.integrator.rtol},
              {"atol", e.integrator.atol},
              {"active_threshold", e.active_threshold}};
}

EvalConfig eval_from_tree(const json& j) {
  reject_unknown(j, {"method", "max_substep", "rtol", "atol", "active_threshold"}, "eval");
  EvalConfig e;
  const std::string p = "eval";
  if (j.contains("method")) {
    std::string m;
    read(j, "method", m, p);
    try {
      e.integrator.method = ode::method_from_string(m);
    } catch (const ConfigError&) {
      throw ConfigError("unknown integrator '" + m + "'", "eval.method");
    }
  }
  read(j, "max_substep", e.integrator.max_substep, p);
  read(j, "rtol", e.integrator.rtol, p);
  read(j, "atol", e.integrator.atol, p);
  read(j, "active_threshold", e.active_threshold, p);
  try {
    e.integrator.validate();
  } catch (const ConfigError& err) {
    throw ConfigError(err.what(), err.key().empty() ? "eval" : err.key());
  }
  return e;
}

} // namespace

pdegen::CorpusSpec DataConfig::corpus() const {
  pdegen::CorpusSpec c;
  c.grid = grid();
  c.ns.viscosity = viscosity;
  c.ns.forcing_amplitude = forcing_amplitude;
  c.ns.sim_dt = sim_dt;
  c.ns.snapshot_dt = snapshot_dt;
  c.ns.snapshots = snapshots();
  c.n_trajectories = trajectories;
  c.oversample = oversample;
  c.seed = seed;
  c.workers = workers;
  return c;
}

SplitSpec DataConfig::split() const {
  SplitSpec s;
  s.burn_in = burn_in;
  s.train_steps = train_steps;
  s.extrap_steps = extrap_steps;
  s.n_train = n_train;
  s.n_test = n_test;
  return s;
}

void DataConfig::validate() const {
  if (source != "ns" && source != "toy") throw ConfigError("unknown data source '" + source + "'", "data.source");
  grid().validate();
  if (source == "ns" && ndim != 2) throw ConfigError("the Navier-Stokes source is two-dimensional", "data.ndim");
  if (source == "toy" && ndim != 1) throw ConfigError("the toy source is one-dimensional", "data.ndim");
  if (trajectories < 1) throw ConfigError("trajectories must be >= 1", "data.trajectories");
  if (n_test < 0) throw ConfigError("n_test must be >= 0", "data.n_test");
  if (n_train + n_test > trajectories) {
    throw ConfigError("n_train + n_test exceeds the number of trajectories", "data.n_train");
  }
  if (burn_in < 0) throw ConfigError("burn_in must be >= 0", "data.burn_in");
  if (train_steps < 4) throw ConfigError("train_steps must be >= 4", "data.train_steps");
  if (extrap_steps < 0) throw ConfigError("extrap_steps must be >= 0", "data.extrap_steps");
  if (oversample < 1) throw ConfigError("oversample must be >= 1", "data.oversample");
  if (workers < 0) throw ConfigError("workers must be >= 0", "data.workers");
  if (!(snapshot_dt > 0.0)) throw ConfigError("snapshot_dt must be positive", "data.snapshot_dt");
  if (source == "ns") {
    try {
      corpus().ns.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(e.what(), e.key().empty() ? "data" : e.key());
    }
  }
}

infer::EvalOptions EvalConfig::options() const {
  infer::EvalOptions o;
  o.integrator = integrator;
  o.active_threshold = active_threshold;
  return o;
}

json default_config_tree() {
  DataConfig data;

  nets::ModelConfig m;
  m.encoder.nx = data.nx;
  m.encoder.stem_width = 8;
  m.encoder.widths = {8, 16, 32, 64};
  m.encoder.blocks = {1, 1, 1, 1};
  m.decoder.hidden_layers = 4;
  m.decoder.width = 64;
  m.decoder.embedding = nets::Embedding::fourier;
  m.decoder.fourier_frequencies = 6;
  m.odefunc.hidden_layers = 3;
  m.odefunc.width = 64;

  train::TrainConfig t;
  t.lambda = 0.1;
  t.stage1 = {20, 8, 1e-3, 0.0, true, 0.0};
  t.stage2 = {300, 8, 1e-3, 0.0, false, 1.0};
  t.ode_substeps = 4;
  t.points_per_snapshot = 256;
  t.eval_every = 10;

  return json{{"data", data_to_tree(data)},
              {"model", json::parse(nets::model_config_to_json(m))},
              {"train", json::parse(train::train_config_to_json(t))},
              {"eval", eval_to_tree(EvalConfig{})}};
}

void apply_override(json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value", assignment);
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &tree;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component", key);
    parts.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ConfigError("'" + key + "' descends into a non-object", key);
    node = &(*node)[parts[i]];
    if (node->is_null()) *node = json::object();
  }
  if (!node->is_object()) throw ConfigError("'" + key + "' descends into a non-object", key);
  (*node)[parts.back()] = value;
}

void merge_tree(json& base, const json& patch) {
  if (!patch.is_object() || !base.is_object()) {
    base = patch;
    return;
  }
  for (const auto& [k, v] : patch.items()) {
    const bool preset_encoder = k == "encoder" && v.is_object() && v.contains("preset");
    if (base.contains(k) && base[k].is_object() && v.is_object() && !preset_encoder) {
      merge_tree(base[k], v);
    } else {
      base[k] = v;
    }
  }
}

json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string(), path.string());
  try {
    json j = json::parse(in);
    if (!j.is_object()) throw ConfigError("config file " + path.string() + " is not a JSON object", path.string());
    return j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what(), path.string());
  }
}

RunConfig config_from_tree(const json& tree) {
  reject_unknown(tree, {"data", "model", "train", "eval"}, "config");
  RunConfig rc;
  json t = tree;
  for (const char* s : {"data", "model", "train", "eval"}) {
    if (!t.contains(s)) t[s] = json::object();
  }
  rc.data = data_from_tree(t["data"]);
  rc.data.validate();

  // The model lives on the data grid.
  json& model = t["model"];
  if (!model.is_object()) throw ConfigError("model must be an object", "model");
  json& enc = model["encoder"];
  if (enc.is_null()) enc = json::object();
  json& dec = model["decoder"];
  if (dec.is_null()) dec = json::object();
  for (const auto& [key, want] : {std::pair<std::string, int>{"nx", rc.data.nx}, {"ndim", rc.data.ndim}}) {
    if (enc.is_object() && enc.contains(key) && enc[key] != json(want)) {
      throw ConfigError("model.encoder." + key + " disagrees with data." + key, "model.encoder." + key);
    }
  }
  if (dec.is_object() && dec.contains("ndim") && dec["ndim"] != json(rc.data.ndim)) {
    throw ConfigError("model.decoder.ndim disagrees with data.ndim", "model.decoder.ndim");
  }
  if (enc.is_object()) {
    enc["nx"] = rc.data.nx;
    enc["ndim"] = rc.data.ndim;
  }
  if (dec.is_object()) dec["ndim"] = rc.data.ndim;

  rc.model = nets::model_config_from_json(model.dump());
  try {
    rc.model.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(e.what(), e.key().empty() ? "model" : e.key());
  }
  rc.train = train::train_config_from_json(t["train"].dump());
  rc.eval = eval_from_tree(t["eval"]);

  rc.resolved = json{{"data", data_to_tree(rc.data)},
                     {"model", json::parse(nets::model_config_to_json(rc.model))},
                     {"train", json::parse(train::train_config_to_json(rc.train))},
                     {"eval", eval_to_tree(rc.eval)}};
  rc.fingerprint = fingerprint(rc.resolved.dump());
  return rc;
}

RunConfig resolve_config(json base, const std::string& config_path, const std::vector<std::string>& overrides) {
  // Grid entries of the base model follow the data section; only user layers may pin them.
  if (base.contains("model") && base["model"].is_object()) {
    json& m = base["model"];
    if (m.contains("encoder") && m["encoder"].is_object()) {
      m["encoder"].erase("nx");
      m["encoder"].erase("ndim");
    }
    if (m.contains("decoder") && m["decoder"].is_object()) m["decoder"].erase("ndim");
  }
  if (!config_path.empty()) merge_tree(base, read_config_file(config_path));
  json patch = json::object();
  for (const auto& o : overrides) apply_override(patch, o);
  merge_tree(base, patch);
  RunConfig rc = config_from_tree(base);
  rc.source = config_path;
  rc.overrides = overrides;
  return rc;
}

} // namespace jerkrom::app
