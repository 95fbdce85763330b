// SPDX-License-Identifier: Apache-2.0
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "jerkrom/error.hpp"
#include "jerkrom/nets.hpp"

namespace jerkrom::nets {

using json = nlohmann::json;

namespace {

Activation parse_activation(const json& v, const std::string& key) {
  const std::string s = v.get<std::string>();
  if (s == "relu") return Activation::relu;
  if (s == "silu") return Activation::silu;
  if (s == "sine") return Activation::sine;
  throw ConfigError("unknown activation '" + s + "'", key);
}

void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& prefix) {
  if (!obj.is_object()) throw ConfigError(prefix + " must be an object", prefix);
  for (const auto& [k, _] : obj.items()) {
    if (!known.count(k)) throw ConfigError("unknown key '" + prefix + "." + k + "'", prefix + "." + k);
  }
}

template <typename V>
void read(const json& obj, const char* key, V& out, const std::string& prefix) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for '" + prefix + "." + key + "': " + e.what(), prefix + "." + key);
  }
}

EncoderConfig encoder_from(const json& j) {
  reject_unknown(j,
                 {"preset", "nx", "ndim", "stem_width", "stem_kernel", "stem_stride", "widths", "blocks",
                  "block", "bottleneck_expansion", "pooling", "latent_dim"},
                 "model.encoder");
  EncoderConfig c;
  if (j.contains("preset")) {
    const std::string p = j.at("preset").get<std::string>();
    if (p != "resnet50") throw ConfigError("unknown encoder preset '" + p + "'", "model.encoder.preset");
    c = EncoderConfig::resnet50(j.value("nx", 64), j.value("latent_dim", 10));
  }
  const std::string pre = "model.encoder";
  read(j, "nx", c.nx, pre);
  read(j, "ndim", c.ndim, pre);
  read(j, "stem_width", c.stem_width, pre);
  read(j, "stem_kernel", c.stem_kernel, pre);
  read(j, "stem_stride", c.stem_stride, pre);
  read(j, "widths", c.widths, pre);
  read(j, "blocks", c.blocks, pre);
  read(j, "bottleneck_expansion", c.bottleneck_expansion, pre);
  read(j, "latent_dim", c.latent_dim, pre);
  if (j.contains("block")) {
    const std::string s = j.at("block").get<std::string>();
    if (s == "basic") c.block = BlockType::basic;
    else if (s == "bottleneck") c.block = BlockType::bottleneck;
    else throw ConfigError("unknown block type '" + s + "'", "model.encoder.block");
  }
  if (j.contains("pooling")) {
    const std::string s = j.at("pooling").get<std::string>();
    if (s == "flatten") c.pooling = Pooling::flatten;
    else if (s == "average") c.pooling = Pooling::average;
    else throw ConfigError("unknown pooling '" + s + "'", "model.encoder.pooling");
  }
  return c;
}

DecoderConfig decoder_from(const json& j) {
  reject_unknown(j,
                 {"hidden_layers", "width", "activation", "embedding", "fourier_frequencies", "sine_omega0",
                  "latent_dim", "ndim"},
                 "model.decoder");
  DecoderConfig c;
  const std::string pre = "model.decoder";
  read(j, "hidden_layers", c.hidden_layers, pre);
  read(j, "width", c.width, pre);
  read(j, "fourier_frequencies", c.fourier_frequencies, pre);
  read(j, "sine_omega0", c.sine_omega0, pre);
  read(j, "latent_dim", c.latent_dim, pre);
  read(j, "ndim", c.ndim, pre);
  if (j.contains("activation")) c.activation = parse_activation(j.at("activation"), pre + ".activation");
  if (j.contains("embedding")) {
    const std::string s = j.at("embedding").get<std::string>();
    if (s == "affine") c.embedding = Embedding::affine;
    else if (s == "fourier") c.embedding = Embedding::fourier;
    else throw ConfigError("unknown embedding '" + s + "'", pre + ".embedding");
  }
  return c;
}

OdeFuncConfig odefunc_from(const json& j) {
  reject_unknown(j, {"hidden_layers", "width", "activation", "latent_dim", "zero_init_output"},
                 "model.odefunc");
  OdeFuncConfig c;
  const std::string pre = "model.odefunc";
  read(j, "hidden_layers", c.hidden_layers, pre);
  read(j, "width", c.width, pre);
  read(j, "latent_dim", c.latent_dim, pre);
  read(j, "zero_init_output", c.zero_init_output, pre);
  if (j.contains("activation")) c.activation = parse_activation(j.at("activation"), pre + ".activation");
  return c;
}

json to_json(const ModelConfig& m) {
  const EncoderConfig& e = m.encoder;
  const DecoderConfig& d = m.decoder;
  const OdeFuncConfig& o = m.odefunc;
  return json{
      {"encoder",
       {{"nx", e.nx},
        {"ndim", e.ndim},
        {"stem_width", e.stem_width},
        {"stem_kernel", e.stem_kernel},
        {"stem_stride", e.stem_stride},
        {"widths", e.widths},
        {"blocks", e.blocks},
        {"block", to_string(e.block)},
        {"bottleneck_expansion", e.bottleneck_expansion},
        {"pooling", to_string(e.pooling)},
        {"latent_dim", e.latent_dim}}},
      {"decoder",
       {{"hidden_layers", d.hidden_layers},
        {"width", d.width},
        {"activation", to_string(d.activation)},
        {"embedding", to_string(d.embedding)},
        {"fourier_frequencies", d.fourier_frequencies},
        {"sine_omega0", d.sine_omega0},
        {"latent_dim", d.latent_dim},
        {"ndim", d.ndim}}},
      {"odefunc",
       {{"hidden_layers", o.hidden_layers},
        {"width", o.width},
        {"activation", to_string(o.activation)},
        {"latent_dim", o.latent_dim},
        {"zero_init_output", o.zero_init_output}}}};
}

} // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return to_json(cfg).dump(); }

ModelConfig model_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what(), "model");
  }
  reject_unknown(j, {"encoder", "decoder", "odefunc", "latent_dim"}, "model");
  ModelConfig m;
  if (j.contains("encoder")) m.encoder = encoder_from(j.at("encoder"));
  if (j.contains("decoder")) m.decoder = decoder_from(j.at("decoder"));
  if (j.contains("odefunc")) m.odefunc = odefunc_from(j.at("odefunc"));
  if (j.contains("latent_dim")) {
    const int dz = j.at("latent_dim").get<int>();
    m.encoder.latent_dim = m.decoder.latent_dim = m.odefunc.latent_dim = dz;
  }
  return m;
}

namespace {

template <typename T>
void export_params(const ParamSet<T>& p, std::vector<NamedArray>& out) {
  for (std::size_t i = 0; i < p.blocks().size(); ++i) {
    const BlockInfo& b = p.blocks()[i];
    NamedArray a{b.name, b.shape, {}};
    const T* src = p.data(static_cast<int>(i));
    a.values.assign(src, src + b.size);
    out.push_back(std::move(a));
  }
}

void import_params(ParamSet<float>& p, const std::map<std::string, const NamedArray*>& by_name,
                   std::set<std::string>& used) {
  for (std::size_t i = 0; i < p.blocks().size(); ++i) {
    const BlockInfo& b = p.blocks()[i];
    const auto it = by_name.find(b.name);
    if (it == by_name.end()) throw CorruptionError("checkpoint is missing parameter array '" + b.name + "'");
    const NamedArray& a = *it->second;
    if (a.shape != b.shape || a.values.size() != b.size) {
      throw ShapeError("parameter array '" + b.name + "' has the wrong shape");
    }
    std::copy(a.values.begin(), a.values.end(), p.data(static_cast<int>(i)));
    used.insert(b.name);
  }
}

} // namespace

Checkpoint to_checkpoint(const ModelState<float>& model, const std::string& stage,
                         const std::string& config_fingerprint, const std::string& train_config_json) {
  Checkpoint c;
  c.stage = stage;
  c.architecture_json = model_config_to_json(model.config);
  c.config_fingerprint = config_fingerprint;
  c.train_config_json = train_config_json;
  export_params(model.encoder.params(), c.arrays);
  export_params(model.decoder.params(), c.arrays);
  export_params(model.odefunc.params(), c.arrays);
  const auto& shift = model.odefunc.shift();
  c.arrays.push_back({"odefunc.standardization.shift",
                      {static_cast<std::int64_t>(shift.size())},
                      std::vector<float>(shift.data(), shift.data() + shift.size())});
  c.arrays.push_back({"odefunc.standardization.scale", {1}, {model.odefunc.scale()}});
  return c;
}

ModelState<float> model_from_checkpoint(const Checkpoint& ckpt, const ModelConfig* expected) {
  const ModelConfig stored = model_config_from_json(ckpt.architecture_json);
  if (expected && !(stored == *expected)) {
    if (stored.latent_dim() != expected->latent_dim()) {
      throw ShapeError("latent dimension mismatch: checkpoint has d_z=" + std::to_string(stored.latent_dim()) +
                       ", config expects d_z=" + std::to_string(expected->latent_dim()));
    }
    throw ShapeError("checkpoint architecture differs from the configured model: stored " +
                     model_config_to_json(stored) + ", expected " + model_config_to_json(*expected));
  }
  stored.validate();
  ModelState<float> m{stored, Encoder<float>(stored.encoder), Decoder<float>(stored.decoder),
                      OdeFunc<float>(stored.odefunc)};
  std::map<std::string, const NamedArray*> by_name;
  for (const NamedArray& a : ckpt.arrays) by_name[a.name] = &a;
  std::set<std::string> used;
  import_params(m.encoder.params(), by_name, used);
  import_params(m.decoder.params(), by_name, used);
  import_params(m.odefunc.params(), by_name, used);
  const auto shift_it = by_name.find("odefunc.standardization.shift");
  const auto scale_it = by_name.find("odefunc.standardization.scale");
  if (shift_it != by_name.end() && scale_it != by_name.end()) {
    const NamedArray& s = *shift_it->second;
    if (static_cast<int>(s.values.size()) != stored.latent_dim() || scale_it->second->values.size() != 1) {
      throw ShapeError("standardisation arrays have the wrong shape");
    }
    m.odefunc.set_standardization(Eigen::Map<const Vec<float>>(s.values.data(), stored.latent_dim()),
                                  scale_it->second->values[0]);
    used.insert(s.name);
    used.insert(scale_it->second->name);
  }
  for (const NamedArray& a : ckpt.arrays) {
    if (!used.count(a.name)) throw CorruptionError("checkpoint holds unexpected array '" + a.name + "'");
  }
  return m;
}

} // namespace jerkrom::nets
