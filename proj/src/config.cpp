#include "xabr/config.hpp"

#include <fstream>
#include <map>

#include "xabr/errors.hpp"

namespace xabr {
namespace {

using nlohmann::json;

void flatten(const json& node, const std::string& prefix, std::map<std::string, json>& out) {
  if (node.is_object() && (prefix.empty() || prefix.find('.') == std::string::npos)) {
    for (auto it = node.begin(); it != node.end(); ++it) {
      const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
      if (it.value().is_object())
        flatten(it.value(), key, out);
      else
        out[key] = it.value();
    }
    return;
  }
  out[prefix] = node;
}

std::size_t as_count(const std::string& key, const json& v) {
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
    throw ConfigError("config key '" + key + "' must be a non-negative integer");
  return v.get<std::size_t>();
}

double as_real(const std::string& key, const json& v) {
  if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
  return v.get<double>();
}

bool assign_stack(StackConfig& s, const std::string& field, const std::string& key, const json& v) {
  if (field == "n_layers") s.n_layers = as_count(key, v);
  else if (field == "d_model") s.d_model = as_count(key, v);
  else if (field == "n_heads") s.n_heads = as_count(key, v);
  else if (field == "d_ff") s.d_ff = as_count(key, v);
  else if (field == "max_len") s.max_len = as_count(key, v);
  else return false;
  return true;
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("train config: " + what); };
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(lr_bridge > 0) || !(lr_receiver > 0)) fail("learning rates must be > 0");
  if (weight_decay < 0) fail("weight_decay must be >= 0");
  if (patience < 1) fail("patience must be >= 1");
  if (min_delta < 0) fail("min_delta must be >= 0");
  if (max_tokens < 2) fail("max_tokens must be >= 2");
  if (!(val_fraction > 0 && val_fraction < 1)) fail("val_fraction must lie in (0, 1)");
}

void ExperimentConfig::validate() const {
  donor.validate();
  receiver.validate();
  bridge.validate(receiver.n_layers, receiver.d_model);
  train.validate();
}

ExperimentConfig parse_config(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  std::map<std::string, json> flat;
  flatten(doc, "", flat);
  ExperimentConfig c;
  bool bridge_placement_given = false, d_adapter_given = false, heads_given = false;
  for (const auto& [key, v] : flat) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) throw ConfigError("unknown config key '" + key + "'");
    const std::string section = key.substr(0, dot), field = key.substr(dot + 1);
    bool ok = false;
    if (section == "donor") {
      ok = assign_stack(c.donor, field, key, v);
    } else if (section == "receiver") {
      ok = assign_stack(c.receiver, field, key, v);
    } else if (section == "bridge") {
      ok = true;
      if (field == "placement") {
        if (!v.is_array()) throw ConfigError("config key 'bridge.placement' must be an array");
        c.bridge.placement.clear();
        for (const auto& e : v) c.bridge.placement.push_back(as_count(key, e));
        bridge_placement_given = true;
      } else if (field == "d_adapter") {
        c.bridge.d_adapter = as_count(key, v);
        d_adapter_given = true;
      } else if (field == "n_bridge_heads") {
        c.bridge.n_bridge_heads = as_count(key, v);
        heads_given = true;
      } else if (field == "gate_bias_init") {
        c.bridge.gate_bias_init = Scalar(as_real(key, v));
      } else {
        ok = false;
      }
    } else if (section == "train") {
      ok = true;
      auto& t = c.train;
      if (field == "epochs") t.epochs = as_count(key, v);
      else if (field == "batch_size") t.batch_size = as_count(key, v);
      else if (field == "lr_bridge") t.lr_bridge = as_real(key, v);
      else if (field == "lr_receiver") t.lr_receiver = as_real(key, v);
      else if (field == "weight_decay") t.weight_decay = as_real(key, v);
      else if (field == "patience") t.patience = as_count(key, v);
      else if (field == "min_delta") t.min_delta = as_real(key, v);
      else if (field == "seed") t.seed = as_count(key, v);
      else if (field == "max_tokens") t.max_tokens = as_count(key, v);
      else if (field == "val_fraction") t.val_fraction = as_real(key, v);
      else ok = false;
    }
    if (!ok) throw ConfigError("unknown config key '" + key + "'");
  }
  // Bridge defaults follow the receiver unless given explicitly.
  const BridgeConfig derived = BridgeConfig::defaults_for(c.receiver);
  if (!bridge_placement_given) c.bridge.placement = derived.placement;
  if (!d_adapter_given) c.bridge.d_adapter = derived.d_adapter;
  if (!heads_given) c.bridge.n_bridge_heads = derived.n_bridge_heads;
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(doc);
}

json to_json(const StackConfig& s) {
  return {{"n_layers", s.n_layers}, {"d_model", s.d_model}, {"n_heads", s.n_heads},
          {"d_ff", s.d_ff},         {"max_len", s.max_len}, {"vocab_size", s.vocab_size}};
}

StackConfig stack_config_from_json(const json& doc) {
  StackConfig s;
  s.n_layers = doc.at("n_layers").get<std::size_t>();
  s.d_model = doc.at("d_model").get<std::size_t>();
  s.n_heads = doc.at("n_heads").get<std::size_t>();
  s.d_ff = doc.at("d_ff").get<std::size_t>();
  s.max_len = doc.at("max_len").get<std::size_t>();
  s.vocab_size = doc.at("vocab_size").get<std::size_t>();
  s.validate();
  return s;
}

json to_json(const ExperimentConfig& c) {
  auto stack = [](const StackConfig& s) {
    return json{{"n_layers", s.n_layers}, {"d_model", s.d_model}, {"n_heads", s.n_heads},
                {"d_ff", s.d_ff},         {"max_len", s.max_len}};
  };
  const auto& t = c.train;
  return {{"donor", stack(c.donor)},
          {"receiver", stack(c.receiver)},
          {"bridge",
           {{"placement", c.bridge.placement},
            {"d_adapter", c.bridge.d_adapter},
            {"n_bridge_heads", c.bridge.n_bridge_heads},
            {"gate_bias_init", c.bridge.gate_bias_init}}},
          {"train",
           {{"epochs", t.epochs},
            {"batch_size", t.batch_size},
            {"lr_bridge", t.lr_bridge},
            {"lr_receiver", t.lr_receiver},
            {"weight_decay", t.weight_decay},
            {"patience", t.patience},
            {"min_delta", t.min_delta},
            {"seed", t.seed},
            {"max_tokens", t.max_tokens},
            {"val_fraction", t.val_fraction}}}};
}

}  // namespace xabr
