#include "magup/config.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "magup/errors.hpp"

namespace magup {

using nlohmann::json;

namespace {

json encode(const AdapterPlacement& p) { return p == AdapterPlacement::parallel ? "parallel" : "sequential"; }
json encode(const EmptyRegionPolicy&) { return "identity"; }
template <typename T>
json encode(const T& v) {
  return v;
}

void decode(const json& j, AdapterPlacement& p) {
  const auto s = j.get<std::string>();
  if (s == "parallel") {
    p = AdapterPlacement::parallel;
  } else if (s == "sequential") {
    p = AdapterPlacement::sequential;
  } else {
    throw ConfigError("placement must be parallel or sequential, got '" + s + "'");
  }
}
void decode(const json& j, EmptyRegionPolicy& p) {
  if (j.get<std::string>() != "identity") throw ConfigError("empty_policy must be identity");
  p = EmptyRegionPolicy::identity;
}
template <typename T>
void decode(const json& j, T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) throw ConfigError("expected true or false");
  } else if constexpr (std::is_unsigned_v<T>) {
    if (!j.is_number_unsigned()) throw ConfigError("expected a non-negative integer");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!j.is_number()) throw ConfigError("expected a number");
  }
  v = j.get<T>();
}

// One table drives serialisation, parsing and key validation.
template <typename F>
void fields(RunConfig& c, F&& f) {
  auto& m = c.model;
  auto& e = m.encoder;
  auto& a = e.adapter;
  auto& t = c.train;
  f("model", "seed", m.seed);
  f("model", "use_bdc", m.use_bdc);
  f("encoder", "image_size", e.image_size);
  f("encoder", "patch", e.patch);
  f("encoder", "d_model", e.d_model);
  f("encoder", "blocks", e.blocks);
  f("encoder", "heads", e.heads);
  f("encoder", "mlp_ratio", e.mlp_ratio);
  f("encoder", "placement", e.placement);
  f("encoder", "freeze_backbone", e.freeze_backbone);
  f("magup", "reduction", a.reduction);
  f("magup", "c0", a.c0);
  f("magup", "c1", a.c1);
  f("magup", "c5", a.c5);
  f("magup", "msd", a.msd);
  f("magup", "mamba1d", a.mamba1d);
  f("magup", "mamba2d", a.mamba2d);
  f("magup", "swap_streams", a.swap_streams);
  f("magup", "share_directions", a.share_directions);
  f("magup", "d_state", a.d_state);
  f("magup", "channel_embed", a.channel_embed);
  f("decoder", "heads", m.decoder.heads);
  f("decoder", "depth", m.decoder.depth);
  f("decoder", "mlp_ratio", m.decoder.mlp_ratio);
  f("bdc", "d_k", m.bdc.d_k);
  f("bdc", "stop_gradient", m.bdc.stop_gradient);
  f("bdc", "residual", m.bdc.residual);
  f("bdc", "empty_policy", m.bdc.empty_policy);
  f("train", "lr", t.lr);
  f("train", "batch", t.batch);
  f("train", "epochs", t.epochs);
  f("train", "max_steps", t.max_steps);
  f("train", "lambda_distill", t.lambda_distill);
  f("train", "seed", t.seed);
  f("train", "augment", t.augment);
  f("train", "scales", t.scales);
  f("train", "dice_eps", t.loss.dice_eps);
  f("train", "bce_delta", t.loss.bce_delta);
  f("train", "boundary_gain", t.loss.boundary_gain);
  f("train", "boundary_kernel", t.loss.boundary_kernel);
}

}  // namespace

json to_json(const RunConfig& cfg_in) {
  RunConfig cfg = cfg_in;
  json j = json::object();
  fields(cfg, [&](const char* sec, const char* key, auto& v) { j[sec][key] = encode(v); });
  return j;
}

RunConfig run_config_from_json(const json& j, const RunConfig& base) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig cfg = base;
  std::map<std::string, std::set<std::string>> known;
  fields(cfg, [&](const char* sec, const char* key, auto&) { known[sec].insert(key); });
  for (const auto& [sec, body] : j.items()) {
    if (!known.contains(sec)) throw ConfigError("unknown config section '" + sec + "'");
    if (!body.is_object()) throw ConfigError("config section '" + sec + "' must be an object");
    for (const auto& [key, value] : body.items()) {
      if (!known[sec].contains(key)) throw ConfigError("unknown config key '" + sec + "." + key + "'");
    }
  }
  fields(cfg, [&](const char* sec, const char* key, auto& v) {
    if (!j.contains(sec) || !j.at(sec).contains(key)) return;
    try {
      decode(j.at(sec).at(key), v);
    } catch (const json::exception& ex) {
      throw ConfigError(std::string("config key '") + sec + "." + key + "': " + ex.what());
    } catch (const ConfigError& ex) {
      throw ConfigError(std::string("config key '") + sec + "." + key + "': " + ex.what());
    }
  });
  cfg.train.validate();
  cfg.model.encoder.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& ex) {
    throw ConfigError("config " + path.string() + ": " + ex.what());
  }
  return run_config_from_json(j, base);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("override '" + assignment + "' is not section.key=value");
  }
  const std::string sec = assignment.substr(0, dot), key = assignment.substr(dot + 1, eq - dot - 1);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json patch;
  patch[sec][key] = value;
  cfg = run_config_from_json(patch, cfg);
}

void apply_ablation(RunConfig& cfg, const std::string& list) {
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    if (item == "msd") {
      cfg.model.encoder.adapter.msd = false;
    } else if (item == "1dmamba") {
      cfg.model.encoder.adapter.mamba1d = false;
    } else if (item == "2dmamba") {
      cfg.model.encoder.adapter.mamba2d = false;
    } else if (item == "bdc") {
      cfg.model.use_bdc = false;
    } else {
      throw ConfigError("unknown ablation '" + item + "' (expected msd, 1dmamba, 2dmamba, bdc)");
    }
  }
}

RunConfig ablation_row(const RunConfig& base, int row) {
  if (row < 0 || row > 4) throw ConfigError("ablation row must be 0..4");
  RunConfig c = base;
  c.model.encoder.adapter.msd = row >= 1;
  c.model.encoder.adapter.mamba1d = row >= 2;
  c.model.encoder.adapter.mamba2d = row >= 3;
  c.model.use_bdc = row >= 4;
  return c;
}

}  // namespace magup
