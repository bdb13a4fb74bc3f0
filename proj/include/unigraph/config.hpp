#pragma once

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "unigraph/eval.hpp"
#include "unigraph/gat.hpp"
#include "unigraph/lm.hpp"
#include "unigraph/pretrain.hpp"

namespace unigraph {

// Flat run configuration. Every key is known; unknown keys are errors. The
// fully resolved config is echoed into every output manifest.
struct RunConfig {
  std::string profile = "desk";
  std::uint64_t seed = 0;

  int vocab_size = 512;
  int hidden_size = 64;
  int num_lm_layers = 2;
  int num_heads = 4;
  int max_len = 32;
  int ffn_mult = 4;

  double dropout = 0.2;
  double mask_rate = 0.75;
  double lr = 1e-3;
  double weight_decay = 0.001;
  double ema_decay = 0.996;
  double lambda = 0.1;

  int num_gnn_layers = 3;
  int gnn_num_heads = 4;
  bool gnn_residual = true;
  double attention_dropout = 0.2;
  std::string gnn_nonlinearity = "elu";
  double leaky_slope = 0.2;

  double ppr_alpha = 0.15;
  double ppr_epsilon = 1e-6;
  int ppr_topk = 128;

  int batch_anchors = 8;
  int num_epochs = 1;
  int max_steps = 0;
  int checkpoint_interval = 0;
  std::string latent_source = "lm_cls";
  std::string optimizer = "adamw";

  double probe_lr = 0.01;
  int probe_epochs = 5000;
  int probe_patience = 200;
  int probe_eval_every = 10;
  bool probe_bias = true;

  int fewshot_ways = 3;
  int fewshot_shots = 3;
  int fewshot_tasks = 500;
  int fewshot_query_cap = 50;

  int neighbor_cap = 8;
  bool deterministic = true;

  nlohmann::json echo() const;

  LmConfig lm_config() const {
    LmConfig c;
    c.vocab_size = vocab_size;
    c.d = hidden_size;
    c.num_layers = num_lm_layers;
    c.num_heads = num_heads;
    c.max_len = max_len;
    c.dropout = dropout;
    c.ffn_mult = ffn_mult;
    return c;
  }

  GatConfig gat_config() const {
    GatConfig c;
    c.num_layers = num_gnn_layers;
    c.d = hidden_size;
    c.num_heads = gnn_num_heads;
    c.attention_dropout = attention_dropout;
    c.residual = gnn_residual;
    c.leaky_slope = leaky_slope;
    c.nonlinearity = gnn_nonlinearity;
    return c;
  }

  PprParams ppr_params() const {
    PprParams p;
    p.alpha = ppr_alpha;
    p.epsilon = ppr_epsilon;
    p.topk = static_cast<std::size_t>(ppr_topk);
    return p;
  }

  PretrainConfig pretrain_config() const {
    PretrainConfig c;
    c.mask_rate = mask_rate;
    c.lr = lr;
    c.weight_decay = weight_decay;
    c.ema_decay = ema_decay;
    c.lambda = lambda;
    c.batch_anchors = batch_anchors;
    c.num_epochs = num_epochs;
    c.max_steps = max_steps;
    c.seed = seed;
    c.latent_source = latent_source;
    c.ppr = ppr_params();
    c.checkpoint_interval = checkpoint_interval;
    return c;
  }

  ProbeConfig probe_config() const {
    ProbeConfig c;
    c.lr = probe_lr;
    c.epochs = probe_epochs;
    c.patience = probe_patience;
    c.eval_every = probe_eval_every;
    c.bias = probe_bias;
    c.seed = seed;
    return c;
  }
};

namespace detail {

struct ConfigKey {
  std::function<void(RunConfig&, const nlohmann::json&)> set;
  std::function<nlohmann::json(const RunConfig&)> get;
};

inline const std::map<std::string, ConfigKey>& config_registry() {
  static const std::map<std::string, ConfigKey> registry = [] {
    std::map<std::string, ConfigKey> r;
    auto add_str = [&](const std::string& key, std::string RunConfig::* field) {
      r[key] = {[field, key](RunConfig& c, const nlohmann::json& v) {
                  if (!v.is_string()) throw std::invalid_argument("type mismatch for key " + key + ": expected string");
                  c.*field = v.get<std::string>();
                },
                [field](const RunConfig& c) { return nlohmann::json(c.*field); }};
    };
    auto add_int = [&](const std::string& key, int RunConfig::* field) {
      r[key] = {[field, key](RunConfig& c, const nlohmann::json& v) {
                  if (!v.is_number_integer()) throw std::invalid_argument("type mismatch for key " + key + ": expected integer");
                  c.*field = v.get<int>();
                },
                [field](const RunConfig& c) { return nlohmann::json(c.*field); }};
    };
    auto add_u64 = [&](const std::string& key, std::uint64_t RunConfig::* field) {
      r[key] = {[field, key](RunConfig& c, const nlohmann::json& v) {
                  if (!v.is_number_integer() && !v.is_number_unsigned())
                    throw std::invalid_argument("type mismatch for key " + key + ": expected integer");
                  c.*field = v.get<std::uint64_t>();
                },
                [field](const RunConfig& c) { return nlohmann::json(c.*field); }};
    };
    auto add_num = [&](const std::string& key, double RunConfig::* field) {
      r[key] = {[field, key](RunConfig& c, const nlohmann::json& v) {
                  if (!v.is_number()) throw std::invalid_argument("type mismatch for key " + key + ": expected number");
                  c.*field = v.get<double>();
                },
                [field](const RunConfig& c) { return nlohmann::json(c.*field); }};
    };
    auto add_bool = [&](const std::string& key, bool RunConfig::* field) {
      r[key] = {[field, key](RunConfig& c, const nlohmann::json& v) {
                  if (!v.is_boolean()) throw std::invalid_argument("type mismatch for key " + key + ": expected bool");
                  c.*field = v.get<bool>();
                },
                [field](const RunConfig& c) { return nlohmann::json(c.*field); }};
    };

    add_str("profile", &RunConfig::profile);
    add_u64("seed", &RunConfig::seed);
    add_int("vocab_size", &RunConfig::vocab_size);
    add_int("hidden_size", &RunConfig::hidden_size);
    add_int("num_lm_layers", &RunConfig::num_lm_layers);
    add_int("num_heads", &RunConfig::num_heads);
    add_int("max_len", &RunConfig::max_len);
    add_int("ffn_mult", &RunConfig::ffn_mult);
    add_num("dropout", &RunConfig::dropout);
    add_num("mask_rate", &RunConfig::mask_rate);
    add_num("lr", &RunConfig::lr);
    add_num("weight_decay", &RunConfig::weight_decay);
    add_num("ema_decay", &RunConfig::ema_decay);
    add_num("lambda", &RunConfig::lambda);
    add_int("num_gnn_layers", &RunConfig::num_gnn_layers);
    add_int("gnn_num_heads", &RunConfig::gnn_num_heads);
    add_bool("gnn_residual", &RunConfig::gnn_residual);
    add_num("attention_dropout", &RunConfig::attention_dropout);
    add_str("gnn_nonlinearity", &RunConfig::gnn_nonlinearity);
    add_num("leaky_slope", &RunConfig::leaky_slope);
    add_num("ppr_alpha", &RunConfig::ppr_alpha);
    add_num("ppr_epsilon", &RunConfig::ppr_epsilon);
    add_int("ppr_topk", &RunConfig::ppr_topk);
    add_int("batch_anchors", &RunConfig::batch_anchors);
    add_int("num_epochs", &RunConfig::num_epochs);
    add_int("max_steps", &RunConfig::max_steps);
    add_int("checkpoint_interval", &RunConfig::checkpoint_interval);
    add_str("latent_source", &RunConfig::latent_source);
    add_str("optimizer", &RunConfig::optimizer);
    add_num("probe_lr", &RunConfig::probe_lr);
    add_int("probe_epochs", &RunConfig::probe_epochs);
    add_int("probe_patience", &RunConfig::probe_patience);
    add_int("probe_eval_every", &RunConfig::probe_eval_every);
    add_bool("probe_bias", &RunConfig::probe_bias);
    add_int("fewshot_ways", &RunConfig::fewshot_ways);
    add_int("fewshot_shots", &RunConfig::fewshot_shots);
    add_int("fewshot_tasks", &RunConfig::fewshot_tasks);
    add_int("fewshot_query_cap", &RunConfig::fewshot_query_cap);
    add_int("neighbor_cap", &RunConfig::neighbor_cap);
    add_bool("deterministic", &RunConfig::deterministic);
    return r;
  }();
  return registry;
}

inline void apply_key(RunConfig& cfg, const std::string& key, const nlohmann::json& value) {
  auto it = config_registry().find(key);
  if (it == config_registry().end()) throw std::invalid_argument("unknown config key: " + key);
  it->second.set(cfg, value);
}

// Env and flag values arrive as strings; numbers and bools parse as JSON,
// anything else stays a string.
inline nlohmann::json coerce_value(const std::string& raw) {
  try {
    nlohmann::json v = nlohmann::json::parse(raw);
    if (v.is_number() || v.is_boolean()) return v;
  } catch (...) {
  }
  return nlohmann::json(raw);
}

inline std::string env_var_for_key(const std::string& key) {
  std::string name = "UNIGRAPH_";
  for (char c : key) name += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return name;
}

}  // namespace detail

inline nlohmann::json RunConfig::echo() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, entry] : detail::config_registry()) j[key] = entry.get(*this);
  return j;
}

inline RunConfig profile_defaults(const std::string& profile) {
  RunConfig cfg;  // struct defaults are the desk profile
  cfg.profile = profile;
  if (profile == "desk") return cfg;
  if (profile == "paper") {
    cfg.hidden_size = 768;
    cfg.num_lm_layers = 12;
    cfg.num_heads = 12;
    cfg.max_len = 512;
    cfg.vocab_size = 50000;
    cfg.mask_rate = 0.75;
    cfg.lr = 2e-5;
    cfg.weight_decay = 0.001;
    cfg.dropout = 0.2;
    cfg.num_gnn_layers = 3;
    cfg.ppr_topk = 128;
    cfg.ema_decay = 0.996;
    cfg.lambda = 0.1;
    cfg.num_epochs = 1;
    return cfg;
  }
  throw std::invalid_argument("unknown profile: " + profile);
}

// Precedence: profile defaults < config file < environment (UNIGRAPH_*) <
// flag overrides.
inline RunConfig parse_config(const std::string& file_path,
                              const std::map<std::string, std::string>& flag_overrides = {},
                              bool use_env = true) {
  nlohmann::json file = nlohmann::json::object();
  if (!file_path.empty()) {
    std::ifstream f(file_path);
    if (!f) throw std::runtime_error("cannot open config file: " + file_path);
    try {
      f >> file;
    } catch (const std::exception& e) {
      throw std::runtime_error("malformed config file " + file_path + ": " + e.what());
    }
    if (!file.is_object()) throw std::runtime_error("config file must hold a JSON object");
  }

  // resolve the profile first so its defaults underlie everything else
  std::string profile = "desk";
  if (file.contains("profile")) profile = file["profile"].get<std::string>();
  if (use_env) {
    if (const char* env = std::getenv("UNIGRAPH_PROFILE")) profile = env;
  }
  if (auto it = flag_overrides.find("profile"); it != flag_overrides.end()) profile = it->second;

  RunConfig cfg = profile_defaults(profile);
  for (auto it = file.begin(); it != file.end(); ++it) {
    if (it.key() == "profile") continue;
    detail::apply_key(cfg, it.key(), it.value());
  }
  if (use_env) {
    for (const auto& [key, entry] : detail::config_registry()) {
      if (key == "profile") continue;
      if (const char* env = std::getenv(detail::env_var_for_key(key).c_str()))
        detail::apply_key(cfg, key, detail::coerce_value(env));
    }
  }
  for (const auto& [key, raw] : flag_overrides) {
    if (key == "profile") continue;
    detail::apply_key(cfg, key, detail::coerce_value(raw));
  }
  return cfg;
}

// Sidecar manifest carrying the resolved config and seed for any artifact.
inline void write_manifest(const std::string& artifact_path, const RunConfig& cfg,
                           nlohmann::json extra = nlohmann::json::object()) {
  nlohmann::json m = std::move(extra);
  m["config"] = cfg.echo();
  m["seed"] = cfg.seed;
  std::ofstream f(artifact_path + ".manifest.json");
  if (!f) throw std::runtime_error("cannot write manifest for " + artifact_path);
  f << m.dump(2) << "\n";
}

}  // namespace unigraph
