#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "unigraph/gat.hpp"
#include "unigraph/lm.hpp"

namespace unigraph {

// All trainable state: shared LM (delta), online GNN (xi), EMA target GNN
// (xi'), decoder, MLM head, projector. The target GNN never enters the
// optimizer; the target LM is the online LM (shared parameters).
struct ModelState {
  LmConfig lm_cfg;
  GatConfig gnn_cfg;
  Vocab vocab;

  LmParams lm;
  GatParams gnn;
  GatParams gnn_target;
  Parameter decoder_w, decoder_b;  // 2d -> d
  Parameter head_w1, head_b1;      // d -> d
  Parameter head_w2, head_b2;      // d -> vocab
  Parameter proj_w, proj_b;        // d -> d

  static ModelState init(LmConfig lm_cfg, GatConfig gnn_cfg, Vocab vocab, std::uint64_t seed) {
    lm_cfg.vocab_size = vocab.size();
    gnn_cfg.d = lm_cfg.d;
    lm_cfg.validate();
    gnn_cfg.validate();

    ModelState s;
    s.lm_cfg = lm_cfg;
    s.gnn_cfg = gnn_cfg;
    s.vocab = std::move(vocab);

    Rng rng(mix_seed(seed, 0));
    const int d = lm_cfg.d;
    s.lm.init(lm_cfg, rng);
    s.gnn.init(gnn_cfg, rng);
    s.decoder_w.init_uniform(2 * d, d, rng, 2 * d);
    s.decoder_b.init(1, d);
    s.head_w1.init_uniform(d, d, rng, d);
    s.head_b1.init(1, d);
    s.head_w2.init_uniform(d, lm_cfg.vocab_size, rng, d);
    s.head_b2.init(1, lm_cfg.vocab_size);
    s.proj_w.init_uniform(d, d, rng, d);
    s.proj_b.init(1, d);
    s.gnn_target.copy_values_from(s.gnn);  // xi' == xi at start
    return s;
  }

  NamedParams trainable_params() {
    NamedParams out;
    lm.named(out, "lm");
    gnn.named(out, "gnn");
    out.emplace_back("decoder.w", &decoder_w);
    out.emplace_back("decoder.b", &decoder_b);
    out.emplace_back("head.w1", &head_w1);
    out.emplace_back("head.b1", &head_b1);
    out.emplace_back("head.w2", &head_w2);
    out.emplace_back("head.b2", &head_b2);
    out.emplace_back("proj.w", &proj_w);
    out.emplace_back("proj.b", &proj_b);
    return out;
  }

  NamedParams target_params() {
    NamedParams out;
    gnn_target.named(out, "gnn_target");
    return out;
  }

  NamedParams all_params() {
    NamedParams out = trainable_params();
    NamedParams tgt = target_params();
    out.insert(out.end(), tgt.begin(), tgt.end());
    return out;
  }

  void zero_grads() {
    for (auto& [name, p] : all_params()) p->zero_grad();
  }

  double grad_norm() {
    double s = 0.0;
    for (auto& [name, p] : trainable_params()) s += frobenius_norm_sq(p->grad);
    return std::sqrt(s);
  }

  // FNV-1a over parameter value bytes; used to assert inference is read-only.
  std::uint64_t value_checksum() {
    std::uint64_t h = 1469598103934665603ULL;
    for (auto& [name, p] : all_params()) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
      for (std::size_t i = 0; i < p->value.size() * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
      }
    }
    return h;
  }
};

// ---- checkpoint format -----------------------------------------------------
// magic | u64 manifest length | manifest JSON | u64 tensor count |
// per tensor: u32 name length, name, u32 rows, u32 cols, doubles
inline constexpr char kCheckpointMagic[8] = {'U', 'G', 'C', 'H', 'K', 'P', 'T', '1'};

inline void save_checkpoint(const std::string& path, const nlohmann::json& manifest,
                            const std::vector<std::pair<std::string, const Matrix*>>& tensors) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::string m = manifest.dump();
  const std::uint64_t mlen = m.size();
  f.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
  f.write(m.data(), static_cast<std::streamsize>(m.size()));
  const std::uint64_t count = tensors.size();
  f.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& [name, mat] : tensors) {
    const std::uint32_t nlen = static_cast<std::uint32_t>(name.size());
    f.write(reinterpret_cast<const char*>(&nlen), sizeof(nlen));
    f.write(name.data(), nlen);
    const std::uint32_t rows = static_cast<std::uint32_t>(mat->rows());
    const std::uint32_t cols = static_cast<std::uint32_t>(mat->cols());
    f.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
    f.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
    f.write(reinterpret_cast<const char*>(mat->data()), static_cast<std::streamsize>(mat->size() * sizeof(double)));
  }
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

struct CheckpointData {
  nlohmann::json manifest;
  std::map<std::string, Matrix> tensors;
};

inline CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  std::uint64_t mlen = 0;
  f.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
  std::string m(mlen, '\0');
  f.read(m.data(), static_cast<std::streamsize>(mlen));
  CheckpointData out;
  out.manifest = nlohmann::json::parse(m);
  std::uint64_t count = 0;
  f.read(reinterpret_cast<char*>(&count), sizeof(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t nlen = 0, rows = 0, cols = 0;
    f.read(reinterpret_cast<char*>(&nlen), sizeof(nlen));
    std::string name(nlen, '\0');
    f.read(name.data(), nlen);
    f.read(reinterpret_cast<char*>(&rows), sizeof(rows));
    f.read(reinterpret_cast<char*>(&cols), sizeof(cols));
    Matrix mat(static_cast<int>(rows), static_cast<int>(cols));
    f.read(reinterpret_cast<char*>(mat.data()), static_cast<std::streamsize>(mat.size() * sizeof(double)));
    if (!f) throw std::runtime_error("truncated checkpoint: " + path);
    out.tensors.emplace(std::move(name), std::move(mat));
  }
  return out;
}

inline LmConfig lm_config_from_json(const nlohmann::json& j) {
  LmConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.d = j.at("d").get<int>();
  c.num_layers = j.at("num_layers").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.ffn_mult = j.at("ffn_mult").get<int>();
  return c;
}

inline nlohmann::json lm_config_to_json(const LmConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d", c.d},           {"num_layers", c.num_layers},
          {"num_heads", c.num_heads},   {"max_len", c.max_len}, {"dropout", c.dropout},
          {"ffn_mult", c.ffn_mult}};
}

inline GatConfig gat_config_from_json(const nlohmann::json& j) {
  GatConfig c;
  c.num_layers = j.at("num_layers").get<int>();
  c.d = j.at("d").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.attention_dropout = j.at("attention_dropout").get<double>();
  c.residual = j.at("residual").get<bool>();
  c.leaky_slope = j.at("leaky_slope").get<double>();
  c.nonlinearity = j.at("nonlinearity").get<std::string>();
  return c;
}

inline nlohmann::json gat_config_to_json(const GatConfig& c) {
  return {{"num_layers", c.num_layers},
          {"d", c.d},
          {"num_heads", c.num_heads},
          {"attention_dropout", c.attention_dropout},
          {"residual", c.residual},
          {"leaky_slope", c.leaky_slope},
          {"nonlinearity", c.nonlinearity}};
}

inline void save_model_state(const std::string& path, ModelState& state, nlohmann::json manifest,
                             const std::vector<std::pair<std::string, const Matrix*>>& extra = {}) {
  manifest["lm_config"] = lm_config_to_json(state.lm_cfg);
  manifest["gnn_config"] = gat_config_to_json(state.gnn_cfg);
  manifest["vocab"] = state.vocab.to_json();
  std::vector<std::pair<std::string, const Matrix*>> tensors;
  for (auto& [name, p] : state.all_params()) tensors.emplace_back(name, &p->value);
  for (const auto& e : extra) tensors.push_back(e);
  save_checkpoint(path, manifest, tensors);
}

inline ModelState load_model_state(const CheckpointData& ckpt) {
  LmConfig lm_cfg = lm_config_from_json(ckpt.manifest.at("lm_config"));
  GatConfig gnn_cfg = gat_config_from_json(ckpt.manifest.at("gnn_config"));
  Vocab vocab = Vocab::from_json(ckpt.manifest.at("vocab"));
  ModelState state = ModelState::init(lm_cfg, gnn_cfg, std::move(vocab), 0);
  for (auto& [name, p] : state.all_params()) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw std::runtime_error("checkpoint missing tensor: " + name);
    if (!it->second.same_shape(p->value)) throw std::runtime_error("checkpoint tensor shape mismatch: " + name);
    p->value = it->second;
    p->zero_grad();
  }
  return state;
}

inline ModelState load_model_state(const std::string& path) { return load_model_state(load_checkpoint(path)); }

}  // namespace unigraph
