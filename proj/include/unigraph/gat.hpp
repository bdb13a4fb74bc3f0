#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "unigraph/lm.hpp"
#include "unigraph/tape.hpp"

namespace unigraph {

struct GatConfig {
  int num_layers = 3;
  int d = 64;
  int num_heads = 4;
  double attention_dropout = 0.2;
  bool residual = true;
  double leaky_slope = 0.2;
  std::string nonlinearity = "elu";

  void validate() const {
    if (num_layers < 1) throw std::invalid_argument("num_gnn_layers must be >= 1");
    if (d < 1 || num_heads < 1) throw std::invalid_argument("bad gnn width/heads");
    if (!(attention_dropout >= 0.0 && attention_dropout < 1.0))
      throw std::invalid_argument("attention_dropout must be in [0,1)");
  }
};

// GAT-style message passing. Each head transforms with its own d x d map;
// head outputs are averaged so the width stays d across layers. Every node
// carries a self slot inside the neighborhood softmax.
struct GatParams {
  struct Layer {
    Parameter w;         // d x (heads * d)
    Parameter attn_src;  // heads x d
    Parameter attn_dst;  // heads x d
  };
  std::vector<Layer> layers;

  void init(const GatConfig& cfg, Rng& rng) {
    cfg.validate();
    layers.resize(cfg.num_layers);
    for (auto& l : layers) {
      l.w.init_uniform(cfg.d, cfg.num_heads * cfg.d, rng, cfg.d);
      l.attn_src.init_uniform(cfg.num_heads, cfg.d, rng, cfg.d);
      l.attn_dst.init_uniform(cfg.num_heads, cfg.d, rng, cfg.d);
    }
  }

  void named(NamedParams& out, const std::string& prefix) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string p = prefix + ".layer" + std::to_string(i);
      out.emplace_back(p + ".w", &layers[i].w);
      out.emplace_back(p + ".attn_src", &layers[i].attn_src);
      out.emplace_back(p + ".attn_dst", &layers[i].attn_dst);
    }
  }

  void copy_values_from(const GatParams& other) {
    layers.resize(other.layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].w = other.layers[i].w;
      layers[i].attn_src = other.layers[i].attn_src;
      layers[i].attn_dst = other.layers[i].attn_dst;
      layers[i].w.zero_grad();
      layers[i].attn_src.zero_grad();
      layers[i].attn_dst.zero_grad();
    }
  }
};

inline Tape::V apply_nonlinearity(Tape& t, Tape::V v, const std::string& name, double leaky_slope) {
  if (name == "elu") return t.elu(v);
  if (name == "relu") return t.relu(v);
  if (name == "gelu") return t.gelu(v);
  if (name == "tanh") return t.tanh_act(v);
  if (name == "leaky_relu") return t.leaky_relu(v, leaky_slope);
  if (name == "identity" || name == "none") return v;
  throw std::invalid_argument("unknown nonlinearity: " + name);
}

// x is the (n x d) input matrix aligned with sub's local ids. edge_feats, when
// present, is aligned with sub's local CSR entries and multiplies neighbor
// messages elementwise. Layer update: out = sigma(mean_h attention_h(x W_h)),
// plus the residual input when configured.
inline Tape::V gat_forward_tape(Tape& t, const GatConfig& cfg, GatParams& p, const ContextSubgraph& sub,
                                Tape::V x, const Matrix* edge_feats, bool training, Rng* rng,
                                Tape::GatDebug* debug = nullptr) {
  cfg.validate();
  if (t.val(x).cols() != cfg.d) throw std::invalid_argument("gnn input width mismatch");
  if (t.val(x).rows() != static_cast<int>(sub.num_nodes()))
    throw std::invalid_argument("gnn input row count mismatch");

  for (auto& layer : p.layers) {
    Tape::V z_all = t.matmul(x, t.param(layer.w));
    Tape::V asrc = t.param(layer.attn_src);
    Tape::V adst = t.param(layer.attn_dst);

    std::vector<double> keep_mask;
    const std::vector<double>* keep = nullptr;
    if (training && cfg.attention_dropout > 0.0 && rng) {
      const double scale = 1.0 / (1.0 - cfg.attention_dropout);
      keep_mask.resize(sub.num_nodes() + sub.csr_targets.size());
      for (auto& k : keep_mask) k = rng->uniform() < cfg.attention_dropout ? 0.0 : scale;
      keep = &keep_mask;
    }

    Tape::V summed;
    for (int h = 0; h < cfg.num_heads; ++h) {
      Tape::V z_h = cfg.num_heads == 1 ? z_all : t.slice_cols(z_all, h * cfg.d, cfg.d);
      Tape::V head = t.gat_attention(z_h, asrc, adst, h, sub, edge_feats, cfg.leaky_slope, keep,
                                     h == 0 ? debug : nullptr);
      summed = summed.valid() ? t.add(summed, head) : head;
    }
    Tape::V mean = cfg.num_heads == 1 ? summed : t.scale(summed, 1.0 / cfg.num_heads);
    Tape::V act = apply_nonlinearity(t, mean, cfg.nonlinearity, cfg.leaky_slope);
    x = cfg.residual ? t.add(x, act) : act;
  }
  return x;
}

inline Matrix gat_forward(const GatConfig& cfg, GatParams& p, const ContextSubgraph& sub, const Matrix& x,
                          const Matrix* edge_feats = nullptr) {
  Tape t;
  Tape::V in = t.leaf(x);
  Tape::V out = gat_forward_tape(t, cfg, p, sub, in, edge_feats, false, nullptr);
  return t.val(out);
}

// Per-edge vectors from the LM: each edge text is tokenized, encoded, and its
// [CLS] row becomes the edge vector. Computed once per graph; no gradient
// flows through this pre-processing. Rows align with the graph's CSR entries.
inline Matrix encode_edge_features(const LmConfig& cfg, LmParams& lm, const Vocab& vocab,
                                   const TextAttributedGraph& g) {
  if (!g.has_edge_texts()) throw std::invalid_argument("no edge texts");
  const auto& texts = g.edge_texts();

  std::map<std::string, std::size_t> unique;  // text -> row in batch
  std::vector<TokenSequence> seqs;
  for (const auto& text : texts) {
    if (unique.emplace(text, seqs.size()).second) seqs.push_back(tokenize(vocab, text, cfg.max_len));
  }
  LmEvalOut out = lm_forward(cfg, lm, seqs);

  Matrix table(static_cast<int>(texts.size()), cfg.d);
  for (std::size_t e = 0; e < texts.size(); ++e) {
    const std::size_t row = unique.at(texts[e]);
    for (int j = 0; j < cfg.d; ++j) table(static_cast<int>(e), j) = out.cls(static_cast<int>(row), j);
  }
  return table;
}

// Local slice of a per-graph edge feature table aligned with sub's entries.
inline Matrix slice_edge_features(const Matrix& table, const ContextSubgraph& sub) {
  Matrix local(static_cast<int>(sub.parent_entries.size()), table.cols());
  for (std::size_t e = 0; e < sub.parent_entries.size(); ++e)
    for (int j = 0; j < table.cols(); ++j)
      local(static_cast<int>(e), j) = table(static_cast<int>(sub.parent_entries[e]), j);
  return local;
}

}  // namespace unigraph
