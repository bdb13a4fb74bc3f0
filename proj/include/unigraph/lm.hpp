#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "unigraph/tape.hpp"
#include "unigraph/text.hpp"

namespace unigraph {

struct LmConfig {
  int vocab_size = 512;
  int d = 64;  // hidden size
  int num_layers = 2;
  int num_heads = 4;
  int max_len = 32;
  double dropout = 0.2;
  int ffn_mult = 4;

  void validate() const {
    if (vocab_size < Vocab::kNumSpecials + 1) throw std::invalid_argument("vocab_size too small");
    if (d < 1 || d % num_heads != 0) throw std::invalid_argument("d must be divisible by num_heads");
    if (max_len < 2) throw std::invalid_argument("max_len must be >= 2");
    if (num_layers < 1) throw std::invalid_argument("num_layers must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must be in [0,1)");
  }
};

// Pre-LN transformer encoder over word ids. The [CLS] row is the node vector.
struct LmParams {
  struct Layer {
    Parameter ln1_g, ln1_b;
    Parameter wqkv, bqkv;  // d x 3d
    Parameter wo, bo;      // d x d
    Parameter ln2_g, ln2_b;
    Parameter w1, b1;  // d x ffn
    Parameter w2, b2;  // ffn x d
  };

  Parameter tok_emb;  // vocab x d
  Parameter pos_emb;  // max_len x d
  std::vector<Layer> layers;
  Parameter lnf_g, lnf_b;

  // Initialization order is fixed so a seed pins every weight. Weights are
  // symmetric uniform scaled by 1/sqrt(fan_in); gains 1, biases 0.
  void init(const LmConfig& cfg, Rng& rng) {
    cfg.validate();
    const int d = cfg.d, ffn = cfg.d * cfg.ffn_mult;
    tok_emb.init_uniform(cfg.vocab_size, d, rng, d);
    pos_emb.init_uniform(cfg.max_len, d, rng, d);
    layers.resize(cfg.num_layers);
    for (auto& l : layers) {
      l.ln1_g.init(1, d);
      l.ln1_g.value.fill(1.0);
      l.ln1_b.init(1, d);
      l.wqkv.init_uniform(d, 3 * d, rng, d);
      l.bqkv.init(1, 3 * d);
      l.wo.init_uniform(d, d, rng, d);
      l.bo.init(1, d);
      l.ln2_g.init(1, d);
      l.ln2_g.value.fill(1.0);
      l.ln2_b.init(1, d);
      l.w1.init_uniform(d, ffn, rng, d);
      l.b1.init(1, ffn);
      l.w2.init_uniform(ffn, d, rng, ffn);
      l.b2.init(1, d);
    }
    lnf_g.init(1, d);
    lnf_g.value.fill(1.0);
    lnf_b.init(1, d);
  }

  void named(NamedParams& out, const std::string& prefix) {
    out.emplace_back(prefix + ".tok_emb", &tok_emb);
    out.emplace_back(prefix + ".pos_emb", &pos_emb);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto& l = layers[i];
      const std::string p = prefix + ".layer" + std::to_string(i);
      out.emplace_back(p + ".ln1_g", &l.ln1_g);
      out.emplace_back(p + ".ln1_b", &l.ln1_b);
      out.emplace_back(p + ".wqkv", &l.wqkv);
      out.emplace_back(p + ".bqkv", &l.bqkv);
      out.emplace_back(p + ".wo", &l.wo);
      out.emplace_back(p + ".bo", &l.bo);
      out.emplace_back(p + ".ln2_g", &l.ln2_g);
      out.emplace_back(p + ".ln2_b", &l.ln2_b);
      out.emplace_back(p + ".w1", &l.w1);
      out.emplace_back(p + ".b1", &l.b1);
      out.emplace_back(p + ".w2", &l.w2);
      out.emplace_back(p + ".b2", &l.b2);
    }
    out.emplace_back(prefix + ".lnf_g", &lnf_g);
    out.emplace_back(prefix + ".lnf_b", &lnf_b);
  }
};

struct LmForwardOut {
  Tape::V hidden;  // (batch * padded_len) x d, final hidden states
  Tape::V cls;     // batch x d, [CLS] rows
  int batch = 0;
  int padded_len = 0;
};

// Sequences are padded to the batch maximum with [PAD]; attention masks pad
// key columns, so non-pad rows are unaffected by how much padding a batch
// carries.
inline LmForwardOut lm_forward_tape(Tape& t, const LmConfig& cfg, LmParams& p,
                                    const std::vector<const std::vector<int>*>& sequences, bool training,
                                    Rng* rng) {
  if (sequences.empty()) throw std::invalid_argument("empty batch");
  const int batch = static_cast<int>(sequences.size());
  int len = 2;
  for (const auto* s : sequences) {
    if (static_cast<int>(s->size()) > cfg.max_len) throw std::invalid_argument("sequence longer than max_len");
    len = std::max(len, static_cast<int>(s->size()));
  }

  std::vector<int> flat_ids(static_cast<std::size_t>(batch) * len, Vocab::kPad);
  std::vector<int> flat_pos(static_cast<std::size_t>(batch) * len);
  Matrix key_bias(batch, len);
  for (int b = 0; b < batch; ++b) {
    const auto& ids = *sequences[b];
    for (int i = 0; i < len; ++i) {
      flat_pos[static_cast<std::size_t>(b) * len + i] = i;
      if (i < static_cast<int>(ids.size()))
        flat_ids[static_cast<std::size_t>(b) * len + i] = ids[i];
      else
        key_bias(b, i) = -1e30;
    }
  }

  const double drop = training ? cfg.dropout : 0.0;
  auto maybe_drop = [&](Tape::V v) { return drop > 0.0 && rng ? t.dropout(v, drop, *rng) : v; };

  Tape::V tok = t.param(p.tok_emb);
  Tape::V pos = t.param(p.pos_emb);
  Tape::V x = t.add(t.gather_rows(tok, flat_ids), t.gather_rows(pos, flat_pos));
  x = maybe_drop(x);

  for (auto& l : p.layers) {
    Tape::V h = t.layernorm_rows(x, t.param(l.ln1_g), t.param(l.ln1_b));
    Tape::V qkv = t.add_rowvec(t.matmul(h, t.param(l.wqkv)), t.param(l.bqkv));
    Tape::V attn = t.attention_block(qkv, batch, len, cfg.num_heads, key_bias);
    attn = t.add_rowvec(t.matmul(attn, t.param(l.wo)), t.param(l.bo));
    x = t.add(x, maybe_drop(attn));

    Tape::V h2 = t.layernorm_rows(x, t.param(l.ln2_g), t.param(l.ln2_b));
    Tape::V f = t.gelu(t.add_rowvec(t.matmul(h2, t.param(l.w1)), t.param(l.b1)));
    f = t.add_rowvec(t.matmul(f, t.param(l.w2)), t.param(l.b2));
    x = t.add(x, maybe_drop(f));
  }
  Tape::V hidden = t.layernorm_rows(x, t.param(p.lnf_g), t.param(p.lnf_b));

  std::vector<int> cls_rows(batch);
  for (int b = 0; b < batch; ++b) cls_rows[b] = b * len;
  LmForwardOut out;
  out.hidden = hidden;
  out.cls = t.gather_rows(hidden, cls_rows);
  out.batch = batch;
  out.padded_len = len;
  return out;
}

struct LmEvalOut {
  std::vector<Matrix> hidden;  // per node, (n_v + 2) x d with padding rows dropped
  Matrix cls;                  // batch x d
};

inline LmEvalOut lm_forward(const LmConfig& cfg, LmParams& p, const std::vector<TokenSequence>& seqs) {
  std::vector<const std::vector<int>*> ids;
  ids.reserve(seqs.size());
  for (const auto& s : seqs) ids.push_back(&s.ids);
  Tape t;
  auto out = lm_forward_tape(t, cfg, p, ids, false, nullptr);
  LmEvalOut ev;
  ev.cls = t.val(out.cls);
  const Matrix& h = t.val(out.hidden);
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    const int rows = static_cast<int>(seqs[b].ids.size());
    Matrix m(rows, cfg.d);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cfg.d; ++j) m(i, j) = h(static_cast<int>(b) * out.padded_len + i, j);
    ev.hidden.push_back(std::move(m));
  }
  return ev;
}

}  // namespace unigraph
