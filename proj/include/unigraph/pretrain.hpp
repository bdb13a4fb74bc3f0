#pragma once

#include <algorithm>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "unigraph/model.hpp"
#include "unigraph/optimizer.hpp"
#include "unigraph/ppr.hpp"
#include "unigraph/text.hpp"

namespace unigraph {

struct PretrainConfig {
  double mask_rate = 0.75;
  double lr = 1e-3;
  double weight_decay = 0.001;
  double ema_decay = 0.996;
  double lambda = 0.1;
  int batch_anchors = 8;
  int num_epochs = 1;
  int max_steps = 0;  // 0: run num_epochs; otherwise stop after this many steps
  std::uint64_t seed = 0;
  std::string latent_source = "lm_cls";  // or "gnn_cls"
  PprParams ppr;
  int checkpoint_interval = 0;
  std::string checkpoint_path;

  void validate() const {
    if (!(mask_rate >= 0.0 && mask_rate <= 1.0)) throw std::invalid_argument("mask_rate must be in [0,1]");
    if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw std::invalid_argument("ema_decay must be in [0,1]");
    if (lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
    if (batch_anchors < 1) throw std::invalid_argument("batch_anchors must be >= 1");
    if (latent_source != "lm_cls" && latent_source != "gnn_cls")
      throw std::invalid_argument("latent_source must be lm_cls or gnn_cls");
    ppr.validate();
  }
};

struct StepReport {
  long long step = 0;
  double loss_mask = 0.0;
  double loss_latent = 0.0;
  double loss_total = 0.0;
  long long masked_token_count = 0;
  double grad_norm = 0.0;

  nlohmann::json to_json() const {
    return {{"step", step},
            {"loss_mask", loss_mask},
            {"loss_latent", loss_latent},
            {"loss_total", loss_total},
            {"masked_token_count", masked_token_count},
            {"grad_norm", grad_norm}};
  }
};

// ---- decoder and losses ------------------------------------------------------

// Broadcast each node's propagated [CLS] vector to its token rows, concat with
// the masked hidden states (rows -> 2d), decode to d, then map to vocab logits
// through the two-layer head.
inline Tape::V decode_logits_tape(Tape& t, ModelState& s, Tape::V hidden, Tape::V gnn_cls, int padded_len) {
  Tape::V ctx = t.repeat_rows_blocks(gnn_cls, padded_len);
  Tape::V cat = t.concat_cols(hidden, ctx);
  Tape::V dec = t.add_rowvec(t.matmul(cat, t.param(s.decoder_w)), t.param(s.decoder_b));
  Tape::V h1 = t.gelu(t.add_rowvec(t.matmul(dec, t.param(s.head_w1)), t.param(s.head_b1)));
  return t.add_rowvec(t.matmul(h1, t.param(s.head_w2)), t.param(s.head_b2));
}

// Single-node convenience: masked hidden (n_v+2) x d and one propagated [CLS]
// vector of length d produce (n_v+2) x vocab logits.
inline Matrix decode_logits(ModelState& s, const Matrix& masked_hidden, const std::vector<double>& gnn_cls) {
  if (static_cast<int>(gnn_cls.size()) != masked_hidden.cols())
    throw std::invalid_argument("decode width mismatch");
  Tape t;
  Matrix cls_m(1, static_cast<int>(gnn_cls.size()));
  for (std::size_t j = 0; j < gnn_cls.size(); ++j) cls_m(0, static_cast<int>(j)) = gnn_cls[j];
  Tape::V out = decode_logits_tape(t, s, t.leaf(masked_hidden), t.leaf(cls_m), masked_hidden.rows());
  return t.val(out);
}

// Cross-entropy over masked positions with one global normalizer across the
// whole batch. Zero masked positions yields 0 by convention.
inline double mlm_loss(const std::vector<Matrix>& logits, const std::vector<MaskedSequence>& masked,
                       const std::vector<TokenSequence>& originals) {
  if (logits.size() != masked.size() || masked.size() != originals.size())
    throw std::invalid_argument("mlm_loss batch size mismatch");
  double total = 0.0;
  long long count = 0;
  for (std::size_t v = 0; v < logits.size(); ++v) {
    const Matrix& l = logits[v];
    if (l.rows() != static_cast<int>(masked[v].ids.size())) throw std::invalid_argument("mlm_loss row mismatch");
    for (int i = 0; i < l.rows(); ++i) {
      if (!masked[v].mask_flags[i]) continue;
      const int target = originals[v].ids[i];
      double mx = l(i, 0);
      for (int j = 1; j < l.cols(); ++j) mx = std::max(mx, l(i, j));
      double sum = 0.0;
      for (int j = 0; j < l.cols(); ++j) sum += std::exp(l(i, j) - mx);
      total += mx + std::log(sum) - l(i, target);
      ++count;
    }
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

// Mean over rows of one minus cosine similarity; zero-norm rows contribute 1.
inline double latent_loss(const Matrix& projected, const Matrix& target_cls, int* zero_row_warnings = nullptr) {
  Tape t;
  int warn = 0;
  Tape::V v = t.latent_cosine_loss(t.leaf(projected), target_cls, &warn);
  if (zero_row_warnings) *zero_row_warnings = warn;
  return t.val(v)(0, 0);
}

// ---- siamese target ----------------------------------------------------------

// Unmasked pass through the shared LM and the EMA GNN copy. Runs on its own
// tape and returns a plain matrix, so nothing here can receive gradients.
inline Matrix target_forward(ModelState& state, const ContextSubgraph& sub,
                             const std::vector<const std::vector<int>*>& unmasked_ids,
                             const Matrix* edge_feats = nullptr) {
  Tape t;
  auto lm_out = lm_forward_tape(t, state.lm_cfg, state.lm, unmasked_ids, false, nullptr);
  Tape::V out = gat_forward_tape(t, state.gnn_cfg, state.gnn_target, sub, lm_out.cls, edge_feats, false, nullptr);
  return t.val(out);
}

// xi' <- tau * xi' + (1 - tau) * xi, elementwise. The LM needs no update: the
// target LM shares delta with the online LM.
inline void ema_update(ModelState& state, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("ema decay must be in [0,1]");
  NamedParams online, target;
  state.gnn.named(online, "gnn");
  state.gnn_target.named(target, "gnn_target");
  for (std::size_t i = 0; i < online.size(); ++i) {
    double* tv = target[i].second->value.data();
    const double* ov = online[i].second->value.data();
    for (std::size_t k = 0; k < target[i].second->value.size(); ++k)
      tv[k] = tau * tv[k] + (1.0 - tau) * ov[k];
  }
}

// ---- batch assembly ----------------------------------------------------------

struct BatchGraph {
  ContextSubgraph sub;
  Matrix edge_feats;  // empty when the graph has no edge texts
  bool has_edge_feats = false;
};

// Union of the anchors' PPR contexts with induced edges, node-deduplicated.
inline BatchGraph build_batch_graph(const TextAttributedGraph& g, const std::vector<NodeId>& anchors,
                                    const PprParams& ppr, const Matrix* edge_table) {
  if (anchors.empty()) throw std::invalid_argument("empty anchor batch");
  std::set<NodeId> uni;
  for (NodeId a : anchors) {
    auto scores = approximate_ppr(g, a, ppr);
    for (NodeId v : top_k_context(scores, a, ppr.topk)) uni.insert(v);
  }
  BatchGraph batch;
  batch.sub = induced_subgraph(g, std::vector<NodeId>(uni.begin(), uni.end()), anchors[0]);
  if (edge_table) {
    batch.edge_feats = slice_edge_features(*edge_table, batch.sub);
    batch.has_edge_feats = true;
  }
  return batch;
}

// ---- training step -----------------------------------------------------------

struct ForwardLosses {
  Tape::V total, loss_mask, loss_latent;
  long long masked_count = 0;
  int zero_row_warnings = 0;
};

// Online forward pass: masked LM -> GAT -> decoder/MLM loss, plus projector ->
// latent loss against the precomputed (constant) target matrix.
inline ForwardLosses fused_loss_tape(Tape& t, ModelState& state, const ContextSubgraph& sub,
                                     const std::vector<MaskedSequence>& masked,
                                     const std::vector<const TokenSequence*>& originals,
                                     const Matrix& target_cls, double lambda,
                                     const std::string& latent_source, const Matrix* edge_feats,
                                     bool training, Rng* rng) {
  const int batch = static_cast<int>(masked.size());
  std::vector<const std::vector<int>*> masked_ids(batch);
  for (int i = 0; i < batch; ++i) masked_ids[i] = &masked[i].ids;

  auto lm_out = lm_forward_tape(t, state.lm_cfg, state.lm, masked_ids, training, rng);
  Tape::V gnn_cls = gat_forward_tape(t, state.gnn_cfg, state.gnn, sub, lm_out.cls, edge_feats, training, rng);

  const int len = lm_out.padded_len;
  std::vector<int> targets(static_cast<std::size_t>(batch) * len, 0);
  std::vector<char> flags(static_cast<std::size_t>(batch) * len, 0);
  long long count = 0;
  for (int b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < masked[b].ids.size(); ++i) {
      if (!masked[b].mask_flags[i]) continue;
      targets[static_cast<std::size_t>(b) * len + i] = originals[b]->ids[i];
      flags[static_cast<std::size_t>(b) * len + i] = 1;
      ++count;
    }
  }

  ForwardLosses out;
  out.masked_count = count;
  if (count > 0) {
    Tape::V logits = decode_logits_tape(t, state, lm_out.hidden, gnn_cls, len);
    Tape::V ce = t.masked_ce_sum(logits, std::move(targets), std::move(flags));
    out.loss_mask = t.scale(ce, 1.0 / static_cast<double>(count));
  } else {
    out.loss_mask = t.leaf(Matrix(1, 1));  // gradient-free step for this term
  }

  Tape::V src_cls = latent_source == "gnn_cls" ? gnn_cls : lm_out.cls;
  Tape::V zbar = t.add_rowvec(t.matmul(src_cls, t.param(state.proj_w)), t.param(state.proj_b));
  out.loss_latent = t.latent_cosine_loss(zbar, target_cls, &out.zero_row_warnings);
  out.total = t.add(out.loss_mask, t.scale(out.loss_latent, lambda));
  return out;
}

inline StepReport train_step(ModelState& state, AdamW& opt, const TextAttributedGraph& g,
                             const std::vector<TokenSequence>& tokens, const std::vector<NodeId>& anchor_batch,
                             const PretrainConfig& cfg, const Matrix* edge_table, Rng& rng) {
  cfg.validate();
  BatchGraph batch = build_batch_graph(g, anchor_batch, cfg.ppr, edge_table);
  const ContextSubgraph& sub = batch.sub;
  const Matrix* ef = batch.has_edge_feats ? &batch.edge_feats : nullptr;
  const int n = static_cast<int>(sub.num_nodes());

  std::vector<const TokenSequence*> originals(n);
  std::vector<const std::vector<int>*> unmasked_ids(n);
  std::vector<MaskedSequence> masked(n);
  for (int i = 0; i < n; ++i) {
    originals[i] = &tokens[sub.local_to_global[i]];
    unmasked_ids[i] = &originals[i]->ids;
    masked[i] = mask_tokens(*originals[i], cfg.mask_rate, rng);
  }

  Matrix target_cls = target_forward(state, sub, unmasked_ids, ef);

  Tape t;
  ForwardLosses losses =
      fused_loss_tape(t, state, sub, masked, originals, target_cls, cfg.lambda, cfg.latent_source, ef,
                      /*training=*/true, &rng);

  state.zero_grads();
  t.backward(losses.total);

  StepReport report;
  report.step = opt.step_count() + 1;
  report.loss_mask = t.val(losses.loss_mask)(0, 0);
  report.loss_latent = t.val(losses.loss_latent)(0, 0);
  report.loss_total = t.val(losses.total)(0, 0);
  report.masked_token_count = losses.masked_count;
  report.grad_norm = state.grad_norm();

  opt.step();
  ema_update(state, cfg.ema_decay);
  return report;
}

// ---- full pre-training loop ----------------------------------------------------

struct PretrainResult {
  ModelState state;
  std::vector<StepReport> log;
};

namespace detail {

inline nlohmann::json trainer_manifest(const PretrainConfig& cfg, const nlohmann::json& config_echo,
                                       long long step, int epoch, long long batch_index,
                                       const std::string& rng_state) {
  nlohmann::json m;
  m["config"] = config_echo;
  m["seed"] = cfg.seed;
  m["step"] = step;
  m["epoch"] = epoch;
  m["batch_index"] = batch_index;
  m["rng_state"] = rng_state;
  m["optimizer"] = {{"name", "adamw"}, {"beta1", 0.9}, {"beta2", 0.999}, {"eps", 1e-8},
                    {"lr", cfg.lr},    {"weight_decay", cfg.weight_decay}};
  return m;
}

inline std::vector<NodeId> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<NodeId> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<NodeId>(i);
  Rng rng(mix_seed(seed, 1000 + static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order);
  return order;
}

}  // namespace detail

// Iterates shuffled anchor batches covering the node set. Checkpoints carry
// parameters, optimizer moments, the step RNG state, and the loop position,
// so a resumed run continues with step reports identical to an uninterrupted
// one.
inline PretrainResult pretrain(const TextAttributedGraph& g, LmConfig lm_cfg, GatConfig gat_cfg,
                               const PretrainConfig& cfg, nlohmann::json config_echo = {},
                               const std::string& resume_path = "") {
  cfg.validate();

  ModelState state = [&] {
    if (!resume_path.empty()) return load_model_state(resume_path);
    Vocab vocab = build_vocab(g.node_texts(), lm_cfg.vocab_size);
    return ModelState::init(lm_cfg, gat_cfg, std::move(vocab), cfg.seed);
  }();

  AdamW opt(state.trainable_params(), cfg.lr, cfg.weight_decay);
  Rng step_rng(mix_seed(cfg.seed, 1));
  long long step = 0;
  int epoch = 0;
  long long batch_index = 0;

  Matrix edge_table;
  bool has_edge_table = g.has_edge_texts();

  if (!resume_path.empty()) {
    CheckpointData ckpt = load_checkpoint(resume_path);
    step = ckpt.manifest.at("step").get<long long>();
    epoch = ckpt.manifest.at("epoch").get<int>();
    batch_index = ckpt.manifest.at("batch_index").get<long long>();
    step_rng.set_state(ckpt.manifest.at("rng_state").get<std::string>());
    opt.restore(ckpt.tensors, step);
    if (has_edge_table) edge_table = ckpt.tensors.at("edge_features");
  } else if (has_edge_table) {
    edge_table = encode_edge_features(state.lm_cfg, state.lm, state.vocab, g);
  }

  std::vector<TokenSequence> tokens;
  tokens.reserve(g.num_nodes());
  for (const auto& text : g.node_texts()) tokens.push_back(tokenize(state.vocab, text, state.lm_cfg.max_len));

  auto save = [&](const std::string& path) {
    std::vector<std::pair<std::string, const Matrix*>> extra = opt.moment_tensors();
    if (has_edge_table) extra.emplace_back("edge_features", &edge_table);
    save_model_state(path, state,
                     detail::trainer_manifest(cfg, config_echo, step, epoch, batch_index, step_rng.state()),
                     extra);
  };

  std::vector<StepReport> log;
  auto done = [&]() {
    if (cfg.max_steps > 0) return step >= cfg.max_steps;
    return epoch >= cfg.num_epochs;
  };

  const long long batches_per_epoch =
      static_cast<long long>((g.num_nodes() + cfg.batch_anchors - 1) / cfg.batch_anchors);
  while (!done()) {
    std::vector<NodeId> order = detail::epoch_order(g.num_nodes(), cfg.seed, epoch);
    for (; batch_index < batches_per_epoch && !done(); ++batch_index) {
      const std::size_t lo = static_cast<std::size_t>(batch_index) * cfg.batch_anchors;
      const std::size_t hi = std::min(order.size(), lo + cfg.batch_anchors);
      std::vector<NodeId> anchors(order.begin() + lo, order.begin() + hi);
      StepReport report =
          train_step(state, opt, g, tokens, anchors, cfg, has_edge_table ? &edge_table : nullptr, step_rng);
      ++step;
      report.step = step;
      log.push_back(report);
      if (cfg.checkpoint_interval > 0 && !cfg.checkpoint_path.empty() && step % cfg.checkpoint_interval == 0) {
        ++batch_index;  // the saved position points at the next batch
        save(cfg.checkpoint_path);
        --batch_index;
      }
    }
    if (batch_index >= batches_per_epoch) {
      batch_index = 0;
      ++epoch;
    }
  }

  if (!cfg.checkpoint_path.empty()) save(cfg.checkpoint_path);
  return {std::move(state), std::move(log)};
}

// ---- finite-difference gradient check ------------------------------------------

struct GradCheckGroup {
  std::string name;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<GradCheckGroup> groups;
  double target_grad_norm = 0.0;     // analytic gradient on xi' (must be exactly 0)
  double projector_grad_norm = 0.0;  // analytic gradient on the projector
};

// Compares analytic gradients of the fused loss against central finite
// differences, parameter by parameter. The latent target is computed once
// from the unperturbed state and held fixed, matching the stop-gradient
// semantics of the training objective. Dropout and masking randomness are
// frozen (evaluation-mode forward on a fixed masked batch).
inline GradCheckReport gradient_check(ModelState& state, const ContextSubgraph& sub,
                                      const std::vector<MaskedSequence>& masked,
                                      const std::vector<const TokenSequence*>& originals, double lambda,
                                      const std::string& latent_source = "lm_cls", double fd_step = 1e-5,
                                      const Matrix* edge_feats = nullptr) {
  std::vector<const std::vector<int>*> unmasked_ids(originals.size());
  for (std::size_t i = 0; i < originals.size(); ++i) unmasked_ids[i] = &originals[i]->ids;
  const Matrix target_cls = target_forward(state, sub, unmasked_ids, edge_feats);

  auto loss_value = [&]() {
    Tape t;
    ForwardLosses l = fused_loss_tape(t, state, sub, masked, originals, target_cls, lambda, latent_source,
                                      edge_feats, /*training=*/false, nullptr);
    return t.val(l.total)(0, 0);
  };

  state.zero_grads();
  {
    Tape t;
    ForwardLosses l = fused_loss_tape(t, state, sub, masked, originals, target_cls, lambda, latent_source,
                                      edge_feats, /*training=*/false, nullptr);
    t.backward(l.total);
  }

  GradCheckReport report;
  for (auto& [name, p] : state.target_params()) report.target_grad_norm += frobenius_norm_sq(p->grad);
  report.target_grad_norm = std::sqrt(report.target_grad_norm);
  report.projector_grad_norm =
      std::sqrt(frobenius_norm_sq(state.proj_w.grad) + frobenius_norm_sq(state.proj_b.grad));

  for (auto& [name, p] : state.trainable_params()) {
    GradCheckGroup group;
    group.name = name;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value.data()[i];
      p->value.data()[i] = saved + fd_step;
      const double up = loss_value();
      p->value.data()[i] = saved - fd_step;
      const double down = loss_value();
      p->value.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * fd_step);
      const double analytic = p->grad.data()[i];
      const double denom = std::max({1e-6, std::fabs(analytic), std::fabs(numeric)});
      group.max_rel_error = std::max(group.max_rel_error, std::fabs(analytic - numeric) / denom);
    }
    report.max_rel_error = std::max(report.max_rel_error, group.max_rel_error);
    report.groups.push_back(std::move(group));
  }
  return report;
}

}  // namespace unigraph
