// unigraph: text-attributed-graph pre-training, embedding, and evaluation CLI.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "unigraph/config.hpp"
#include "unigraph/embed.hpp"
#include "unigraph/eval.hpp"
#include "unigraph/graph.hpp"
#include "unigraph/instruct.hpp"
#include "unigraph/model.hpp"
#include "unigraph/ppr.hpp"
#include "unigraph/pretrain.hpp"

namespace {

using namespace unigraph;

struct CommonOpts {
  std::string config_file;
  std::map<std::string, std::string> overrides;
};

void add_config_options(CLI::App* cmd, CommonOpts& opts, bool probe_flavored = false) {
  cmd->add_option("--config", opts.config_file, "JSON config file");
  auto bind = [cmd, &opts](const std::string& flag, const std::string& key, const std::string& help) {
    cmd->add_option_function<std::string>(
        flag, [&opts, key](const std::string& v) { opts.overrides[key] = v; }, help);
  };
  bind("--profile", "profile", "config profile: desk or paper");
  bind("--seed", "seed", "random seed");
  bind("--mask-rate", "mask_rate", "token masking probability");
  // on the probe subcommand, --lr and --epochs refer to the probe itself
  bind("--lr", probe_flavored ? "probe_lr" : "lr", "learning rate");
  if (probe_flavored) bind("--epochs", "probe_epochs", "probe training epochs");
  bind("--weight-decay", "weight_decay", "decoupled weight decay");
  bind("--dropout", "dropout", "LM dropout");
  bind("--lambda", "lambda", "latent loss mixing coefficient");
  bind("--ema-decay", "ema_decay", "target network EMA decay");
  bind("--alpha", "ppr_alpha", "PPR teleport probability");
  bind("--epsilon", "ppr_epsilon", "PPR residual threshold");
  bind("--topk", "ppr_topk", "PPR context size");
  bind("--steps", "max_steps", "stop after this many steps (0: epoch-driven)");
  if (!probe_flavored) bind("--epochs", "num_epochs", "number of epochs");
  bind("--batch-anchors", "batch_anchors", "anchors per training step");
  bind("--hidden-size", "hidden_size", "model width");
  bind("--vocab-size", "vocab_size", "vocabulary budget");
  bind("--max-len", "max_len", "maximum token sequence length");
  bind("--latent-source", "latent_source", "latent loss input: lm_cls or gnn_cls");
  bind("--checkpoint-interval", "checkpoint_interval", "steps between checkpoints");
  bind("--ways", "fewshot_ways", "few-shot ways (N)");
  bind("--shots", "fewshot_shots", "few-shot shots (K)");
  bind("--tasks", "fewshot_tasks", "number of few-shot tasks");
  bind("--query-cap", "fewshot_query_cap", "max queries per task");
  bind("--probe-lr", "probe_lr", "linear probe learning rate");
  bind("--probe-epochs", "probe_epochs", "linear probe epochs");
  bind("--deterministic", "deterministic", "force the deterministic execution path");
  cmd->add_option_function<std::vector<std::string>>(
      "--set",
      [&opts](const std::vector<std::string>& kvs) {
        for (const auto& kv : kvs) {
          const auto eq = kv.find('=');
          if (eq == std::string::npos) throw CLI::ValidationError("--set expects key=value");
          opts.overrides[kv.substr(0, eq)] = kv.substr(eq + 1);
        }
      },
      "set any config key, e.g. --set num_gnn_layers=2");
}

RunConfig resolve(const CommonOpts& opts) { return parse_config(opts.config_file, opts.overrides); }

EmbDataset dataset_from_files(const std::string& embeddings_path, const TextAttributedGraph& g) {
  TsvEmbeddings tsv = read_embeddings_tsv(embeddings_path);
  std::map<long long, NodeId> by_orig;
  for (std::size_t v = 0; v < g.num_nodes(); ++v) by_orig[g.original_id(static_cast<NodeId>(v))] = static_cast<NodeId>(v);

  std::vector<std::string> labels(tsv.ids.size());
  std::map<NodeId, int> row_of_node;
  for (std::size_t i = 0; i < tsv.ids.size(); ++i) {
    auto it = by_orig.find(tsv.ids[i]);
    if (it == by_orig.end()) throw std::runtime_error("embedding row for unknown node id " + std::to_string(tsv.ids[i]));
    labels[i] = g.label(it->second);
    row_of_node[it->second] = static_cast<int>(i);
  }
  if (!g.has_splits()) throw std::runtime_error("graph has no splits; provide a splits file");
  auto rows_of = [&](const std::vector<NodeId>& part) {
    std::vector<int> rows;
    for (NodeId v : part) {
      auto it = row_of_node.find(v);
      if (it != row_of_node.end()) rows.push_back(it->second);
    }
    return rows;
  };
  return make_emb_dataset(tsv.rows, labels, rows_of(g.splits().train), rows_of(g.splits().valid),
                          rows_of(g.splits().test));
}

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << j.dump(2) << "\n";
}

int cmd_gen_synth(const CommonOpts& opts, const std::string& out_dir, int classes, int per_class,
                  double intra, double inter) {
  RunConfig cfg = resolve(opts);
  std::filesystem::create_directories(out_dir);
  TextAttributedGraph g =
      generate_synthetic_tag(classes, per_class, intra, inter, default_synthetic_vocab(), cfg.seed);
  const std::string nodes = out_dir + "/nodes.jsonl";
  save_tag(g, nodes, out_dir + "/edges.jsonl", out_dir + "/splits.json");
  write_manifest(nodes, cfg,
                 {{"artifact", "synthetic_tag"},
                  {"classes", classes},
                  {"nodes_per_class", per_class},
                  {"intra_p", intra},
                  {"inter_p", inter}});
  std::cout << "wrote " << g.num_nodes() << " nodes, " << g.num_entries() / 2 << " edges to " << out_dir
            << std::endl;
  return 0;
}

int cmd_pretrain(const CommonOpts& opts, const std::string& nodes, const std::string& edges,
                 const std::string& splits, const std::string& out_checkpoint, const std::string& log_path,
                 const std::string& resume) {
  RunConfig cfg = resolve(opts);
  TextAttributedGraph g = load_tag(nodes, edges, splits);
  PretrainConfig pt = cfg.pretrain_config();
  pt.checkpoint_path = out_checkpoint;
  PretrainResult result = pretrain(g, cfg.lm_config(), cfg.gat_config(), pt, cfg.echo(), resume);
  if (!log_path.empty()) {
    std::ofstream f(log_path);
    if (!f) throw std::runtime_error("cannot write log: " + log_path);
    for (const auto& r : result.log) f << r.to_json().dump() << "\n";
    write_manifest(log_path, cfg, {{"artifact", "step_log"}});
  }
  write_manifest(out_checkpoint, cfg, {{"artifact", "checkpoint"}, {"steps", static_cast<long long>(result.log.size())}});
  if (!result.log.empty())
    std::cout << "pretrained " << result.log.size() << " steps, final loss " << result.log.back().loss_total
              << std::endl;
  else
    std::cout << "pretrained 0 steps" << std::endl;
  return 0;
}

int cmd_embed(const CommonOpts& opts, const std::string& checkpoint, const std::string& nodes,
              const std::string& edges, const std::string& splits, const std::string& out_tsv,
              const std::string& lm_cls_out) {
  RunConfig cfg = resolve(opts);
  TextAttributedGraph g = load_tag(nodes, edges, splits);
  ModelState state = load_model_state(checkpoint);

  Matrix edge_table;
  const Matrix* ef = nullptr;
  if (g.has_edge_texts()) {
    edge_table = encode_edge_features(state.lm_cfg, state.lm, state.vocab, g);
    ef = &edge_table;
  }
  ContextSubgraph whole = whole_graph_subgraph(g);
  Matrix lm_cls;
  EmbeddingMatrix emb = embed_nodes(state, whole, g, ef, lm_cls_out.empty() ? nullptr : &lm_cls);
  write_embeddings_tsv(out_tsv, emb, &g);
  write_manifest(out_tsv, cfg, {{"artifact", "embeddings"}, {"dim", state.lm_cfg.d}});
  if (!lm_cls_out.empty()) {
    EmbeddingMatrix pre;
    pre.rows = lm_cls;
    pre.node_ids = emb.node_ids;
    write_embeddings_tsv(lm_cls_out, pre, &g);
    write_manifest(lm_cls_out, cfg, {{"artifact", "lm_cls_embeddings"}, {"dim", state.lm_cfg.d}});
  }
  std::cout << "wrote " << emb.rows.rows() << " embeddings of dim " << emb.rows.cols() << " to " << out_tsv
            << std::endl;
  return 0;
}

int cmd_sample_ppr(const CommonOpts& opts, const std::string& nodes, const std::string& edges,
                   long long anchor) {
  RunConfig cfg = resolve(opts);
  TextAttributedGraph g = load_tag(nodes, edges);
  NodeId anchor_id = g.num_nodes();
  for (std::size_t v = 0; v < g.num_nodes(); ++v)
    if (g.original_id(static_cast<NodeId>(v)) == anchor) anchor_id = static_cast<NodeId>(v);
  if (anchor_id >= g.num_nodes()) throw std::runtime_error("anchor id not in graph: " + std::to_string(anchor));

  PprParams params = cfg.ppr_params();
  PprScores scores = approximate_ppr(g, anchor_id, params);
  std::vector<NodeId> context = top_k_context(scores, anchor_id, params.topk);
  std::vector<std::pair<double, NodeId>> ranked;
  for (NodeId v : context) ranked.emplace_back(-scores.score(v), v);
  std::sort(ranked.begin(), ranked.end());

  nlohmann::json out;
  out["anchor"] = anchor;
  std::vector<long long> ids;
  std::vector<double> vals;
  for (const auto& [neg, v] : ranked) {
    ids.push_back(g.original_id(v));
    vals.push_back(-neg);
  }
  out["nodes"] = ids;
  out["scores"] = vals;
  std::cout << out.dump() << std::endl;
  return 0;
}

int cmd_fewshot(const CommonOpts& opts, const std::string& embeddings, const std::string& nodes,
                const std::string& edges, const std::string& splits, const std::string& out_path) {
  RunConfig cfg = resolve(opts);
  TextAttributedGraph g = load_tag(nodes, edges, splits);
  EmbDataset ds = dataset_from_files(embeddings, g);
  auto tasks = sample_fewshot_tasks(ds, cfg.fewshot_ways, cfg.fewshot_shots, cfg.fewshot_tasks, cfg.seed,
                                    cfg.fewshot_query_cap);
  FewShotReport report = fewshot_report(tasks);
  nlohmann::json j = report.to_json();
  if (out_path.empty()) {
    std::cout << j.dump() << std::endl;
  } else {
    write_json(out_path, j);
    write_manifest(out_path, cfg, {{"artifact", "fewshot_report"}});
    std::cout << "fewshot mean " << report.mean << " +/- " << report.stddev << std::endl;
  }
  return 0;
}

int cmd_probe(const CommonOpts& opts, const std::string& embeddings, const std::string& nodes,
              const std::string& edges, const std::string& splits, const std::string& out_path) {
  RunConfig cfg = resolve(opts);
  TextAttributedGraph g = load_tag(nodes, edges, splits);
  EmbDataset ds = dataset_from_files(embeddings, g);
  ProbeResult result = linear_probe(ds, cfg.probe_config());
  nlohmann::json j{{"test_accuracy", result.test_accuracy},
                   {"valid_accuracy", result.valid_accuracy},
                   {"final_train_loss", result.final_train_loss},
                   {"classes", result.classes}};
  if (out_path.empty()) {
    std::cout << j.dump() << std::endl;
  } else {
    write_json(out_path, j);
    write_manifest(out_path, cfg, {{"artifact", "probe_report"}});
    std::cout << "probe test accuracy " << result.test_accuracy << std::endl;
  }
  return 0;
}

int cmd_emit_instructions(const CommonOpts& opts, const std::string& nodes, const std::string& edges,
                          const std::string& splits, const std::string& embeddings,
                          const std::string& domain, const std::string& split_name,
                          const std::string& out_path, bool inline_embeddings) {
  RunConfig cfg = resolve(opts);
  TextAttributedGraph g = load_tag(nodes, edges, splits);
  TsvEmbeddings tsv = read_embeddings_tsv(embeddings);

  EmbeddingMatrix emb;
  emb.rows = tsv.rows;
  std::map<long long, NodeId> by_orig;
  for (std::size_t v = 0; v < g.num_nodes(); ++v) by_orig[g.original_id(static_cast<NodeId>(v))] = static_cast<NodeId>(v);
  for (long long id : tsv.ids) {
    auto it = by_orig.find(id);
    if (it == by_orig.end()) throw std::runtime_error("embedding row for unknown node id " + std::to_string(id));
    emb.node_ids.push_back(it->second);
  }

  std::vector<NodeId> anchor_split;
  if (!g.has_splits()) throw std::runtime_error("graph has no splits");
  if (split_name == "train")
    anchor_split = g.splits().train;
  else if (split_name == "valid")
    anchor_split = g.splits().valid;
  else if (split_name == "test")
    anchor_split = g.splits().test;
  else
    throw std::runtime_error("unknown split: " + split_name);

  PromptTemplate tmpl = prompt_template(prompt_domain_from_string(domain));
  std::size_t count =
      emit_instruction_dataset(g, emb, anchor_split, tmpl, out_path, inline_embeddings, cfg.neighbor_cap);
  write_manifest(out_path, cfg, {{"artifact", "instruction_dataset"}, {"records", count}, {"domain", domain}});
  std::cout << "wrote " << count << " instruction records to " << out_path << std::endl;
  return 0;
}

int cmd_gradcheck(const CommonOpts& opts) {
  RunConfig cfg = resolve(opts);

  // micro fixture: 4-node path graph, tiny double-precision model
  std::vector<std::string> texts = {"alpha beta gamma", "beta delta", "gamma alpha", "delta beta alpha"};
  detail::EdgeAccum acc;
  acc.add(0, 1, "");
  acc.add(1, 2, "");
  acc.add(2, 3, "");
  acc.add(0, 3, "");
  std::vector<std::string> labels(4, "");
  std::vector<long long> ids = {0, 1, 2, 3};
  TextAttributedGraph g = detail::build_from_edges(texts, labels, acc, std::nullopt, ids);

  Vocab vocab = build_vocab(g.node_texts(), 16);
  LmConfig lm_cfg;
  lm_cfg.vocab_size = vocab.size();
  lm_cfg.d = 8;
  lm_cfg.num_layers = 1;
  lm_cfg.num_heads = 2;
  lm_cfg.max_len = 8;
  lm_cfg.dropout = 0.0;
  GatConfig gat_cfg;
  gat_cfg.num_layers = 2;
  gat_cfg.d = 8;
  gat_cfg.num_heads = 2;
  gat_cfg.attention_dropout = 0.0;
  ModelState state = ModelState::init(lm_cfg, gat_cfg, vocab, cfg.seed + 17);

  std::vector<NodeId> all_nodes = {0, 1, 2, 3};
  ContextSubgraph sub = induced_subgraph(g, all_nodes, 0);
  std::vector<TokenSequence> tokens;
  for (const auto& t : g.node_texts()) tokens.push_back(tokenize(vocab, t, lm_cfg.max_len));
  Rng rng(cfg.seed + 99);
  std::vector<MaskedSequence> masked;
  std::vector<const TokenSequence*> originals;
  for (auto& t : tokens) {
    masked.push_back(mask_tokens(t, 0.5, rng));
    originals.push_back(&t);
  }

  GradCheckReport report = gradient_check(state, sub, masked, originals, cfg.lambda, cfg.latent_source);
  std::cout << "max relative error: " << report.max_rel_error << "\n";
  std::cout << "target-network gradient norm: " << report.target_grad_norm << "\n";
  for (const auto& gr : report.groups)
    if (gr.max_rel_error > 1e-4) std::cout << "  group over tolerance: " << gr.name << " " << gr.max_rel_error << "\n";
  const bool ok = report.max_rel_error <= 1e-4 && report.target_grad_norm == 0.0;
  std::cout << (ok ? "gradcheck PASS" : "gradcheck FAIL") << std::endl;
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unigraph: self-supervised pre-training on text-attributed graphs"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  CommonOpts opts;

  auto* gen = app.add_subcommand("gen-synth", "generate a synthetic labeled TAG");
  std::string out_dir = "synth";
  int classes = 3, per_class = 50;
  double intra = 0.1, inter = 0.01;
  gen->add_option("--out", out_dir, "output directory");
  gen->add_option("--classes", classes, "number of classes");
  gen->add_option("--per-class", per_class, "nodes per class");
  gen->add_option("--intra", intra, "intra-class edge probability");
  gen->add_option("--inter", inter, "inter-class edge probability");
  add_config_options(gen, opts);

  auto* pre = app.add_subcommand("pretrain", "run self-supervised pre-training");
  std::string nodes, edges, splits, out_checkpoint = "model.ckpt", log_path, resume;
  pre->add_option("--nodes", nodes, "nodes JSONL")->required();
  pre->add_option("--edges", edges, "edges JSONL")->required();
  pre->add_option("--splits", splits, "splits JSON");
  pre->add_option("--out-checkpoint", out_checkpoint, "checkpoint path");
  pre->add_option("--log", log_path, "step report JSONL path");
  pre->add_option("--resume", resume, "resume from checkpoint");
  add_config_options(pre, opts);

  auto* emb = app.add_subcommand("embed", "export node embeddings from a checkpoint");
  std::string checkpoint, out_tsv = "embeddings.tsv", lm_cls_out;
  emb->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  emb->add_option("--nodes", nodes, "nodes JSONL")->required();
  emb->add_option("--edges", edges, "edges JSONL")->required();
  emb->add_option("--splits", splits, "splits JSON");
  emb->add_option("--out", out_tsv, "output TSV");
  emb->add_option("--lm-cls-out", lm_cls_out, "also export pre-GNN LM [CLS] rows (diagnostics)");
  add_config_options(emb, opts);

  auto* ppr = app.add_subcommand("sample-ppr", "print a PPR contextual subgraph as JSON");
  long long anchor = 0;
  ppr->add_option("--nodes", nodes, "nodes JSONL")->required();
  ppr->add_option("--edges", edges, "edges JSONL")->required();
  ppr->add_option("--anchor", anchor, "anchor node id")->required();
  add_config_options(ppr, opts);

  auto* few = app.add_subcommand("fewshot", "N-way K-shot prototype evaluation");
  std::string embeddings, out_path;
  few->add_option("--embeddings", embeddings, "embeddings TSV")->required();
  few->add_option("--nodes", nodes, "nodes JSONL")->required();
  few->add_option("--edges", edges, "edges JSONL")->required();
  few->add_option("--splits", splits, "splits JSON")->required();
  few->add_option("--out", out_path, "report JSON path");
  add_config_options(few, opts);

  auto* probe = app.add_subcommand("probe", "linear probe on frozen embeddings");
  probe->add_option("--embeddings", embeddings, "embeddings TSV")->required();
  probe->add_option("--nodes", nodes, "nodes JSONL")->required();
  probe->add_option("--edges", edges, "edges JSONL")->required();
  probe->add_option("--splits", splits, "splits JSON")->required();
  probe->add_option("--out", out_path, "report JSON path");
  add_config_options(probe, opts, /*probe_flavored=*/true);

  auto* emit = app.add_subcommand("emit-instructions", "render an instruction-tuning dataset");
  std::string domain = "citation", split_name = "train";
  bool inline_embeddings = false;
  emit->add_option("--nodes", nodes, "nodes JSONL")->required();
  emit->add_option("--edges", edges, "edges JSONL")->required();
  emit->add_option("--splits", splits, "splits JSON")->required();
  emit->add_option("--embeddings", embeddings, "embeddings TSV")->required();
  emit->add_option("--template", domain, "citation, products, web, or knowledge");
  emit->add_option("--split", split_name, "train, valid, or test");
  emit->add_option("--out", out_path, "output JSONL")->required();
  emit->add_flag("--inline", inline_embeddings, "inline embedding vectors into records");
  add_config_options(emit, opts);

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient check on a micro model");
  add_config_options(grad, opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_synth(opts, out_dir, classes, per_class, intra, inter);
    if (pre->parsed()) return cmd_pretrain(opts, nodes, edges, splits, out_checkpoint, log_path, resume);
    if (emb->parsed()) return cmd_embed(opts, checkpoint, nodes, edges, splits, out_tsv, lm_cls_out);
    if (ppr->parsed()) return cmd_sample_ppr(opts, nodes, edges, anchor);
    if (few->parsed()) return cmd_fewshot(opts, embeddings, nodes, edges, splits, out_path);
    if (probe->parsed()) return cmd_probe(opts, embeddings, nodes, edges, splits, out_path);
    if (emit->parsed())
      return cmd_emit_instructions(opts, nodes, edges, splits, embeddings, domain, split_name, out_path,
                                   inline_embeddings);
    if (grad->parsed()) return cmd_gradcheck(opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 2;
}
