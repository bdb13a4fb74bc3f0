#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "unigraph/rng.hpp"

namespace unigraph {

using NodeId = std::uint32_t;

struct Splits {
  std::vector<NodeId> train, valid, test;
};

// Immutable text-attributed graph stored as a symmetrized CSR. Node ids from
// input files are remapped to dense 0..n-1 (ascending original id); the
// mapping is kept so outputs can refer back to the original ids.
class TextAttributedGraph {
public:
  TextAttributedGraph() = default;

  TextAttributedGraph(std::vector<std::size_t> offsets, std::vector<NodeId> targets,
                      std::vector<std::string> node_texts, std::vector<std::string> edge_texts,
                      std::vector<std::string> labels, std::optional<Splits> splits,
                      std::vector<long long> original_ids)
      : offsets_(std::move(offsets)),
        targets_(std::move(targets)),
        node_texts_(std::move(node_texts)),
        edge_texts_(std::move(edge_texts)),
        labels_(std::move(labels)),
        splits_(std::move(splits)),
        original_ids_(std::move(original_ids)) {
    validate();
  }

  std::size_t num_nodes() const { return node_texts_.size(); }
  std::size_t num_entries() const { return targets_.size(); }

  std::span<const NodeId> neighbors(NodeId v) const {
    if (v >= num_nodes()) throw std::out_of_range("node id out of range: " + std::to_string(v));
    return {targets_.data() + offsets_[v], targets_.data() + offsets_[v + 1]};
  }

  std::size_t degree(NodeId v) const { return offsets_[v + 1] - offsets_[v]; }

  const std::vector<std::size_t>& csr_offsets() const { return offsets_; }
  const std::vector<NodeId>& csr_targets() const { return targets_; }
  const std::vector<std::string>& node_texts() const { return node_texts_; }
  const std::string& node_text(NodeId v) const { return node_texts_[v]; }

  bool has_edge_texts() const { return !edge_texts_.empty(); }
  const std::vector<std::string>& edge_texts() const { return edge_texts_; }

  bool has_labels() const {
    for (const auto& l : labels_)
      if (!l.empty()) return true;
    return false;
  }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::string& label(NodeId v) const { return labels_[v]; }

  bool has_splits() const { return splits_.has_value(); }
  const Splits& splits() const { return *splits_; }

  const std::vector<long long>& original_ids() const { return original_ids_; }
  long long original_id(NodeId v) const { return original_ids_[v]; }

  void validate() const {
    const std::size_t n = num_nodes();
    if (offsets_.size() != n + 1) throw std::runtime_error("csr_offsets length mismatch");
    if (offsets_[0] != 0 || offsets_[n] != targets_.size()) throw std::runtime_error("csr_offsets bounds mismatch");
    for (std::size_t v = 0; v < n; ++v)
      if (offsets_[v] > offsets_[v + 1]) throw std::runtime_error("csr_offsets not nondecreasing");
    for (NodeId t : targets_)
      if (t >= n) throw std::runtime_error("csr target out of range");
    if (!edge_texts_.empty() && edge_texts_.size() != targets_.size())
      throw std::runtime_error("edge_texts length mismatch");
    if (labels_.size() != n) throw std::runtime_error("labels length mismatch");
    if (original_ids_.size() != n) throw std::runtime_error("original id map length mismatch");
    // symmetry and sortedness
    for (std::size_t v = 0; v < n; ++v) {
      auto nb = std::span<const NodeId>{targets_.data() + offsets_[v], targets_.data() + offsets_[v + 1]};
      if (!std::is_sorted(nb.begin(), nb.end())) throw std::runtime_error("neighbor list not sorted");
      for (NodeId u : nb) {
        auto back = std::span<const NodeId>{targets_.data() + offsets_[u], targets_.data() + offsets_[u + 1]};
        if (!std::binary_search(back.begin(), back.end(), static_cast<NodeId>(v)))
          throw std::runtime_error("adjacency not symmetric");
      }
    }
    if (splits_) {
      std::set<NodeId> seen;
      for (const auto* part : {&splits_->train, &splits_->valid, &splits_->test}) {
        for (NodeId v : *part) {
          if (v >= n) throw std::runtime_error("split node id out of range");
          if (!seen.insert(v).second) throw std::runtime_error("split sets not disjoint");
        }
      }
    }
  }

private:
  std::vector<std::size_t> offsets_{0};
  std::vector<NodeId> targets_;
  std::vector<std::string> node_texts_;
  std::vector<std::string> edge_texts_;  // empty, or aligned with targets_
  std::vector<std::string> labels_;      // "" = unlabeled
  std::optional<Splits> splits_;
  std::vector<long long> original_ids_;
};

// Anchor-centered induced subgraph with a local CSR. parent_entries maps each
// local CSR entry back to the parent's entry index (used for edge features).
struct ContextSubgraph {
  std::vector<NodeId> local_to_global;
  std::size_t anchor_local = 0;
  std::vector<std::size_t> csr_offsets;
  std::vector<NodeId> csr_targets;
  std::vector<std::size_t> parent_entries;

  std::size_t num_nodes() const { return local_to_global.size(); }
};

namespace detail {

struct EdgeAccum {
  // key: undirected (min,max) pair of dense ids
  std::map<std::pair<NodeId, NodeId>, std::string> edges;

  void add(NodeId u, NodeId v, const std::string& text) {
    auto key = std::minmax(u, v);
    auto [it, inserted] = edges.try_emplace({key.first, key.second}, text);
    if (!inserted && it->second.empty() && !text.empty()) it->second = text;
  }
};

inline TextAttributedGraph build_from_edges(std::vector<std::string> node_texts,
                                            std::vector<std::string> labels, const EdgeAccum& acc,
                                            std::optional<Splits> splits,
                                            std::vector<long long> original_ids) {
  const std::size_t n = node_texts.size();
  std::vector<std::vector<std::pair<NodeId, const std::string*>>> adj(n);
  for (const auto& [key, text] : acc.edges) {
    adj[key.first].emplace_back(key.second, &text);
    if (key.first != key.second) adj[key.second].emplace_back(key.first, &text);
  }
  bool any_edge_text = false;
  for (const auto& [key, text] : acc.edges)
    if (!text.empty()) any_edge_text = true;

  std::vector<std::size_t> offsets(n + 1, 0);
  std::vector<NodeId> targets;
  std::vector<std::string> edge_texts;
  for (std::size_t v = 0; v < n; ++v) {
    std::sort(adj[v].begin(), adj[v].end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [u, text] : adj[v]) {
      targets.push_back(u);
      if (any_edge_text) edge_texts.push_back(*text);
    }
    offsets[v + 1] = targets.size();
  }
  return TextAttributedGraph(std::move(offsets), std::move(targets), std::move(node_texts),
                             std::move(edge_texts), std::move(labels), std::move(splits),
                             std::move(original_ids));
}

inline nlohmann::json parse_jsonl_line(const std::string& line, const std::string& file, std::size_t lineno) {
  try {
    return nlohmann::json::parse(line);
  } catch (const std::exception& e) {
    throw std::runtime_error("malformed record in " + file + " (line " + std::to_string(lineno) + "): " + e.what());
  }
}

}  // namespace detail

inline std::span<const NodeId> neighbors(const TextAttributedGraph& g, NodeId v) {
  return g.neighbors(v);
}

// Nodes file: JSONL {"id": int, "text": str, "label": str?}
// Edges file: JSONL {"src": int, "dst": int, "text": str?}
// Splits file: JSON {"train": [...], "valid": [...], "test": [...]}
inline TextAttributedGraph load_tag(const std::string& nodes_path, const std::string& edges_path,
                                    const std::string& splits_path = "") {
  std::ifstream nf(nodes_path);
  if (!nf) throw std::runtime_error("cannot open nodes file: " + nodes_path);

  std::map<long long, std::pair<std::string, std::string>> nodes;  // orig id -> (text, label)
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(nf, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto j = detail::parse_jsonl_line(line, nodes_path, lineno);
    if (!j.contains("id") || !j.contains("text") || !j["id"].is_number_integer() || !j["text"].is_string())
      throw std::runtime_error("malformed record in " + nodes_path + " (line " + std::to_string(lineno) +
                               "): expected {\"id\": int, \"text\": str}");
    long long id = j["id"].get<long long>();
    std::string label = j.contains("label") && !j["label"].is_null() ? j["label"].get<std::string>() : "";
    if (!nodes.emplace(id, std::make_pair(j["text"].get<std::string>(), label)).second)
      throw std::runtime_error("duplicate node id " + std::to_string(id) + " in " + nodes_path +
                               " (line " + std::to_string(lineno) + ")");
  }
  if (nodes.empty()) throw std::runtime_error("nodes file is empty: " + nodes_path);

  std::unordered_map<long long, NodeId> remap;
  std::vector<long long> original_ids;
  std::vector<std::string> texts, labels;
  for (const auto& [id, tl] : nodes) {  // std::map iterates ascending original id
    remap[id] = static_cast<NodeId>(original_ids.size());
    original_ids.push_back(id);
    texts.push_back(tl.first);
    labels.push_back(tl.second);
  }

  auto lookup = [&](long long id, std::size_t at_line) -> NodeId {
    auto it = remap.find(id);
    if (it == remap.end())
      throw std::runtime_error("dangling endpoint " + std::to_string(id) + " in " + edges_path +
                               " (line " + std::to_string(at_line) + ")");
    return it->second;
  };

  std::ifstream ef(edges_path);
  if (!ef) throw std::runtime_error("cannot open edges file: " + edges_path);
  detail::EdgeAccum acc;
  lineno = 0;
  while (std::getline(ef, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto j = detail::parse_jsonl_line(line, edges_path, lineno);
    if (!j.contains("src") || !j.contains("dst") || !j["src"].is_number_integer() || !j["dst"].is_number_integer())
      throw std::runtime_error("malformed record in " + edges_path + " (line " + std::to_string(lineno) +
                               "): expected {\"src\": int, \"dst\": int}");
    std::string text = j.contains("text") && !j["text"].is_null() ? j["text"].get<std::string>() : "";
    acc.add(lookup(j["src"].get<long long>(), lineno), lookup(j["dst"].get<long long>(), lineno), text);
  }

  std::optional<Splits> splits;
  if (!splits_path.empty()) {
    std::ifstream sf(splits_path);
    if (!sf) throw std::runtime_error("cannot open splits file: " + splits_path);
    nlohmann::json j;
    try {
      sf >> j;
    } catch (const std::exception& e) {
      throw std::runtime_error("malformed splits file " + splits_path + ": " + e.what());
    }
    Splits s;
    for (auto [name, out] : {std::pair{"train", &s.train}, {"valid", &s.valid}, {"test", &s.test}}) {
      if (!j.contains(name)) continue;
      for (const auto& v : j[name]) out->push_back(lookup(v.get<long long>(), 0));
    }
    splits = std::move(s);
  }

  return detail::build_from_edges(std::move(texts), std::move(labels), acc, std::move(splits),
                                  std::move(original_ids));
}

// Writes the three input files back out; load_tag on the result reproduces an
// identical structure. Each undirected edge is written once (u <= v).
inline void save_tag(const TextAttributedGraph& g, const std::string& nodes_path,
                     const std::string& edges_path, const std::string& splits_path = "") {
  std::ofstream nf(nodes_path);
  if (!nf) throw std::runtime_error("cannot write nodes file: " + nodes_path);
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    nlohmann::json j;
    j["id"] = g.original_id(static_cast<NodeId>(v));
    j["text"] = g.node_text(static_cast<NodeId>(v));
    if (!g.label(static_cast<NodeId>(v)).empty()) j["label"] = g.label(static_cast<NodeId>(v));
    nf << j.dump() << "\n";
  }

  std::ofstream ef(edges_path);
  if (!ef) throw std::runtime_error("cannot write edges file: " + edges_path);
  const auto& offsets = g.csr_offsets();
  const auto& targets = g.csr_targets();
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    for (std::size_t e = offsets[v]; e < offsets[v + 1]; ++e) {
      if (targets[e] < v) continue;  // emit each undirected edge once
      nlohmann::json j;
      j["src"] = g.original_id(static_cast<NodeId>(v));
      j["dst"] = g.original_id(targets[e]);
      if (g.has_edge_texts() && !g.edge_texts()[e].empty()) j["text"] = g.edge_texts()[e];
      ef << j.dump() << "\n";
    }
  }

  if (!splits_path.empty() && g.has_splits()) {
    nlohmann::json j;
    auto to_orig = [&](const std::vector<NodeId>& ids) {
      std::vector<long long> out;
      for (NodeId v : ids) out.push_back(g.original_id(v));
      return out;
    };
    j["train"] = to_orig(g.splits().train);
    j["valid"] = to_orig(g.splits().valid);
    j["test"] = to_orig(g.splits().test);
    std::ofstream sf(splits_path);
    if (!sf) throw std::runtime_error("cannot write splits file: " + splits_path);
    sf << j.dump() << "\n";
  }
}

// Subgraph induced by node_set: exactly the parent edges with both endpoints
// in the set. Local ids follow ascending global id.
inline ContextSubgraph induced_subgraph(const TextAttributedGraph& g, const std::vector<NodeId>& node_set,
                                        NodeId anchor) {
  std::vector<NodeId> sorted = node_set;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (NodeId v : sorted)
    if (v >= g.num_nodes()) throw std::out_of_range("subgraph node id out of range");

  auto pos = std::lower_bound(sorted.begin(), sorted.end(), anchor);
  if (pos == sorted.end() || *pos != anchor) throw std::invalid_argument("anchor not in node set");

  ContextSubgraph sub;
  sub.local_to_global = sorted;
  sub.anchor_local = static_cast<std::size_t>(pos - sorted.begin());
  sub.csr_offsets.assign(1, 0);

  std::unordered_map<NodeId, NodeId> to_local;
  to_local.reserve(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) to_local[sorted[i]] = static_cast<NodeId>(i);

  const auto& offsets = g.csr_offsets();
  const auto& targets = g.csr_targets();
  for (NodeId v : sorted) {
    for (std::size_t e = offsets[v]; e < offsets[v + 1]; ++e) {
      auto it = to_local.find(targets[e]);
      if (it == to_local.end()) continue;
      sub.csr_targets.push_back(it->second);
      sub.parent_entries.push_back(e);
    }
    sub.csr_offsets.push_back(sub.csr_targets.size());
  }
  return sub;
}

// Stochastic block model over `num_classes` balanced classes; node text is a
// bag of class words plus shared noise words. Labels and a deterministic
// 60/20/20 split are attached. Fully reproducible from the seed.
inline TextAttributedGraph generate_synthetic_tag(int num_classes, int nodes_per_class, double intra_p,
                                                  double inter_p, const std::vector<std::string>& vocab_words,
                                                  std::uint64_t seed, int class_words_per_node = 8,
                                                  int noise_words_per_node = 4) {
  if (num_classes < 1 || nodes_per_class < 1) throw std::invalid_argument("class/node counts must be positive");
  if (static_cast<int>(vocab_words.size()) < num_classes + 1)
    throw std::invalid_argument("vocab_words not partitionable across classes");
  intra_p = std::clamp(intra_p, 0.0, 1.0);
  inter_p = std::clamp(inter_p, 0.0, 1.0);

  // round-robin partition: one bucket per class plus one shared noise bucket
  std::vector<std::vector<std::string>> class_words(num_classes);
  std::vector<std::string> noise_words;
  for (std::size_t i = 0; i < vocab_words.size(); ++i) {
    int bucket = static_cast<int>(i % (num_classes + 1));
    if (bucket == num_classes)
      noise_words.push_back(vocab_words[i]);
    else
      class_words[bucket].push_back(vocab_words[i]);
  }
  if (noise_words.empty()) noise_words.push_back(vocab_words.back());

  const std::size_t n = static_cast<std::size_t>(num_classes) * nodes_per_class;
  auto class_of = [&](std::size_t v) { return static_cast<int>(v / nodes_per_class); };

  Rng rng(seed);
  detail::EdgeAccum acc;
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = u + 1; v < n; ++v) {
      double p = class_of(u) == class_of(v) ? intra_p : inter_p;
      if (rng.uniform() < p) acc.add(static_cast<NodeId>(u), static_cast<NodeId>(v), "");
    }
  }

  std::vector<std::string> texts(n), labels(n);
  std::vector<long long> original_ids(n);
  for (std::size_t v = 0; v < n; ++v) {
    const auto& cw = class_words[class_of(v)];
    std::vector<std::string> words;
    for (int i = 0; i < class_words_per_node; ++i) words.push_back(cw[rng.below(cw.size())]);
    for (int i = 0; i < noise_words_per_node; ++i) words.push_back(noise_words[rng.below(noise_words.size())]);
    rng.shuffle(words);
    std::string text;
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i) text += ' ';
      text += words[i];
    }
    texts[v] = text;
    labels[v] = std::to_string(class_of(v));
    original_ids[v] = static_cast<long long>(v);
  }

  std::vector<NodeId> order(n);
  for (std::size_t v = 0; v < n; ++v) order[v] = static_cast<NodeId>(v);
  rng.shuffle(order);
  Splits splits;
  const std::size_t n_train = n * 6 / 10, n_valid = n * 2 / 10;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_train)
      splits.train.push_back(order[i]);
    else if (i < n_train + n_valid)
      splits.valid.push_back(order[i]);
    else
      splits.test.push_back(order[i]);
  }
  std::sort(splits.train.begin(), splits.train.end());
  std::sort(splits.valid.begin(), splits.valid.end());
  std::sort(splits.test.begin(), splits.test.end());

  return detail::build_from_edges(std::move(texts), std::move(labels), acc, std::move(splits),
                                  std::move(original_ids));
}

// Fallback word list for synthetic fixtures.
inline std::vector<std::string> default_synthetic_vocab() {
  return {"amber", "basalt", "cobalt", "dune",   "ember",  "fjord",  "garnet", "harbor", "iris",   "jade",
          "krill",  "lagoon", "moss",  "nectar", "onyx",   "prism",  "quartz", "reef",   "slate",  "tundra",
          "umber",  "violet", "willow", "xenon",  "yarrow", "zircon", "arch",   "brook",  "cliff",  "delta",
          "eddy",   "flume",  "grove", "heath",  "inlet",  "knoll",  "ledge",  "marsh",  "notch",  "oxbow",
          "pond",   "ridge",  "swale", "thicket", "vale",   "wash",   "yard",   "zone"};
}

}  // namespace unigraph
