#pragma once

#include <algorithm>
#include <deque>
#include <stdexcept>
#include <vector>

#include "unigraph/graph.hpp"

namespace unigraph {

struct PprParams {
  double alpha = 0.15;     // teleport probability, (0, 1]
  double epsilon = 1e-6;   // residual threshold, > 0
  std::size_t topk = 128;

  void validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must be in (0,1]");
    if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
    if (topk < 1) throw std::invalid_argument("topk must be >= 1");
  }
};

// Sparse PPR mass. Residuals are kept for the push-guarantee debug check:
// after approximate_ppr, r(u) < epsilon * deg(u) for every node.
struct PprScores {
  std::vector<std::pair<NodeId, double>> entries;    // sorted by node id, score > 0
  std::vector<std::pair<NodeId, double>> residuals;  // sorted by node id, residual > 0

  double score(NodeId v) const {
    auto it = std::lower_bound(entries.begin(), entries.end(), v,
                               [](const auto& e, NodeId id) { return e.first < id; });
    return it != entries.end() && it->first == v ? it->second : 0.0;
  }

  double sum() const {
    double s = 0.0;
    for (const auto& [v, p] : entries) s += p;
    return s;
  }
};

// Forward push approximation of personalized PageRank from `anchor`:
// fixed point of pi = alpha * e_anchor + (1 - alpha) * P^T pi with
// P = D^-1 A. Push order is FIFO; neighbor updates follow ascending node id
// (CSR order), so the result is deterministic. An isolated anchor returns
// {anchor: 1} by convention.
inline PprScores approximate_ppr(const TextAttributedGraph& g, NodeId anchor, const PprParams& params) {
  params.validate();
  if (anchor >= g.num_nodes()) throw std::out_of_range("anchor out of range");

  PprScores out;
  if (g.degree(anchor) == 0) {
    out.entries.emplace_back(anchor, 1.0);
    return out;
  }

  const std::size_t n = g.num_nodes();
  std::vector<double> mass(n, 0.0), residual(n, 0.0);
  std::vector<char> queued(n, 0);
  std::deque<NodeId> queue;

  residual[anchor] = 1.0;
  if (residual[anchor] >= params.epsilon * static_cast<double>(g.degree(anchor))) {
    queue.push_back(anchor);
    queued[anchor] = 1;
  }

  while (!queue.empty()) {
    const NodeId u = queue.front();
    queue.pop_front();
    queued[u] = 0;
    const double deg_u = static_cast<double>(g.degree(u));
    const double r_u = residual[u];
    if (r_u < params.epsilon * deg_u) continue;

    mass[u] += params.alpha * r_u;
    residual[u] = 0.0;
    const double share = (1.0 - params.alpha) * r_u / deg_u;
    if (share == 0.0) continue;
    for (NodeId w : g.neighbors(u)) {
      residual[w] += share;
      if (!queued[w] && residual[w] >= params.epsilon * static_cast<double>(g.degree(w))) {
        queue.push_back(w);
        queued[w] = 1;
      }
    }
  }

  for (std::size_t v = 0; v < n; ++v) {
    if (mass[v] > 0.0) out.entries.emplace_back(static_cast<NodeId>(v), mass[v]);
    if (residual[v] > 0.0) out.residuals.emplace_back(static_cast<NodeId>(v), residual[v]);
  }
  return out;
}

// Anchor plus the k highest-scoring other nodes (fewer if unavailable).
// Ties break on ascending node id; the anchor is always included. Returned
// ids are sorted ascending.
inline std::vector<NodeId> top_k_context(const PprScores& scores, NodeId anchor, std::size_t k) {
  std::vector<std::pair<NodeId, double>> candidates;
  candidates.reserve(scores.entries.size());
  for (const auto& [v, p] : scores.entries)
    if (v != anchor) candidates.emplace_back(v, p);
  std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (candidates.size() > k) candidates.resize(k);

  std::vector<NodeId> result;
  result.reserve(candidates.size() + 1);
  result.push_back(anchor);
  for (const auto& [v, p] : candidates) result.push_back(v);
  std::sort(result.begin(), result.end());
  return result;
}

enum class TaskLevel { node, edge, graph };

inline TaskLevel task_level_from_string(const std::string& s) {
  if (s == "node") return TaskLevel::node;
  if (s == "edge") return TaskLevel::edge;
  if (s == "graph") return TaskLevel::graph;
  throw std::invalid_argument("unknown task level: " + s);
}

inline ContextSubgraph whole_graph_subgraph(const TextAttributedGraph& g) {
  ContextSubgraph sub;
  sub.local_to_global.resize(g.num_nodes());
  for (std::size_t v = 0; v < g.num_nodes(); ++v) sub.local_to_global[v] = static_cast<NodeId>(v);
  sub.anchor_local = 0;
  sub.csr_offsets = g.csr_offsets();
  sub.csr_targets = g.csr_targets();
  sub.parent_entries.resize(g.num_entries());
  for (std::size_t e = 0; e < g.num_entries(); ++e) sub.parent_entries[e] = e;
  return sub;
}

inline ContextSubgraph contextual_subgraph(const TextAttributedGraph& g, NodeId anchor,
                                           const PprParams& params) {
  auto scores = approximate_ppr(g, anchor, params);
  auto nodes = top_k_context(scores, anchor, params.topk);
  return induced_subgraph(g, nodes, anchor);
}

// Node level: one subgraph around the single anchor. Edge level: one per
// endpoint, in anchor order. Graph level: the whole graph, no PPR.
inline std::vector<ContextSubgraph> contextual_subgraphs_for_task(const TextAttributedGraph& g,
                                                                  const std::vector<NodeId>& anchors,
                                                                  TaskLevel level, const PprParams& params) {
  switch (level) {
    case TaskLevel::node:
      if (anchors.size() != 1) throw std::invalid_argument("node level requires exactly 1 anchor");
      return {contextual_subgraph(g, anchors[0], params)};
    case TaskLevel::edge:
      if (anchors.size() != 2) throw std::invalid_argument("edge level requires exactly 2 anchors");
      return {contextual_subgraph(g, anchors[0], params), contextual_subgraph(g, anchors[1], params)};
    case TaskLevel::graph:
      return {whole_graph_subgraph(g)};
  }
  throw std::logic_error("unreachable");
}

}  // namespace unigraph
