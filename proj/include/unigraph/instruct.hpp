#pragma once

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "unigraph/embed.hpp"
#include "unigraph/graph.hpp"

namespace unigraph {

enum class PromptDomain { citation, products, web, knowledge };

inline PromptDomain prompt_domain_from_string(const std::string& s) {
  if (s == "citation") return PromptDomain::citation;
  if (s == "products") return PromptDomain::products;
  if (s == "web") return PromptDomain::web;
  if (s == "knowledge") return PromptDomain::knowledge;
  throw std::invalid_argument("unknown prompt domain: " + s);
}

struct PromptTemplate {
  PromptDomain domain;
  std::string body;  // with {NODE_V}, {NODE_U}, {NEIGHBORS}, {TITLE}, {ABSTRACT},
                     // {NAME}, {CONTENT}, {CANDIDATE_LABELS} placeholders
};

inline PromptTemplate prompt_template(PromptDomain domain) {
  switch (domain) {
    case PromptDomain::citation:
      return {domain,
              "Given a citation graph, node represents academic paper with a specific topic. {NODE_V} is "
              "featured with its content: {TITLE}, {ABSTRACT}. {NODE_V} and its contextual neighbor nodes "
              "{NEIGHBORS} are highly correlated. Question: Which category should {NODE_V} be classified "
              "as? Please strictly classify the paper into one of the following "
              "categories:[{CANDIDATE_LABELS}].  Answer: "};
    case PromptDomain::products:
      return {domain,
              "Given a products graph, node represents a product sold in Amazon with a specific category. "
              "{NODE_V} is featured with its content: {CONTENT}. {NODE_V} and its contextual neighbor "
              "nodes {NEIGHBORS} are highly correlated. Question: Which category should {NODE_V} be "
              "classified as? Please strictly classify the product into one of the following "
              "categories:[{CANDIDATE_LABELS}].  Answer: "};
    case PromptDomain::web:
      return {domain,
              "Given a Wikipedia graph, node represents Wikipedia page with a specific category. {NODE_V} "
              "is featured with its content: {NAME},{CONTENT}. {NODE_V} and its contextual neighbor nodes "
              "{NEIGHBORS} are highly correlated. Question: Which category should {NODE_V} be classified "
              "as? Please strictly classify the Wikipedia page into one of the following "
              "categories:[{CANDIDATE_LABELS}].  Answer: "};
    case PromptDomain::knowledge:
      return {domain,
              "Given a knowledge graph, edge between two entities represents a relation with a specific "
              "category. Node one {NODE_V} is featured with its content: {NAME},{CONTENT}. Node two "
              "{NODE_U} is featured with its content: {NAME},{CONTENT}. Question: Which category should "
              "the relation between node one {NODE_V} and node two {NODE_U} be classified as? Please "
              "strictly classify the relation into one of the following categories:[{CANDIDATE_LABELS}].  "
              "Answer: "};
  }
  throw std::logic_error("unreachable");
}

namespace detail {

// Title = first sentence, content/abstract = the remainder; texts without a
// sentence break use the whole text for both.
inline std::pair<std::string, std::string> split_title_content(const std::string& text) {
  const auto pos = text.find(". ");
  if (pos == std::string::npos) return {text, text};
  return {text.substr(0, pos), text.substr(pos + 2)};
}

inline void replace_first(std::string& body, const std::string& needle, const std::string& value) {
  const auto pos = body.find(needle);
  if (pos != std::string::npos) body.replace(pos, needle.size(), value);
}

inline void replace_all(std::string& body, const std::string& needle, const std::string& value) {
  std::size_t pos = 0;
  while ((pos = body.find(needle, pos)) != std::string::npos) {
    body.replace(pos, needle.size(), value);
    pos += value.size();
  }
}

}  // namespace detail

// Substitutes every placeholder. Anchor markers stay as <node_*> tokens so a
// downstream consumer can interleave embeddings at the marked positions.
// Neighbor markers list the anchor's graph neighbors up to neighbor_cap.
inline std::string render_prompt(const PromptTemplate& tmpl, const TextAttributedGraph& g,
                                 const AnchorSpec& anchors, const std::vector<std::string>& candidate_labels,
                                 int neighbor_cap = 8) {
  if (candidate_labels.empty()) throw std::invalid_argument("candidate label list is empty");
  const std::size_t need = tmpl.domain == PromptDomain::knowledge ? 2 : 1;
  if (anchors.anchors.size() != need)
    throw std::invalid_argument("template requires " + std::to_string(need) + " anchor(s), got " +
                                std::to_string(anchors.anchors.size()));
  for (NodeId a : anchors.anchors)
    if (a >= g.num_nodes()) throw std::invalid_argument("anchor out of range");

  std::string body = tmpl.body;
  const NodeId v = anchors.anchors[0];
  const auto [title_v, content_v] = detail::split_title_content(g.node_text(v));

  detail::replace_all(body, "{NODE_V}", "<node_v>");
  detail::replace_first(body, "{TITLE}", title_v);
  detail::replace_first(body, "{ABSTRACT}", content_v);

  if (tmpl.domain == PromptDomain::knowledge) {
    const NodeId u = anchors.anchors[1];
    const auto [title_u, content_u] = detail::split_title_content(g.node_text(u));
    detail::replace_all(body, "{NODE_U}", "<node_u>");
    // repeated {NAME}/{CONTENT} bind to anchors in order of appearance
    detail::replace_first(body, "{NAME}", title_v);
    detail::replace_first(body, "{CONTENT}", content_v);
    detail::replace_first(body, "{NAME}", title_u);
    detail::replace_first(body, "{CONTENT}", content_u);
  } else {
    detail::replace_first(body, "{NAME}", title_v);
    detail::replace_first(body, "{CONTENT}", content_v);
  }

  std::string neigh = "{";
  int listed = 0;
  for (NodeId u : g.neighbors(v)) {
    if (listed >= neighbor_cap) break;
    if (listed) neigh += "; ";
    neigh += "<node_" + std::to_string(g.original_id(u)) + ">";
    ++listed;
  }
  neigh += "}";
  detail::replace_first(body, "{NEIGHBORS}", neigh);

  std::string labels;
  for (std::size_t i = 0; i < candidate_labels.size(); ++i) {
    if (i) labels += ", ";
    labels += candidate_labels[i];
  }
  detail::replace_first(body, "{CANDIDATE_LABELS}", labels);
  return body;
}

inline std::vector<std::string> distinct_labels(const TextAttributedGraph& g) {
  std::set<std::string> seen;
  for (const auto& l : g.labels())
    if (!l.empty()) seen.insert(l);
  return {seen.begin(), seen.end()};
}

// JSONL of {"prompt", "embedding_rows", "target"} records, one per labeled
// anchor, in ascending anchor id order. Embeddings are referenced by row index
// into the companion TSV; --inline additionally embeds the float vectors.
inline std::size_t emit_instruction_dataset(const TextAttributedGraph& g, const EmbeddingMatrix& embeddings,
                                            std::vector<NodeId> split, const PromptTemplate& tmpl,
                                            const std::string& out_path, bool inline_embeddings = false,
                                            int neighbor_cap = 8) {
  if (tmpl.domain == PromptDomain::knowledge)
    throw std::invalid_argument("dataset emission uses node-level templates");
  std::sort(split.begin(), split.end());
  split.erase(std::unique(split.begin(), split.end()), split.end());

  const std::vector<std::string> candidates = distinct_labels(g);
  if (candidates.empty()) throw std::invalid_argument("graph has no labels");

  std::ofstream f(out_path);
  if (!f) throw std::runtime_error("cannot write dataset: " + out_path);

  std::size_t count = 0;
  for (NodeId v : split) {
    if (v >= g.num_nodes()) throw std::invalid_argument("split node out of range");
    if (g.label(v).empty()) throw std::invalid_argument("unlabeled anchor " + std::to_string(v));
    const int row = embeddings.find_row(v);
    if (row < 0) throw std::invalid_argument("no embedding for anchor " + std::to_string(v));

    AnchorSpec spec{TaskLevel::node, {v}};
    nlohmann::json rec;
    rec["prompt"] = render_prompt(tmpl, g, spec, candidates, neighbor_cap);
    rec["embedding_rows"] = std::vector<int>{row};
    rec["target"] = g.label(v);
    if (inline_embeddings) {
      std::vector<double> e(embeddings.rows.cols());
      for (int j = 0; j < embeddings.rows.cols(); ++j) e[j] = embeddings.rows(row, j);
      rec["embedding"] = e;
    }
    f << rec.dump() << "\n";
    ++count;
  }
  return count;
}

}  // namespace unigraph
