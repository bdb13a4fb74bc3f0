#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "unigraph/rng.hpp"

namespace unigraph {

// Whitespace/punctuation word vocabulary with pinned special-token ids.
struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kNumSpecials = 5;

  std::unordered_map<std::string, int> token_to_id;
  std::vector<std::string> id_to_token;

  int size() const { return static_cast<int>(id_to_token.size()); }

  int id_of(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kUnk : it->second;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (int i = 0; i < size(); ++i) j[id_to_token[i]] = i;
    return j;
  }

  static Vocab from_json(const nlohmann::json& j) {
    Vocab v;
    v.id_to_token.resize(j.size());
    for (auto it = j.begin(); it != j.end(); ++it) {
      int id = it.value().get<int>();
      if (id < 0 || id >= static_cast<int>(j.size())) throw std::runtime_error("vocab id out of range");
      v.id_to_token[id] = it.key();
      v.token_to_id[it.key()] = id;
    }
    return v;
  }
};

// Lowercased word split on anything that is not alphanumeric. Non-ASCII bytes
// are treated as word characters so UTF-8 input stays intact.
inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string current;
  for (unsigned char c : text) {
    bool word_char = c >= 0x80 || std::isalnum(c);
    if (word_char) {
      current += static_cast<char>(c < 0x80 ? std::tolower(c) : c);
    } else if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

// Most frequent max_size - 5 words, ordered by frequency then lexicographic.
inline Vocab build_vocab(const std::vector<std::string>& corpus, int max_size) {
  if (corpus.empty()) throw std::invalid_argument("empty corpus");
  if (max_size < Vocab::kNumSpecials + 1) throw std::invalid_argument("vocab too small for specials");

  std::map<std::string, std::size_t> counts;
  for (const auto& doc : corpus)
    for (auto& w : split_words(doc)) ++counts[w];

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (ranked.size() > static_cast<std::size_t>(max_size - Vocab::kNumSpecials))
    ranked.resize(max_size - Vocab::kNumSpecials);

  Vocab v;
  v.id_to_token = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  for (const auto& [w, c] : ranked) v.id_to_token.push_back(w);
  for (int i = 0; i < v.size(); ++i) v.token_to_id[v.id_to_token[i]] = i;
  return v;
}

// [CLS] t_1 .. t_n [SEP]; never contains [MASK].
struct TokenSequence {
  std::vector<int> ids;
  int content_len = 0;  // n_v
};

struct MaskedSequence {
  std::vector<int> ids;
  std::vector<char> mask_flags;  // true exactly where ids == [MASK]
};

// Prefix truncation keeps the first max_len - 2 content tokens.
inline TokenSequence tokenize(const Vocab& vocab, const std::string& text, int max_len) {
  if (max_len < 2) throw std::invalid_argument("max_len must be >= 2");
  TokenSequence seq;
  seq.ids.push_back(Vocab::kCls);
  auto words = split_words(text);
  if (words.size() > static_cast<std::size_t>(max_len - 2)) words.resize(max_len - 2);
  for (const auto& w : words) seq.ids.push_back(vocab.id_of(w));
  seq.ids.push_back(Vocab::kSep);
  seq.content_len = static_cast<int>(words.size());
  return seq;
}

// Each content position independently becomes [MASK] with probability p;
// [CLS]/[SEP] are never touched. Pure substitution, no random-token variant.
inline MaskedSequence mask_tokens(const TokenSequence& seq, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("mask probability must be in [0,1]");
  MaskedSequence out;
  out.ids = seq.ids;
  out.mask_flags.assign(seq.ids.size(), 0);
  for (int i = 1; i <= seq.content_len; ++i) {
    if (rng.uniform() < p) {
      out.ids[i] = Vocab::kMask;
      out.mask_flags[i] = 1;
    }
  }
  return out;
}

}  // namespace unigraph
