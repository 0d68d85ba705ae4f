#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "rnmt/util.hpp"

namespace rnmt {

// A sentence is a sequence of tokens with no padding markers; tokens never
// contain whitespace.
using Sentence = std::vector<std::string>;

enum class TokenizeMode { Clean, AsrLike };

namespace detail {
inline bool is_ascii_punct(char c) {
  return std::ispunct(static_cast<unsigned char>(c)) != 0;
}
}  // namespace detail

// Clean mode: lowercase, split on whitespace. AsrLike additionally strips
// ASCII punctuation characters; tokens that become empty are dropped. An
// all-empty result signals the empty-sentence condition (caller drops the
// line).
inline Sentence tokenize(const std::string& raw, TokenizeMode mode) {
  Sentence out;
  std::istringstream ss(raw);
  std::string tok;
  while (ss >> tok) {
    std::string t;
    for (char c : tok) {
      if (mode == TokenizeMode::AsrLike && detail::is_ascii_punct(c)) continue;
      t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

inline std::string join_tokens(const Sentence& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out.push_back(' ');
    out += s[i];
  }
  return out;
}

// Keep/drop rule for parallel pairs: drop when either side exceeds max_len
// tokens, when either side is empty, or when the source/target length ratio
// falls outside [1/ratio_bound, ratio_bound].
inline bool clean_pair_keep(std::size_t src_len, std::size_t tgt_len,
                            std::size_t max_len = 100,
                            double ratio_bound = 2.0) {
  if (src_len == 0 || tgt_len == 0) return false;
  if (src_len > max_len || tgt_len > max_len) return false;
  double ratio = static_cast<double>(src_len) / static_cast<double>(tgt_len);
  return ratio >= 1.0 / ratio_bound && ratio <= ratio_bound;
}

struct ParallelPair {
  Sentence source;
  Sentence target;
};

struct TranscriptionPair {
  Sentence auto_side;
  Sentence manual_side;
  double wer = 0.0;
};

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  Vocabulary() {
    for (const char* t : {"<pad>", "<bos>", "<eos>", "<unk>"}) add_token(t);
  }

  int add_token(const std::string& tok) {
    auto it = token_to_id_.find(tok);
    if (it != token_to_id_.end()) return it->second;
    int id = static_cast<int>(id_to_token_.size());
    id_to_token_.push_back(tok);
    token_to_id_.emplace(tok, id);
    return id;
  }

  int id(const std::string& tok) const {
    auto it = token_to_id_.find(tok);
    return it == token_to_id_.end() ? kUnk : it->second;
  }

  const std::string& token(int id) const { return id_to_token_.at(id); }
  int size() const { return static_cast<int>(id_to_token_.size()); }

  // One token per line, line index = id (reserved tokens included).
  void save(const std::string& path) const { write_lines(path, id_to_token_); }

  static Vocabulary load(const std::string& path) {
    Vocabulary v;
    auto lines = read_lines(path);
    if (lines.size() < 4 || lines[0] != "<pad>" || lines[1] != "<bos>" ||
        lines[2] != "<eos>" || lines[3] != "<unk>")
      throw std::runtime_error("malformed vocabulary file: " + path);
    for (std::size_t i = 4; i < lines.size(); ++i) v.add_token(lines[i]);
    return v;
  }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

// Most frequent tokens first, ties broken lexicographically, capped at
// max_size non-reserved entries.
inline Vocabulary build_vocab(const std::vector<Sentence>& corpus,
                              std::size_t min_freq = 1,
                              std::size_t max_size = 10000) {
  if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::map<std::string, std::size_t> freq;
  for (const auto& s : corpus)
    for (const auto& t : s) ++freq[t];

  std::vector<std::pair<std::string, std::size_t>> items;
  for (const auto& [tok, n] : freq)
    if (n >= min_freq) items.emplace_back(tok, n);
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (items.size() > max_size) items.resize(max_size);

  Vocabulary v;
  for (const auto& [tok, n] : items) v.add_token(tok);
  return v;
}

inline std::vector<int> encode_ids(const Sentence& s, const Vocabulary& v,
                                   bool add_bos_eos = false) {
  std::vector<int> ids;
  ids.reserve(s.size() + 2);
  if (add_bos_eos) ids.push_back(Vocabulary::kBos);
  for (const auto& t : s) ids.push_back(v.id(t));
  if (add_bos_eos) ids.push_back(Vocabulary::kEos);
  return ids;
}

// Reserved ids (PAD/BOS/EOS/UNK markers other than UNK text) are dropped; UNK
// decodes to its literal token.
inline Sentence decode_ids(const std::vector<int>& ids, const Vocabulary& v) {
  Sentence s;
  for (int id : ids) {
    if (id == Vocabulary::kPad || id == Vocabulary::kBos ||
        id == Vocabulary::kEos)
      continue;
    s.push_back(v.token(id));
  }
  return s;
}

inline std::vector<Sentence> load_corpus(const std::string& path,
                                         TokenizeMode mode,
                                         bool keep_empty = false) {
  std::vector<Sentence> out;
  for (const auto& line : read_lines(path)) {
    Sentence s = tokenize(line, mode);
    if (!s.empty() || keep_empty) out.push_back(std::move(s));
  }
  return out;
}

}  // namespace rnmt
