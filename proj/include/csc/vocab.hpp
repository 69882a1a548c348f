#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace csc {

// Token inventory. Reserved tokens occupy fixed low ids:
//   PAD    padding, never inside a sentence
//   UNK    image of every out-of-vocabulary character; may occur in text
//   MASK   corruption token, never occurs in natural text
//   UNUSED spare corruption token, never occurs in natural text
//
// MASK/UNUSED/PAD use multi-character token strings so character-level
// tokenization can never produce them from natural input. UNK's string is a
// single character ("〓") so corpora containing out-of-vocabulary characters
// still round-trip through the TSV format.
struct Vocab {
  std::vector<std::string> tokens;
  int pad_id = -1;
  int unk_id = -1;
  int mask_id = -1;
  int unused_id = -1;
  std::unordered_map<std::string, int> index;

  int size() const { return static_cast<int>(tokens.size()); }

  /// -1 when the token string is not in the vocabulary.
  int lookup(const std::string& token) const {
    auto it = index.find(token);
    return it == index.end() ? -1 : it->second;
  }

  /// True for tokens that must never occur in natural text.
  bool forbidden_in_text(int id) const {
    return id == pad_id || id == mask_id || id == unused_id;
  }

  bool is_reserved(int id) const {
    return forbidden_in_text(id) || id == unk_id;
  }

  const std::string& token(int id) const { return tokens.at(id); }

  /// Builds a vocabulary from ordinary tokens, prepending the four reserved
  /// tokens. Throws on duplicates or collisions with reserved strings.
  static Vocab make(const std::vector<std::string>& ordinary);

  static Vocab load(const std::string& path);
  void save(const std::string& path) const;
};

}  // namespace csc
