#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "csc/vocab.hpp"

namespace csc {

/// Token-id sequence. Aligned source/target pairs always have equal length;
/// the task is substitution-only.
struct Sentence {
  std::vector<int> ids;

  Sentence() = default;
  explicit Sentence(std::vector<int> v) : ids(std::move(v)) {}

  int size() const { return static_cast<int>(ids.size()); }
  int& operator[](int i) { return ids[i]; }
  int operator[](int i) const { return ids[i]; }
  bool operator==(const Sentence& o) const { return ids == o.ids; }
};

struct ParallelExample {
  Sentence source;
  Sentence target;
};

/// One differing position. Pair identity for set membership is (src, tgt)
/// only; the position is kept per occurrence.
struct EditPair {
  int src = 0;
  int tgt = 0;
  int position = 0;
};

using EditPairKey = std::pair<int, int>;

enum class SplitLabel { Inc, Exc, Clean };

struct CorpusStats {
  std::size_t num_examples = 0;        // NE
  std::size_t num_positive = 0;        // NPE: examples with >= 1 error
  double mean_length = 0.0;            // SL
  double mean_errors_per_positive = 0.0;  // NEC
  std::size_t distinct_edit_pairs = 0;    // NEP
};

/// Splits UTF-8 text into codepoint strings. Throws on malformed input.
std::vector<std::string> split_utf8(const std::string& text);

/// Character-level tokenization; unknown characters map to UNK.
/// Throws "empty sentence" on empty input.
Sentence tokenize(const std::string& text, const Vocab& vocab);

std::string detokenize(const Sentence& sentence, const Vocab& vocab);

/// Rejects out-of-range ids, PAD, MASK and UNUSED; natural corpus text can
/// contain UNK only.
void validate_natural_sentence(const Sentence& s, const Vocab& vocab);
void validate_natural_corpus(const std::vector<Sentence>& corpus,
                             const Vocab& vocab);
void validate_natural_corpus(const std::vector<ParallelExample>& corpus,
                             const Vocab& vocab);

/// Positions where source and target differ, in position order.
/// Throws "misaligned example" on length mismatch.
std::vector<EditPair> extract_edit_pairs(const ParallelExample& ex);

/// Labels every test example INC / EXC / CLEAN given the set of edit pairs
/// seen anywhere in train. An example with at least one unseen pair is EXC.
std::vector<SplitLabel> inc_exc_split(const std::vector<ParallelExample>& train,
                                      const std::vector<ParallelExample>& test);

CorpusStats corpus_stats(const std::vector<ParallelExample>& data);

// Parallel corpus file: one example per line, "source<TAB>target".
std::vector<ParallelExample> load_parallel_tsv(const std::string& path,
                                               const Vocab& vocab);
void save_parallel_tsv(const std::string& path,
                       const std::vector<ParallelExample>& data,
                       const Vocab& vocab);

// Monolingual file: one clean sentence per line.
std::vector<Sentence> load_monolingual(const std::string& path,
                                       const Vocab& vocab);
void save_monolingual(const std::string& path,
                      const std::vector<Sentence>& data, const Vocab& vocab);

}  // namespace csc
