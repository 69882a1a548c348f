#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "csc/corpus.hpp"
#include "csc/rng.hpp"
#include "csc/vocab.hpp"

namespace csc {

enum class ConfusionCategory { SamePron = 0, SimPron = 1, SimGlyph = 2 };

// Per-token confusable lists in three explicit categories; the fourth
// category, random_pool, is implicit: every vocabulary id except the key
// token and the construction-time exclusions (reserved control tokens,
// which must never be written into ordinary text).
class ConfusionSet {
 public:
  // Empty placeholder; add() rejects everything until a real set is
  // assigned over it.
  ConfusionSet() = default;
  ConfusionSet(int vocab_size, const std::vector<int>& random_pool_exclusions);
  static ConfusionSet for_vocab(const Vocab& vocab);

  void add(int token, ConfusionCategory category,
           const std::vector<int>& confusables);
  const std::vector<int>& list(int token, ConfusionCategory category) const;
  bool has_entries(int token) const;

  int vocab_size() const { return vocab_size_; }
  bool excluded_from_random_pool(int id) const {
    return excluded_[static_cast<std::size_t>(id)] != 0;
  }
  std::size_t random_pool_size(int token) const;

  static ConfusionSet load(const std::string& path, const Vocab& vocab);
  void save(const std::string& path, const Vocab& vocab) const;

 private:
  int vocab_size_ = 0;
  std::vector<std::uint8_t> excluded_;
  std::size_t excluded_count_ = 0;
  std::unordered_map<int, std::array<std::vector<int>, 3>> entries_;
};

enum class MaskTokenKind { Mask, Unused, Unk };
enum class PositionPolicy { NonError, ErrorOnly, Any };

struct MaskPolicy {
  double rate = 0.2;                 // p: per-position perturbation chance
  MaskTokenKind mask_token = MaskTokenKind::Mask;
  PositionPolicy position_policy = PositionPolicy::NonError;
  double mix_mask_probability = 1.0;  // q: 1 pure mask, 0 pure confusion

  void validate() const;
  int token_id(const Vocab& vocab) const;

  // Round-trips strings like `p=0.2,token=MASK,pos=non_error,q=1`.
  static MaskPolicy parse(const std::string& text);
  std::string format() const;
};

// Category drawn with probabilities (0.4, 0.3, 0.2, 0.1); uniform within
// the category; an empty category falls back to the random pool.
int sample_confusable(int token, const ConfusionSet& cs, Rng& rng);

// target = clean; source differs at exactly one uniformly chosen position.
ParallelExample synthesize_pair(const Sentence& clean, const ConfusionSet& cs,
                                Rng& rng);

// Perturbs eligible source positions independently with probability
// policy.rate; the perturbation mode (mask vs confusion substitution) is
// drawn once per example with probability q. Targets are never altered.
// cs may be null iff q == 1.
ParallelExample apply_mask_policy(const ParallelExample& ex,
                                  const MaskPolicy& policy,
                                  const ConfusionSet* cs, const Vocab& vocab,
                                  Rng& rng);

}  // namespace csc
