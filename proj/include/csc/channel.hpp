#pragma once

#include <string>
#include <vector>

#include "csc/corpus.hpp"
#include "csc/vocab.hpp"

namespace csc {

// P(y_i | x_{-i}): distribution over the vocabulary for the true token at a
// position, computed from the surrounding context only.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;
  // Returns a normalized distribution over the vocabulary. Implementations
  // must not condition on x.ids[position].
  virtual std::vector<double> distribution(const Sentence& x,
                                           int position) const = 0;
};

// P(x_i | y_i, x_{-i}): likelihood of the observed token given a candidate
// truth. Context is available as a hook; the default table ignores it.
class ErrorModel {
 public:
  virtual ~ErrorModel() = default;
  virtual double likelihood(int observed, int candidate,
                            const Sentence& context, int position) const = 0;
};

// Context-free substitution table P(x | y), row-major over [y][x].
class ChannelTable final : public ErrorModel {
 public:
  ChannelTable() = default;

  // P(x|y) = 1 iff x == y.
  static ChannelTable identity(int vocab_size);

  // Counts (target -> source) substitutions over every aligned position,
  // identity positions included, with additive smoothing alpha over the
  // full vocabulary. Rows for unseen targets are uniform.
  static ChannelTable estimate(const std::vector<ParallelExample>& corpus,
                               int vocab_size, double alpha = 0.1);

  // Lines `y_token<TAB>x_token<TAB>probability`. Listed rows must sum to 1
  // within 1e-4; targets with no listed row default to identity.
  static ChannelTable load(const std::string& path, const Vocab& vocab);
  void save(const std::string& path, const Vocab& vocab) const;

  double prob(int observed, int candidate) const {
    return table_[static_cast<std::size_t>(candidate) * vocab_size_ +
                  observed];
  }
  double likelihood(int observed, int candidate, const Sentence&,
                    int) const override {
    return prob(observed, candidate);
  }
  int vocab_size() const { return vocab_size_; }

  // Every row sums to 1 within tol; self-loop mass is positive.
  void validate(double tol = 1e-6) const;

 private:
  int vocab_size_ = 0;
  std::vector<double> table_;
};

// normalize( P(y|x_{-i}) * P(x_i|y,x_{-i}) ) over all y.
std::vector<double> posterior(const LanguageModel& lm, const ErrorModel& em,
                              const Sentence& x, int position);

// Independent per-position argmax of the posterior; ties break to the
// lowest token id.
Sentence correct(const LanguageModel& lm, const ErrorModel& em,
                 const Sentence& x);

class MlmModel;

// Replaces each listed position with mask_id, then substitutes the model's
// argmax prediction back. Other positions pass through unchanged.
Sentence repair_with_mask_oracle(const MlmModel& model, const Sentence& x,
                                 const std::vector<int>& error_positions,
                                 int mask_id);

}  // namespace csc
