#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "csc/channel.hpp"
#include "csc/corpus.hpp"

namespace csc {

struct MlmConfig {
  int vocab_size = 0;
  int dim = 64;
  int layers = 2;
  int heads = 4;
  int ff_dim = 256;
  int max_len = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

// Named views into one flat parameter buffer. Segment order is fixed by
// construction, so flat offsets are stable for a given config.
struct ParamLayout {
  std::vector<std::pair<std::string, std::size_t>> segments;
  std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> spans;
  std::size_t total = 0;

  static ParamLayout make(const MlmConfig& config);
  // (offset, size); unknown name is an error.
  std::pair<std::size_t, std::size_t> span(const std::string& name) const;
};

struct GradientRecord {
  std::vector<double> grads;  // flat, ParamLayout order
  double loss = 0.0;
  double global_norm = 0.0;
  // L2 norm of the loss gradient w.r.t. each input position's embedding
  // vector; packed across examples for batched calls.
  std::vector<double> per_token_embedding_norm;
};

// Variable-length minibatch, examples concatenated without padding.
// supervised[t] selects the positions the loss averages over.
struct PackedBatch {
  std::vector<int> tokens;
  std::vector<int> targets;
  std::vector<std::uint8_t> supervised;
  std::vector<std::size_t> offsets = {0};

  std::size_t num_examples() const { return offsets.size() - 1; }
  std::size_t num_tokens() const { return tokens.size(); }
  void add(const Sentence& x, const Sentence& y,
           const std::vector<std::uint8_t>& supervised_mask);
  void add_all_positions(const Sentence& x, const Sentence& y);
};

// Pre-norm transformer encoder over characters with tied input/output
// embeddings. Exposes exact analytic gradients of its own loss; the
// optimizer lives elsewhere.
class MlmModel {
 public:
  explicit MlmModel(const MlmConfig& config);

  const MlmConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  double* segment(const std::string& name);
  const double* segment(const std::string& name) const;

  // Per-position distributions over the vocabulary, rows summing to 1.
  std::vector<std::vector<double>> forward(const Sentence& x) const;

  // Mean cross-entropy of y over the selected positions; an empty
  // position_mask selects every position (the correction objective).
  double loss(const Sentence& x, const Sentence& y,
              const std::vector<int>& position_mask = {}) const;
  GradientRecord backward(const Sentence& x, const Sentence& y,
                          const std::vector<int>& position_mask = {}) const;

  // Batch loss is the mean over examples of per-example means, so a batch
  // of one reproduces the single-sentence numbers exactly. Examples with
  // no supervised position are skipped; a batch with none at all is an
  // error.
  double loss(const PackedBatch& batch) const;
  GradientRecord backward(const PackedBatch& batch) const;

  // k most probable tokens at a position, by descending probability,
  // ties broken toward the lowest id.
  std::vector<std::pair<int, double>> predict_topk(const Sentence& x,
                                                   int position, int k) const;
  int predict(const Sentence& x, int position) const;

  // P(y_i | x_{-i}) view: substitutes mask_id at the queried position and
  // reads that row of forward(). The view borrows this model.
  std::unique_ptr<LanguageModel> as_language_model(int mask_id) const;

  void save(const std::string& path) const;
  static MlmModel load(const std::string& path);

 private:
  MlmConfig config_;
  ParamLayout layout_;
  std::vector<double> params_;
};

}  // namespace csc
