#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "csc/corpus.hpp"
#include "csc/corruption.hpp"
#include "csc/mlm.hpp"
#include "csc/rng.hpp"
#include "csc/vocab.hpp"

namespace csc {

struct TrainConfig {
  double learning_rate = 3e-4;
  int batch_size = 32;
  int max_steps = 3000;
  int eval_interval = 50;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::optional<MaskPolicy> policy;  // absent = regular fine-tuning
  double mlm_weight = 0.0;           // auxiliary monolingual loss weight

  void validate() const;
  // `key=value` lines; fields absent from the file keep their values in
  // `base`. `policy=none` clears the policy.
  static TrainConfig load(const std::string& path, TrainConfig base);
  static TrainConfig load(const std::string& path);
  void save(const std::string& path) const;
};

struct TrainTrace {
  std::vector<double> loss;       // one entry per step
  std::vector<double> grad_norm;  // norm of the applied (combined) gradient
  std::vector<std::pair<int, double>> eval_f1;  // (1-based step, score)
};

// Delimited text, one row per step: `step,loss,grad_norm[,f1]`.
void save_trace(const std::string& path, const TrainTrace& trace);

using EvalFn = std::function<double(const MlmModel&)>;

class Adam {
 public:
  Adam(std::size_t size, double lr, double beta1, double beta2, double eps);
  void step(std::vector<double>& params, const std::vector<double>& grads);
  int steps_taken() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<double> m_, v_;
};

// Adam on all-position cross-entropy over shuffled minibatches. When
// cfg.policy is present every batch example passes through
// apply_mask_policy with fresh randomness (dynamic, re-drawn each time the
// example is visited); targets are never altered. cs may be null unless
// the policy mixes confusion corruption (q < 1).
TrainTrace train_csc(MlmModel& model,
                     const std::vector<ParallelExample>& parallel,
                     const Vocab& vocab, const ConfusionSet* cs,
                     const TrainConfig& cfg, const EvalFn& eval = {});

// Sequential train_csc runs; stage 2 starts from stage-1 parameters.
std::pair<TrainTrace, TrainTrace> train_two_stage(
    MlmModel& model, const std::vector<ParallelExample>& stage1,
    const std::vector<ParallelExample>& stage2, const Vocab& vocab,
    const ConfusionSet* cs, const TrainConfig& cfg1, const TrainConfig& cfg2,
    const EvalFn& eval = {});

// Per step: CSC loss on a parallel batch plus mlm_weight times the MLM
// loss on a monolingual batch masked at 20% with MASK; one joint update.
// At mlm_weight = 0 the loss sequence equals train_csc exactly.
TrainTrace train_transfer(MlmModel& model,
                          const std::vector<ParallelExample>& parallel,
                          const std::vector<Sentence>& monolingual,
                          const Vocab& vocab, const ConfusionSet* cs,
                          const TrainConfig& cfg, const EvalFn& eval = {});

// Masked-language-model training on clean text only; loss on corrupted
// positions. cfg.policy overrides the default scheme (20% MASK, any
// position); a mix_mask_probability below one substitutes confusables for
// some masks and then requires a confusion set.
TrainTrace train_mlm(MlmModel& model, const std::vector<Sentence>& monolingual,
                     const Vocab& vocab, const TrainConfig& cfg,
                     const ConfusionSet* cs = nullptr, const EvalFn& eval = {});

// One forward/backward on a single example, optionally corrupted by a
// policy first; no parameter update.
GradientRecord gradient_norm_probe(const MlmModel& model,
                                   const ParallelExample& example,
                                   const MaskPolicy* policy, const Vocab& vocab,
                                   const ConfusionSet* cs, Rng& rng);

}  // namespace csc
