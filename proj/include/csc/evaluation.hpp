#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "csc/corpus.hpp"
#include "csc/corruption.hpp"
#include "csc/mlm.hpp"
#include "csc/vocab.hpp"

namespace csc {

enum class EvalLevel { Sentence, Character };

std::string level_name(EvalLevel level);

struct PoolCounts {
  long tp = 0;
  long fp = 0;
  long fn = 0;
};

// P = TP/(TP+FP), R = TP/(TP+FN), F1 = 2PR/(P+R); each is 0 when its
// denominator is 0.
struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

Prf prf_from_counts(const PoolCounts& c);

struct PredictionTriple {
  Sentence source;
  Sentence predicted;
  Sentence target;
};

using PredictionSet = std::vector<PredictionTriple>;

struct EvalReport {
  EvalLevel level = EvalLevel::Character;

  PoolCounts detection_counts;
  PoolCounts correction_counts;
  Prf detection;
  Prf correction;

  // Filled by score_split only. A pool with no gold-positive member
  // yields no F1 (not-applicable), never a fabricated 0.
  std::optional<double> i_f1;
  std::optional<double> e_f1;
  PoolCounts inc_counts;  // correction-level, INC + CLEAN examples
  PoolCounts exc_counts;  // correction-level, EXC + CLEAN examples
  std::size_t inc_examples = 0;
  std::size_t exc_examples = 0;
  std::size_t clean_examples = 0;

  std::string dataset_id;
  std::string checkpoint_id;

  // Flat JSON document with stable keys.
  std::string to_json() const;
};

// Counts over aligned (source, predicted, target) triples.
//
// Character level, per position: detection counts a changed position
// (predicted != source) as TP on a gold error and FP on a clean position,
// and an unchanged gold error as FN. Correction counts predicted == target
// on a gold error as TP, any prediction that differs from both source and
// target as FP, and a gold error left wrong as FN (so a wrong fix is both
// FP and FN, and correction TP+FN always equals the gold error count).
//
// Sentence level applies the same scheme with whole sentences: detection
// compares the changed-position set against the gold-error set, correction
// compares the predicted sentence against the target.
EvalReport score(const PredictionSet& predictions, EvalLevel level);

// score plus I-F1/E-F1: test examples are pooled by inc_exc_split against
// the edit pairs seen in `train`; each pool is scored at correction level
// together with the CLEAN examples (clean sentences offer false-positive
// opportunities to both pools). i_f1/e_f1 are the pools' correction F1.
EvalReport score_split(const PredictionSet& predictions,
                       const std::vector<ParallelExample>& train,
                       EvalLevel level);

// Argmax correction at every position from a single forward pass.
Sentence correct_sentence(const MlmModel& model, const Sentence& source);

// Applies correct_sentence to every source in `test`.
PredictionSet predict_all(const MlmModel& model,
                          const std::vector<ParallelExample>& test);

struct TopkCandidate {
  int token = 0;
  double prob = 0.0;
  bool is_source = false;
  bool is_target = false;
  bool is_confusable = false;  // in cs->list(source_token); false without cs
};

struct TopkEntry {
  std::size_t example = 0;
  int position = 0;
  int source_token = 0;
  int target_token = 0;
  std::vector<TopkCandidate> candidates;  // descending probability
};

struct TopkReport {
  int k = 0;
  std::vector<TopkEntry> entries;  // one per gold-error position

  // Fraction of all candidate slots flagged is_confusable.
  double confusable_fraction() const;
  // One line per candidate, tab-separated, flags as letters (s/t/c).
  std::string format(const Vocab& vocab) const;
};

// Model top-k at each gold-error position of each example; cs (optional)
// marks candidates that are training-channel confusables of the source
// token.
TopkReport topk_report(const MlmModel& model,
                       const std::vector<ParallelExample>& examples, int k,
                       const ConfusionSet* cs = nullptr);

// Predictions file: one `source<TAB>predicted<TAB>target` line per triple.
PredictionSet load_predictions(const std::string& path, const Vocab& vocab);
void save_predictions(const std::string& path, const PredictionSet& preds,
                      const Vocab& vocab);

void save_report(const std::string& path, const EvalReport& report);

}  // namespace csc
