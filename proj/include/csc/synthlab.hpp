#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "csc/corpus.hpp"
#include "csc/corruption.hpp"
#include "csc/rng.hpp"
#include "csc/vocab.hpp"

namespace csc {

// Synthetic micro-language: the vocabulary is partitioned into short
// multi-token words, words are grouped into slot classes, and sentences
// instantiate templates (sequences of slot classes). Every token belongs
// to exactly one word, so its in-word neighbors determine it uniquely;
// that is the context signal a corrector has to exploit.
struct GrammarSpec {
  int vocab_size = 150;   // ordinary tokens, excluding the reserved block
  int num_templates = 6;
  int template_min_len = 3;  // slots (words) per sentence
  int template_max_len = 5;
  int num_domains = 1;
  double skew = 1.0;  // Zipf exponent of per-domain word frequencies
  // Natural out-of-vocabulary rate: tokens independently replaced by UNK
  // in the clean text (both sides of a parallel pair).
  double unk_rate = 0.0;
  // Fraction of each class's words reserved for a single domain; the rest
  // are shared. Creates genuinely unseen target-domain lexicon.
  double domain_exclusive_frac = 0.0;
  int sentences_per_domain = 5000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ErrorSpec {
  int num_head_pairs = 40;  // pairs available to the training split
  int num_tail_pairs = 40;  // pairs reserved for the test split
  double error_probability = 0.85;  // per-sentence chance of one error
  double tail_mix = 0.5;            // test-split share drawn from tail pairs
  std::uint64_t graph_seed = 0;

  void validate() const;
};

// Deterministic product of a GrammarSpec.
struct Language {
  Vocab vocab;
  std::vector<std::vector<int>> words;    // token ids forming each word
  std::vector<std::vector<int>> classes;  // word indices per slot class
  std::vector<std::vector<int>> templates;  // class ids per slot
  // domain_words[d][c]: word indices usable by domain d in class c,
  // in that domain's frequency-rank order.
  std::vector<std::vector<std::vector<int>>> domain_words;
};

Language build_language(const GrammarSpec& g);

// One clean corpus per domain, drawn under each domain's skewed lexicon.
std::vector<std::vector<Sentence>> generate_corpus(const Language& lang,
                                                   const GrammarSpec& g);
std::vector<std::vector<Sentence>> generate_corpus(const GrammarSpec& g);

// Directed substitution pairs (wrong, right) picked from a random
// 3-regular confusable graph, ranked by corpus frequency of the right
// token and interleaved between head and tail so both sets cover similar
// frequency strata. All wrongs are distinct and all rights are distinct;
// head and tail are disjoint.
struct ErrorChannel {
  std::vector<EditPairKey> head_pairs;
  std::vector<EditPairKey> tail_pairs;
  ConfusionSet confusions;  // the full graph as per-token confusable lists
};

ErrorChannel build_error_channel(const Language& lang, const ErrorSpec& e,
                                 const std::vector<Sentence>& frequency_ref);

// A second, independently drawn confusable graph over the same
// vocabulary; the channel a synthesis baseline believes in, deliberately
// different from the true one.
ConfusionSet build_synthetic_confusions(const Language& lang,
                                        std::uint64_t seed);

enum class CorpusSplit { Train, Test };

struct InjectStats {
  std::size_t clean = 0;          // examples left error-free by the coin
  std::size_t head_errors = 0;
  std::size_t tail_errors = 0;
  std::size_t type_fallbacks = 0;  // desired pair type unavailable
  std::size_t forced_clean = 0;    // no pair of either type applicable
};

// Replaces one eligible token per positive sentence with its pair's wrong
// token. The train split draws from head pairs only; the test split mixes
// head (INC) and tail (EXC) pairs per e.tail_mix. A sentence without an
// eligible position for the drawn type falls back to the other type, then
// to clean.
std::vector<ParallelExample> inject_errors(const std::vector<Sentence>& corpus,
                                           const ErrorChannel& channel,
                                           const ErrorSpec& e,
                                           CorpusSplit split, Rng& rng,
                                           InjectStats* stats = nullptr);

// Unigram distribution over token ids, additively smoothed nowhere:
// plain counts normalized; tokens never seen get probability 0.
std::vector<double> unigram_distribution(const std::vector<Sentence>& corpus,
                                         int vocab_size);

// Jensen-Shannon divergence (natural log base) between two distributions.
double js_divergence(const std::vector<double>& p,
                     const std::vector<double>& q);

struct IncExcData {
  Language language;
  ErrorChannel channel;
  std::vector<ParallelExample> train;
  std::vector<ParallelExample> test;
  std::vector<Sentence> mono;      // clean text for language-model training
  std::vector<Sentence> pretrain;  // larger clean corpus for MLM pretraining
  ConfusionSet synth_confusions;   // channel-blind set for pretrain corruption
  GrammarSpec grammar;
  ErrorSpec errors;
};

// Single-domain scenario: 5,000 train / 1,000 test / 500 monolingual
// sentences, 40 head and 40 tail pairs, plus an 8,000-sentence clean
// pretraining corpus and a synthetic confusion set that does not depend on
// the true channel.
IncExcData make_incexc_preset(std::uint64_t seed);

struct TransferData {
  Language language;
  ErrorChannel channel;         // true channel; all injections use head pairs
  ConfusionSet synth_channel;   // what the synthesis baseline corrupts with
  std::vector<ParallelExample> source_parallel;  // domain A, annotated
  std::vector<Sentence> target_mono;             // domain B, clean only
  std::vector<ParallelExample> target_test;      // domain B, held out
  GrammarSpec grammar;
  ErrorSpec errors;
};

// Two-domain scenario built from one grammar: parallel data exists only
// in domain A; domain B contributes clean sentences and a disjoint
// annotated test set.
TransferData make_transfer_scenario(const GrammarSpec& g, const ErrorSpec& e);
TransferData make_transfer_preset(std::uint64_t seed);

}  // namespace csc
