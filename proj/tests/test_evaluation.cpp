#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "csc/corpus.hpp"
#include "csc/error.hpp"
#include "csc/evaluation.hpp"
#include "csc/mlm.hpp"
#include "csc/rng.hpp"
#include "csc/training.hpp"
#include "csc/vocab.hpp"
#include "oracles.hpp"

using namespace csc;

namespace {

Sentence sent(std::initializer_list<int> ids) {
  return Sentence(std::vector<int>(ids));
}

PredictionTriple triple(std::initializer_list<int> s,
                        std::initializer_list<int> p,
                        std::initializer_list<int> t) {
  return {sent(s), sent(p), sent(t)};
}

// Random triples biased so every interesting category (miss, fix,
// miscorrection, clean change) appears often.
PredictionSet random_prediction_set(Rng& rng) {
  PredictionSet preds;
  const std::size_t n = 1 + rng.uniform_index(6);
  for (std::size_t e = 0; e < n; ++e) {
    const int len = 1 + static_cast<int>(rng.uniform_index(6));
    PredictionTriple t;
    for (int i = 0; i < len; ++i) {
      const int src = static_cast<int>(rng.uniform_index(5));
      int tgt = src;
      if (rng.bernoulli(0.4)) tgt = static_cast<int>(rng.uniform_index(5));
      int pred;
      const double u = rng.uniform();
      if (u < 0.35) pred = src;
      else if (u < 0.7) pred = tgt;
      else pred = static_cast<int>(rng.uniform_index(5));
      t.source.ids.push_back(src);
      t.target.ids.push_back(tgt);
      t.predicted.ids.push_back(pred);
    }
    preds.push_back(std::move(t));
  }
  return preds;
}

bool counts_equal(const PoolCounts& a, long tp, long fp, long fn) {
  return a.tp == tp && a.fp == fp && a.fn == fn;
}

}  // namespace

TEST_SUITE("score") {
  TEST_CASE("perfect predictions give unit metrics at both levels") {
    PredictionSet preds;
    preds.push_back(triple({4, 5, 6}, {4, 7, 6}, {4, 7, 6}));
    preds.push_back(triple({5, 5}, {5, 5}, {5, 5}));
    for (EvalLevel level : {EvalLevel::Character, EvalLevel::Sentence}) {
      const EvalReport r = score(preds, level);
      CHECK(r.correction.precision == 1.0);
      CHECK(r.correction.recall == 1.0);
      CHECK(r.correction.f1 == 1.0);
      CHECK(r.detection.f1 == 1.0);
    }
  }

  TEST_CASE("echoing the source detects nothing") {
    PredictionSet preds;
    preds.push_back(triple({4, 5, 6}, {4, 5, 6}, {4, 7, 6}));
    preds.push_back(triple({5, 5}, {5, 5}, {5, 5}));
    for (EvalLevel level : {EvalLevel::Character, EvalLevel::Sentence}) {
      const EvalReport r = score(preds, level);
      CHECK(r.correction.recall == 0.0);
      CHECK(r.correction.f1 == 0.0);
      CHECK(r.detection.f1 == 0.0);
      CHECK(r.correction_counts.fp == 0);
    }
  }

  TEST_CASE("a wrong fix counts against precision and recall") {
    PredictionSet preds;
    preds.push_back(triple({4, 5, 6}, {4, 8, 6}, {4, 7, 6}));
    const EvalReport r = score(preds, EvalLevel::Character);
    CHECK(counts_equal(r.correction_counts, 0, 1, 1));
    CHECK(counts_equal(r.detection_counts, 1, 0, 0));
    CHECK(r.correction.f1 == 0.0);
    CHECK(r.detection.f1 == 1.0);
  }

  TEST_CASE("an altered clean position is a pure false positive") {
    PredictionSet preds;
    preds.push_back(triple({4, 5, 6}, {4, 5, 8}, {4, 7, 6}));
    const EvalReport r = score(preds, EvalLevel::Character);
    CHECK(counts_equal(r.correction_counts, 0, 1, 1));
    CHECK(counts_equal(r.detection_counts, 0, 1, 1));
  }

  TEST_CASE("sentence level demands an exact match") {
    PredictionSet preds;
    // Two errors, one fixed: detection set wrong, correction wrong.
    preds.push_back(triple({4, 5, 6}, {4, 7, 6}, {4, 7, 8}));
    const EvalReport r = score(preds, EvalLevel::Sentence);
    CHECK(counts_equal(r.correction_counts, 0, 1, 1));
    CHECK(counts_equal(r.detection_counts, 0, 1, 1));

    // Both errors changed but one wrongly: detection set right.
    PredictionSet preds2;
    preds2.push_back(triple({4, 5, 6}, {4, 7, 9}, {4, 7, 8}));
    const EvalReport r2 = score(preds2, EvalLevel::Sentence);
    CHECK(counts_equal(r2.detection_counts, 1, 0, 0));
    CHECK(counts_equal(r2.correction_counts, 0, 1, 1));
  }

  TEST_CASE("misaligned triples are rejected with their index") {
    PredictionSet preds;
    preds.push_back(triple({4, 5}, {4, 5}, {4, 5}));
    preds.push_back(triple({4, 5, 6}, {4, 5}, {4, 5, 6}));
    CHECK_THROWS_WITH_AS(score(preds, EvalLevel::Character),
                         doctest::Contains("index 1"), CscError);
  }

  TEST_CASE("agrees with the brute-force counter on random sets") {
    Rng rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
      const PredictionSet preds = random_prediction_set(rng);
      for (EvalLevel level : {EvalLevel::Character, EvalLevel::Sentence}) {
        const EvalReport r = score(preds, level);
        const testsupport::BruteCounts b =
            testsupport::brute_force_counts(preds, level);
        REQUIRE(r.detection_counts.tp == b.det_tp);
        REQUIRE(r.detection_counts.fp == b.det_fp);
        REQUIRE(r.detection_counts.fn == b.det_fn);
        REQUIRE(r.correction_counts.tp == b.cor_tp);
        REQUIRE(r.correction_counts.fp == b.cor_fp);
        REQUIRE(r.correction_counts.fn == b.cor_fn);
      }
    }
  }

  TEST_CASE("correction TP+FN equals the number of gold error positions") {
    Rng rng(77);
    for (int trial = 0; trial < 200; ++trial) {
      const PredictionSet preds = random_prediction_set(rng);
      long gold = 0;
      for (const auto& t : preds)
        for (int i = 0; i < t.source.size(); ++i)
          if (t.source[i] != t.target[i]) ++gold;
      const EvalReport r = score(preds, EvalLevel::Character);
      CHECK(r.correction_counts.tp + r.correction_counts.fn == gold);
    }
  }

  TEST_CASE("permutation invariance and count additivity") {
    Rng rng(5);
    PredictionSet a = random_prediction_set(rng);
    PredictionSet b = random_prediction_set(rng);
    PredictionSet shuffled = a;
    std::reverse(shuffled.begin(), shuffled.end());
    const EvalReport ra = score(a, EvalLevel::Character);
    const EvalReport rs = score(shuffled, EvalLevel::Character);
    CHECK(ra.correction_counts.tp == rs.correction_counts.tp);
    CHECK(ra.correction_counts.fp == rs.correction_counts.fp);
    CHECK(ra.correction_counts.fn == rs.correction_counts.fn);

    PredictionSet merged = a;
    merged.insert(merged.end(), b.begin(), b.end());
    const EvalReport rb = score(b, EvalLevel::Character);
    const EvalReport rm = score(merged, EvalLevel::Character);
    CHECK(rm.correction_counts.tp ==
          ra.correction_counts.tp + rb.correction_counts.tp);
    CHECK(rm.correction_counts.fp ==
          ra.correction_counts.fp + rb.correction_counts.fp);
    CHECK(rm.correction_counts.fn ==
          ra.correction_counts.fn + rb.correction_counts.fn);
    CHECK(rm.detection_counts.tp ==
          ra.detection_counts.tp + rb.detection_counts.tp);
  }
}

TEST_SUITE("score_split") {
  TEST_CASE("pools route examples by edit-pair novelty") {
    std::vector<ParallelExample> train;
    train.push_back({sent({4, 5}), sent({4, 6})});  // pair (5 -> 6) seen

    PredictionSet preds;
    preds.push_back(triple({7, 5}, {7, 6}, {7, 6}));  // INC, fixed
    preds.push_back(triple({4, 8}, {4, 8}, {4, 9}));  // EXC, missed
    preds.push_back(triple({4, 4}, {4, 4}, {4, 4}));  // CLEAN, untouched

    const EvalReport r = score_split(preds, train, EvalLevel::Character);
    CHECK(r.inc_examples == 1);
    CHECK(r.exc_examples == 1);
    CHECK(r.clean_examples == 1);
    REQUIRE(r.i_f1.has_value());
    REQUIRE(r.e_f1.has_value());
    CHECK(*r.i_f1 == 1.0);
    CHECK(*r.e_f1 == 0.0);
    CHECK(counts_equal(r.inc_counts, 1, 0, 0));
    CHECK(counts_equal(r.exc_counts, 0, 0, 1));
  }

  TEST_CASE("clean-sentence false positives land in both pools") {
    std::vector<ParallelExample> train;
    train.push_back({sent({4, 5}), sent({4, 6})});

    PredictionSet preds;
    preds.push_back(triple({7, 5}, {7, 6}, {7, 6}));  // INC
    preds.push_back(triple({4, 8}, {4, 9}, {4, 9}));  // EXC, fixed
    preds.push_back(triple({4, 4}, {4, 7}, {4, 4}));  // CLEAN, altered

    const EvalReport r = score_split(preds, train, EvalLevel::Character);
    CHECK(counts_equal(r.inc_counts, 1, 1, 0));
    CHECK(counts_equal(r.exc_counts, 1, 1, 0));
    // Pool FP totals may exceed the overall count: the clean FP is
    // deliberately double-counted, once per pool.
    CHECK(r.correction_counts.fp == 1);
  }

  TEST_CASE("an all-seen test set has no exclusive pool") {
    std::vector<ParallelExample> train;
    train.push_back({sent({4, 5}), sent({4, 6})});
    PredictionSet preds;
    preds.push_back(triple({7, 5}, {7, 6}, {7, 6}));
    const EvalReport r = score_split(preds, train, EvalLevel::Character);
    CHECK(r.i_f1.has_value());
    CHECK_FALSE(r.e_f1.has_value());
    CHECK(r.exc_examples == 0);
  }

  TEST_CASE("pooled TP and FN reproduce the overall totals") {
    Rng rng(31);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<ParallelExample> train;
      for (int i = 0; i < 3; ++i) {
        PredictionSet seeded = random_prediction_set(rng);
        for (auto& t : seeded) train.push_back({t.source, t.target});
      }
      const PredictionSet preds = random_prediction_set(rng);
      const EvalReport split = score_split(preds, train, EvalLevel::Character);
      const EvalReport whole = score(preds, EvalLevel::Character);
      CHECK(split.inc_counts.tp + split.exc_counts.tp ==
            whole.correction_counts.tp);
      CHECK(split.inc_counts.fn + split.exc_counts.fn ==
            whole.correction_counts.fn);
      CHECK(split.inc_examples + split.exc_examples + split.clean_examples ==
            preds.size());
    }
  }

  TEST_CASE("a memorizing lookup corrector scores zero on the EXC pool") {
    // The lookup applies every training edit unconditionally; by
    // construction it can never produce an unseen target token.
    std::vector<ParallelExample> train;
    train.push_back({sent({4, 5}), sent({4, 6})});
    train.push_back({sent({7, 8, 9}), sent({7, 10, 9})});

    std::set<std::pair<int, int>> lookup;
    for (const auto& ex : train)
      for (const auto& e : extract_edit_pairs(ex))
        lookup.insert({e.src, e.tgt});

    std::vector<ParallelExample> test;
    test.push_back({sent({9, 5}), sent({9, 6})});    // INC
    test.push_back({sent({4, 11}), sent({4, 12})});  // EXC (11 -> 12 unseen)
    test.push_back({sent({8, 4}), sent({10, 4})});   // INC (8 -> 10 seen)

    PredictionSet preds;
    for (const auto& ex : test) {
      Sentence pred = ex.source;
      for (auto& id : pred.ids)
        for (const auto& [s, t] : lookup)
          if (id == s) {
            id = t;
            break;
          }
      preds.push_back({ex.source, pred, ex.target});
    }
    const EvalReport r = score_split(preds, train, EvalLevel::Character);
    REQUIRE(r.i_f1.has_value());
    REQUIRE(r.e_f1.has_value());
    CHECK(*r.i_f1 == 1.0);
    CHECK(*r.e_f1 == 0.0);
  }
}

TEST_SUITE("report_document") {
  TEST_CASE("JSON keys are stable and null encodes not-applicable") {
    PredictionSet preds;
    preds.push_back(triple({4, 5}, {4, 6}, {4, 6}));
    EvalReport r = score(preds, EvalLevel::Character);
    r.dataset_id = "toy";
    r.checkpoint_id = "ckpt-1";
    const auto j = nlohmann::json::parse(r.to_json());
    CHECK(j["level"] == "character");
    CHECK(j["correction"]["f1"] == 1.0);
    CHECK(j["correction"]["tp"] == 1);
    CHECK(j["i_f1"].is_null());
    CHECK(j["e_f1"].is_null());
    CHECK(j["dataset_id"] == "toy");
    CHECK(j["checkpoint_id"] == "ckpt-1");
    CHECK(j.contains("detection"));
    CHECK(j.contains("clean_examples"));
  }

  TEST_CASE("save_report writes parseable JSON") {
    PredictionSet preds;
    preds.push_back(triple({4, 5}, {4, 6}, {4, 6}));
    const EvalReport r = score(preds, EvalLevel::Sentence);
    const std::string path = "/tmp/csc_eval_report.json";
    save_report(path, r);
    std::ifstream in(path);
    nlohmann::json j;
    in >> j;
    CHECK(j["level"] == "sentence");
    std::remove(path.c_str());
  }
}

TEST_SUITE("predictions_io") {
  TEST_CASE("round trip preserves triples") {
    const Vocab vocab = Vocab::make({"山", "水", "火", "口"});
    PredictionSet preds;
    preds.push_back(triple({4, 5, 6}, {4, 7, 6}, {4, 7, 6}));
    preds.push_back(triple({6, 6}, {6, 6}, {6, 5}));
    const std::string path = "/tmp/csc_eval_preds.tsv";
    save_predictions(path, preds, vocab);
    const PredictionSet back = load_predictions(path, vocab);
    REQUIRE(back.size() == 2);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      CHECK(back[i].source == preds[i].source);
      CHECK(back[i].predicted == preds[i].predicted);
      CHECK(back[i].target == preds[i].target);
    }
    std::remove(path.c_str());
  }

  TEST_CASE("malformed prediction files are rejected with line numbers") {
    const Vocab vocab = Vocab::make({"山", "水"});
    const std::string path = "/tmp/csc_eval_bad.tsv";
    auto attempt = [&](const char* text) {
      std::ofstream(path) << text;
      return load_predictions(path, vocab);
    };
    CHECK_THROWS_WITH_AS(attempt("山\t山\n"), doctest::Contains("line 1"),
                         CscError);
    CHECK_THROWS_WITH_AS(attempt("山\t山\t山\t山\n"),
                         doctest::Contains("line 1"), CscError);
    CHECK_THROWS_WITH_AS(attempt("山水\t山\t山水\n"),
                         doctest::Contains("line 1"), CscError);
    CHECK_THROWS_AS(attempt("missing\n"), CscError);
    std::remove(path.c_str());
  }
}

TEST_SUITE("model_predictions") {
  TEST_CASE("correct_sentence matches per-position predict") {
    const Vocab vocab = Vocab::make({"a", "b", "c", "d", "e", "f", "g", "h"});
    MlmConfig mc;
    mc.vocab_size = vocab.size();
    mc.dim = 8;
    mc.layers = 1;
    mc.heads = 2;
    mc.ff_dim = 16;
    mc.max_len = 8;
    mc.seed = 17;
    MlmModel model(mc);
    const Sentence x = sent({4, 9, 6, 11});
    const Sentence out = correct_sentence(model, x);
    REQUIRE(out.size() == x.size());
    for (int i = 0; i < x.size(); ++i) CHECK(out[i] == model.predict(x, i));
  }

  TEST_CASE("predict_all pairs model output with gold targets") {
    const Vocab vocab = Vocab::make({"a", "b", "c", "d"});
    MlmConfig mc;
    mc.vocab_size = vocab.size();
    mc.dim = 8;
    mc.layers = 1;
    mc.heads = 2;
    mc.ff_dim = 16;
    mc.max_len = 8;
    mc.seed = 17;
    MlmModel model(mc);
    std::vector<ParallelExample> test;
    test.push_back({sent({4, 5}), sent({4, 6})});
    const PredictionSet preds = predict_all(model, test);
    REQUIRE(preds.size() == 1);
    CHECK(preds[0].source == test[0].source);
    CHECK(preds[0].target == test[0].target);
    CHECK(preds[0].predicted == correct_sentence(model, test[0].source));
  }
}

TEST_SUITE("topk") {
  TEST_CASE("entries cover exactly the gold-error positions") {
    const Vocab vocab = Vocab::make({"a", "b", "c", "d", "e", "f"});
    MlmConfig mc;
    mc.vocab_size = vocab.size();
    mc.dim = 8;
    mc.layers = 1;
    mc.heads = 2;
    mc.ff_dim = 16;
    mc.max_len = 8;
    mc.seed = 23;
    MlmModel model(mc);

    std::vector<ParallelExample> examples;
    examples.push_back({sent({4, 5, 6}), sent({4, 7, 8})});  // errors at 1, 2
    examples.push_back({sent({5, 5}), sent({5, 5})});        // clean

    const TopkReport report = topk_report(model, examples, 3);
    REQUIRE(report.entries.size() == 2);
    CHECK(report.entries[0].position == 1);
    CHECK(report.entries[1].position == 2);
    for (const auto& e : report.entries) {
      REQUIRE(e.candidates.size() == 3);
      CHECK(e.candidates[0].prob >= e.candidates[1].prob);
      CHECK(e.candidates[1].prob >= e.candidates[2].prob);
    }
  }

  TEST_CASE("the top-1 candidate equals the model's prediction") {
    const Vocab vocab = Vocab::make({"a", "b", "c", "d", "e", "f"});
    MlmConfig mc;
    mc.vocab_size = vocab.size();
    mc.dim = 8;
    mc.layers = 1;
    mc.heads = 2;
    mc.ff_dim = 16;
    mc.max_len = 8;
    mc.seed = 29;
    MlmModel model(mc);
    std::vector<ParallelExample> examples;
    examples.push_back({sent({4, 5, 6}), sent({4, 8, 6})});
    const TopkReport report = topk_report(model, examples, 1);
    REQUIRE(report.entries.size() == 1);
    CHECK(report.entries[0].candidates[0].token ==
          model.predict(examples[0].source, 1));
  }

  TEST_CASE("flags identify source, target, and confusables") {
    const Vocab vocab = Vocab::make({"a", "b", "c", "d", "e", "f"});
    ConfusionSet cs = ConfusionSet::for_vocab(vocab);
    cs.add(5, ConfusionCategory::SamePron, {9});

    MlmConfig mc;
    mc.vocab_size = vocab.size();
    mc.dim = 8;
    mc.layers = 1;
    mc.heads = 2;
    mc.ff_dim = 16;
    mc.max_len = 8;
    mc.seed = 23;
    MlmModel model(mc);
    std::vector<ParallelExample> examples;
    examples.push_back({sent({4, 5, 6}), sent({4, 7, 6})});

    const TopkReport report =
        topk_report(model, examples, vocab.size(), &cs);
    REQUIRE(report.entries.size() == 1);
    bool saw_source = false, saw_target = false, saw_confusable = false;
    for (const auto& c : report.entries[0].candidates) {
      if (c.token == 5) {
        CHECK(c.is_source);
        saw_source = true;
      }
      if (c.token == 7) {
        CHECK(c.is_target);
        saw_target = true;
      }
      if (c.token == 9) {
        CHECK(c.is_confusable);
        saw_confusable = true;
      }
      if (c.token == 4) CHECK_FALSE(c.is_confusable);
    }
    CHECK(saw_source);
    CHECK(saw_target);
    CHECK(saw_confusable);
    CHECK(report.confusable_fraction() ==
          doctest::Approx(1.0 / vocab.size()));
  }

  TEST_CASE("formatted dump is deterministic and k >= 1 is enforced") {
    const Vocab vocab = Vocab::make({"a", "b", "c", "d", "e", "f"});
    MlmConfig mc;
    mc.vocab_size = vocab.size();
    mc.dim = 8;
    mc.layers = 1;
    mc.heads = 2;
    mc.ff_dim = 16;
    mc.max_len = 8;
    mc.seed = 23;
    MlmModel model(mc);
    std::vector<ParallelExample> examples;
    examples.push_back({sent({4, 5, 6}), sent({4, 7, 6})});
    const std::string a = topk_report(model, examples, 2).format(vocab);
    const std::string b = topk_report(model, examples, 2).format(vocab);
    CHECK(a == b);
    CHECK(a.find('\t') != std::string::npos);
    CHECK_THROWS_AS(topk_report(model, examples, 0), CscError);
  }
}
