#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "csc/corpus.hpp"
#include "csc/error.hpp"
#include "csc/rng.hpp"
#include "csc/synthlab.hpp"

using namespace csc;

namespace {

GrammarSpec small_grammar() {
  GrammarSpec g;
  g.vocab_size = 60;
  g.num_templates = 4;
  g.template_min_len = 3;
  g.template_max_len = 4;
  g.num_domains = 1;
  g.skew = 1.0;
  g.sentences_per_domain = 400;
  g.seed = 5;
  return g;
}

std::set<std::pair<int, int>> pair_set(const std::vector<EditPairKey>& pairs) {
  return {pairs.begin(), pairs.end()};
}

}  // namespace

TEST_SUITE("grammar") {
  TEST_CASE("spec validation") {
    GrammarSpec g = small_grammar();
    CHECK_NOTHROW(g.validate());
    g.vocab_size = 61;  // odd
    CHECK_THROWS_AS(g.validate(), CscError);
    g = small_grammar();
    g.skew = 0.0;
    CHECK_THROWS_AS(g.validate(), CscError);
    g = small_grammar();
    g.template_max_len = 2;  // below min
    CHECK_THROWS_AS(g.validate(), CscError);
    g = small_grammar();
    g.unk_rate = 1.0;
    CHECK_THROWS_AS(g.validate(), CscError);
    g = small_grammar();
    g.num_domains = 0;
    CHECK_THROWS_AS(g.validate(), CscError);
  }

  TEST_CASE("words partition the ordinary vocabulary into 2-3 token runs") {
    const Language lang = build_language(small_grammar());
    std::set<int> seen;
    for (const auto& w : lang.words) {
      CHECK(w.size() >= 2);
      CHECK(w.size() <= 3);
      for (int id : w) {
        CHECK(id >= 4);
        CHECK(seen.insert(id).second);  // no token in two words
      }
    }
    CHECK(seen.size() == 60);
    CHECK(*seen.rbegin() == 63);

    std::size_t classed = 0;
    for (const auto& c : lang.classes) classed += c.size();
    CHECK(classed == lang.words.size());
    CHECK(lang.templates.size() == 4);
    for (const auto& t : lang.templates) {
      CHECK(t.size() >= 3);
      CHECK(t.size() <= 4);
    }
  }

  TEST_CASE("same seed reproduces the corpus exactly") {
    const GrammarSpec g = small_grammar();
    const auto a = generate_corpus(g);
    const auto b = generate_corpus(g);
    REQUIRE(a.size() == 1);
    REQUIRE(a[0].size() == 400);
    CHECK(a == b);

    GrammarSpec other = g;
    other.seed = 6;
    CHECK(generate_corpus(other) != a);
  }

  TEST_CASE("sentences are valid natural text and template-shaped") {
    GrammarSpec g = small_grammar();
    g.unk_rate = 0.05;
    const Language lang = build_language(g);
    const auto corpus = generate_corpus(lang, g);
    CHECK_NOTHROW(validate_natural_corpus(corpus[0], lang.vocab));
    for (const auto& s : corpus[0]) {
      CHECK(s.size() >= 3 * 2);
      CHECK(s.size() <= 4 * 3);
    }
    // unk_rate > 0 actually produces UNK tokens
    long unks = 0, tokens = 0;
    for (const auto& s : corpus[0])
      for (int id : s.ids) {
        ++tokens;
        if (id == lang.vocab.unk_id) ++unks;
      }
    CHECK(unks > 0);
    CHECK(static_cast<double>(unks) / tokens < 0.12);
  }

  TEST_CASE("extreme skew collapses each class to a single word") {
    GrammarSpec g = small_grammar();
    g.skew = 50.0;
    const Language lang = build_language(g);
    const auto corpus = generate_corpus(lang, g);
    std::set<int> used;
    for (const auto& s : corpus[0])
      for (int id : s.ids) used.insert(id);
    // At most one word (up to 3 tokens) per class can ever be drawn.
    CHECK(used.size() <= 3 * 4);
  }

  TEST_CASE("domains differ more than same-domain halves") {
    GrammarSpec g = small_grammar();
    g.num_domains = 2;
    g.sentences_per_domain = 2000;
    g.skew = 1.2;
    const Language lang = build_language(g);
    const auto corpus = generate_corpus(lang, g);
    const int v = lang.vocab.size();
    const auto da = unigram_distribution(corpus[0], v);
    const auto db = unigram_distribution(corpus[1], v);
    const std::vector<Sentence> h1(corpus[0].begin(), corpus[0].begin() + 1000);
    const std::vector<Sentence> h2(corpus[0].begin() + 1000, corpus[0].end());
    const double cross = js_divergence(da, db);
    const double within =
        js_divergence(unigram_distribution(h1, v), unigram_distribution(h2, v));
    CHECK(cross > within);
  }
}

TEST_SUITE("error_channel") {
  TEST_CASE("pairs are disjoint, distinct, and drawn from the graph") {
    GrammarSpec g = small_grammar();
    ErrorSpec e;
    e.num_head_pairs = 10;
    e.num_tail_pairs = 10;
    e.graph_seed = 3;
    const Language lang = build_language(g);
    const auto corpus = generate_corpus(lang, g);
    const ErrorChannel ch = build_error_channel(lang, e, corpus[0]);

    REQUIRE(ch.head_pairs.size() == 10);
    REQUIRE(ch.tail_pairs.size() == 10);
    auto heads = pair_set(ch.head_pairs);
    auto tails = pair_set(ch.tail_pairs);
    CHECK(heads.size() == 10);
    CHECK(tails.size() == 10);
    for (const auto& p : tails) CHECK(heads.count(p) == 0);

    // Wrongs are globally unique and rights are globally unique: no two
    // pairs describe the same mapping and no right hosts two error types.
    std::set<int> wrongs, rights;
    std::vector<EditPairKey> all = ch.head_pairs;
    all.insert(all.end(), ch.tail_pairs.begin(), ch.tail_pairs.end());
    for (const auto& [wrong, right] : all) {
      CHECK(wrongs.insert(wrong).second);
      CHECK(rights.insert(right).second);
      // wrong must be a listed confusable of right: graph edges are
      // symmetric and every node's neighbors are spread over the three
      // categories.
      bool adjacent = false;
      for (auto cat : {ConfusionCategory::SamePron, ConfusionCategory::SimPron,
                       ConfusionCategory::SimGlyph}) {
        const auto& lst = ch.confusions.list(right, cat);
        adjacent = adjacent ||
                   std::find(lst.begin(), lst.end(), wrong) != lst.end();
      }
      CHECK(adjacent);
    }
  }

  TEST_CASE("every ordinary token carries exactly three confusables") {
    const Language lang = build_language(small_grammar());
    const ConfusionSet cs = build_synthetic_confusions(lang, 9);
    for (int id = 4; id < lang.vocab.size(); ++id) {
      std::size_t total = 0;
      for (auto cat : {ConfusionCategory::SamePron, ConfusionCategory::SimPron,
                       ConfusionCategory::SimGlyph})
        total += cs.list(id, cat).size();
      CHECK(total == 3);
    }
  }

  TEST_CASE("channel construction is deterministic in the graph seed") {
    const Language lang = build_language(small_grammar());
    const auto corpus = generate_corpus(lang, small_grammar());
    ErrorSpec e;
    e.num_head_pairs = 8;
    e.num_tail_pairs = 8;
    e.graph_seed = 3;
    const ErrorChannel a = build_error_channel(lang, e, corpus[0]);
    const ErrorChannel b = build_error_channel(lang, e, corpus[0]);
    CHECK(a.head_pairs == b.head_pairs);
    CHECK(a.tail_pairs == b.tail_pairs);
    e.graph_seed = 4;
    const ErrorChannel c = build_error_channel(lang, e, corpus[0]);
    CHECK(a.head_pairs != c.head_pairs);
  }
}

TEST_SUITE("injection") {
  TEST_CASE("zero error probability leaves everything clean") {
    const GrammarSpec g = small_grammar();
    const Language lang = build_language(g);
    const auto corpus = generate_corpus(lang, g);
    ErrorSpec e;
    e.num_head_pairs = 10;
    e.num_tail_pairs = 10;
    e.error_probability = 0.0;
    const ErrorChannel ch = build_error_channel(lang, e, corpus[0]);
    Rng rng(1);
    InjectStats stats;
    const auto data =
        inject_errors(corpus[0], ch, e, CorpusSplit::Train, rng, &stats);
    REQUIRE(data.size() == corpus[0].size());
    for (const auto& ex : data) CHECK(ex.source == ex.target);
    CHECK(stats.clean == data.size());
    CHECK(stats.head_errors == 0);
  }

  TEST_CASE("positive examples differ in exactly one position") {
    const GrammarSpec g = small_grammar();
    const Language lang = build_language(g);
    const auto corpus = generate_corpus(lang, g);
    ErrorSpec e;
    e.num_head_pairs = 10;
    e.num_tail_pairs = 10;
    e.error_probability = 1.0;
    const ErrorChannel ch = build_error_channel(lang, e, corpus[0]);
    Rng rng(1);
    const auto data =
        inject_errors(corpus[0], ch, e, CorpusSplit::Train, rng);
    CHECK_NOTHROW(validate_natural_corpus(data, lang.vocab));
    std::size_t positives = 0;
    for (const auto& ex : data) {
      const auto edits = extract_edit_pairs(ex);
      CHECK(edits.size() <= 1);
      positives += edits.empty() ? 0 : 1;
    }
    CHECK(positives > corpus[0].size() * 8 / 10);
  }

  TEST_CASE("the train split never touches tail pairs") {
    const GrammarSpec g = small_grammar();
    const Language lang = build_language(g);
    const auto corpus = generate_corpus(lang, g);
    ErrorSpec e;
    e.num_head_pairs = 10;
    e.num_tail_pairs = 10;
    e.error_probability = 1.0;
    const ErrorChannel ch = build_error_channel(lang, e, corpus[0]);
    const auto heads = pair_set(ch.head_pairs);
    const auto tails = pair_set(ch.tail_pairs);
    Rng rng(2);
    const auto data =
        inject_errors(corpus[0], ch, e, CorpusSplit::Train, rng);
    for (const auto& ex : data)
      for (const auto& edit : extract_edit_pairs(ex)) {
        const std::pair<int, int> key{edit.src, edit.tgt};
        CHECK(heads.count(key) == 1);
        CHECK(tails.count(key) == 0);
      }
  }

  TEST_CASE("hand-built channel substitutes the exact pair token") {
    // word-free corpus assembled by hand; pair (wrong=5, right=6)
    ErrorChannel ch;
    ch.head_pairs.push_back({5, 6});
    ErrorSpec e;
    e.num_head_pairs = 1;
    e.num_tail_pairs = 0;
    e.error_probability = 1.0;
    std::vector<Sentence> corpus;
    corpus.push_back(Sentence({4, 6, 7}));
    corpus.push_back(Sentence({4, 7, 7}));  // no eligible position
    Rng rng(3);
    InjectStats stats;
    const auto data =
        inject_errors(corpus, ch, e, CorpusSplit::Train, rng, &stats);
    CHECK(data[0].source == Sentence({4, 5, 7}));
    CHECK(data[0].target == Sentence({4, 6, 7}));
    CHECK(data[1].source == data[1].target);
    CHECK(stats.head_errors == 1);
    CHECK(stats.forced_clean == 1);
  }
}

TEST_SUITE("incexc_preset") {
  TEST_CASE("preset matches the advertised shape and is deterministic") {
    const IncExcData data = make_incexc_preset(1);
    CHECK(data.train.size() == 5000);
    CHECK(data.test.size() == 1000);
    CHECK(data.mono.size() == 500);
    CHECK(data.channel.head_pairs.size() == 40);
    CHECK(data.channel.tail_pairs.size() == 40);
    CHECK_NOTHROW(validate_natural_corpus(data.train, data.language.vocab));
    CHECK_NOTHROW(validate_natural_corpus(data.test, data.language.vocab));

    const IncExcData again = make_incexc_preset(1);
    CHECK(again.train.size() == data.train.size());
    for (std::size_t i = 0; i < 50; ++i) {
      CHECK(again.train[i].source == data.train[i].source);
      CHECK(again.train[i].target == data.train[i].target);
    }
    const IncExcData other = make_incexc_preset(2);
    bool any_difference = false;
    for (std::size_t i = 0; i < data.train.size(); ++i)
      if (other.train[i].source != data.train[i].source) {
        any_difference = true;
        break;
      }
    CHECK(any_difference);
  }

  TEST_CASE("about half the positive test examples are exclusive") {
    const IncExcData data = make_incexc_preset(1);
    const auto labels = inc_exc_split(data.train, data.test);
    long inc = 0, exc = 0, clean = 0;
    for (const auto label : labels) {
      if (label == SplitLabel::Inc) ++inc;
      else if (label == SplitLabel::Exc) ++exc;
      else ++clean;
    }
    const long positives = inc + exc;
    CHECK(positives > 700);
    const double sigma = std::sqrt(positives * 0.25);
    CHECK(std::abs(exc - positives / 2.0) <= 3.0 * sigma);
  }

  TEST_CASE("train edit pairs cover only head pairs") {
    const IncExcData data = make_incexc_preset(1);
    const auto heads = pair_set(data.channel.head_pairs);
    const auto tails = pair_set(data.channel.tail_pairs);
    std::set<std::pair<int, int>> seen;
    for (const auto& ex : data.train)
      for (const auto& edit : extract_edit_pairs(ex))
        seen.insert({edit.src, edit.tgt});
    for (const auto& key : seen) {
      CHECK(heads.count(key) == 1);
      CHECK(tails.count(key) == 0);
    }
    // Nearly every head pair should actually occur in 5,000 examples.
    CHECK(seen.size() >= 38);
  }
}

TEST_SUITE("transfer") {
  TEST_CASE("scenario shape, disjointness, and lexical coverage") {
    const TransferData data = make_transfer_preset(7);
    CHECK(data.source_parallel.size() == 5000);
    CHECK(data.target_mono.size() == 500);
    CHECK(data.target_test.size() == 1000);

    // target mono and target test come from disjoint slices of domain B:
    // regenerate the corpus and match the slices exactly. Sentence strings
    // may still coincide across slices in a skewed language.
    const auto domains = generate_corpus(data.language, data.grammar);
    const auto& b = domains[1];
    for (std::size_t i = 0; i < data.target_mono.size(); ++i)
      REQUIRE(data.target_mono[i] == b[i]);
    for (std::size_t i = 0; i < data.target_test.size(); ++i)
      REQUIRE(data.target_test[i].target == b[500 + i]);

    // B-test tokens are covered far better by B-mono than by A-train
    std::set<int> a_tokens, b_mono_tokens;
    for (const auto& ex : data.source_parallel)
      for (int id : ex.target.ids) a_tokens.insert(id);
    for (const auto& s : data.target_mono)
      for (int id : s.ids) b_mono_tokens.insert(id);
    long covered_by_a = 0, covered_by_mono = 0, total = 0;
    for (const auto& ex : data.target_test)
      for (int id : ex.target.ids) {
        ++total;
        if (a_tokens.count(id)) ++covered_by_a;
        if (b_mono_tokens.count(id)) ++covered_by_mono;
      }
    CHECK(covered_by_mono > covered_by_a);
    CHECK(static_cast<double>(covered_by_a) / total < 0.9);
  }

  TEST_CASE("all transfer errors use head pairs in both domains") {
    const TransferData data = make_transfer_preset(7);
    const auto heads = pair_set(data.channel.head_pairs);
    CHECK(data.channel.tail_pairs.empty());
    std::size_t positives = 0;
    for (const auto* split : {&data.source_parallel, &data.target_test})
      for (const auto& ex : *split)
        for (const auto& edit : extract_edit_pairs(ex)) {
          ++positives;
          CHECK(heads.count({edit.src, edit.tgt}) == 1);
        }
    CHECK(positives > 4000);
  }

  TEST_CASE("a single-domain grammar cannot make a transfer scenario") {
    GrammarSpec g = small_grammar();
    ErrorSpec e;
    CHECK_THROWS_AS(make_transfer_scenario(g, e), CscError);
    g.num_domains = 2;
    g.sentences_per_domain = 100;  // too small
    CHECK_THROWS_AS(make_transfer_scenario(g, e), CscError);
  }

  TEST_CASE("synthetic confusions differ from the true channel") {
    const TransferData data = make_transfer_preset(7);
    long differing = 0, checked = 0;
    for (int id = 4; id < data.language.vocab.size(); ++id)
      for (auto cat : {ConfusionCategory::SamePron, ConfusionCategory::SimPron,
                       ConfusionCategory::SimGlyph}) {
        ++checked;
        if (data.channel.confusions.list(id, cat) !=
            data.synth_channel.list(id, cat))
          ++differing;
      }
    CHECK(differing > checked / 2);
  }
}
