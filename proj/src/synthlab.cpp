#include "csc/synthlab.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <unordered_map>
#include <utility>

#include "csc/error.hpp"

namespace csc {

namespace {

constexpr int kNumClasses = 4;
constexpr int kConfusableDegree = 3;

// Sequential CJK code points keep every synthetic token a single
// character, so corpora round-trip through the character-level TSV format.
std::string codepoint_token(int index) {
  const int cp = 0x4E00 + index;
  std::string s;
  s.push_back(static_cast<char>(0xE0 | (cp >> 12)));
  s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
  s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  return s;
}

std::vector<std::vector<int>> make_regular_graph(int nodes, Rng& rng) {
  if (nodes * kConfusableDegree % 2 != 0)
    throw CscError("confusable graph needs an even vocabulary size");
  for (int attempt = 0; attempt < 500; ++attempt) {
    std::vector<int> stubs;
    stubs.reserve(static_cast<std::size_t>(nodes) * kConfusableDegree);
    for (int v = 0; v < nodes; ++v)
      for (int k = 0; k < kConfusableDegree; ++k) stubs.push_back(v);
    shuffle(stubs, rng);
    std::set<std::pair<int, int>> edges;
    bool ok = true;
    for (std::size_t i = 0; i + 1 < stubs.size() && ok; i += 2) {
      const int a = std::min(stubs[i], stubs[i + 1]);
      const int b = std::max(stubs[i], stubs[i + 1]);
      if (a == b || !edges.insert({a, b}).second) ok = false;
    }
    if (!ok) continue;
    std::vector<std::vector<int>> neighbors(static_cast<std::size_t>(nodes));
    for (const auto& [a, b] : edges) {
      neighbors[static_cast<std::size_t>(a)].push_back(b);
      neighbors[static_cast<std::size_t>(b)].push_back(a);
    }
    for (auto& lst : neighbors) std::sort(lst.begin(), lst.end());
    return neighbors;
  }
  throw CscError("failed to build a 3-regular confusable graph");
}

ConfusionSet graph_to_confusions(const std::vector<std::vector<int>>& graph,
                                 const Vocab& vocab) {
  constexpr std::array<ConfusionCategory, 3> kCats = {
      ConfusionCategory::SamePron, ConfusionCategory::SimPron,
      ConfusionCategory::SimGlyph};
  ConfusionSet cs = ConfusionSet::for_vocab(vocab);
  const int base = 4;  // first ordinary id
  for (std::size_t node = 0; node < graph.size(); ++node)
    for (std::size_t k = 0; k < graph[node].size(); ++k)
      cs.add(base + static_cast<int>(node), kCats[k % 3],
             {base + graph[node][k]});
  return cs;
}

struct ZipfTable {
  std::vector<double> cumulative;
  double total = 0.0;
};

ZipfTable make_zipf(std::size_t size, double skew) {
  ZipfTable t;
  t.cumulative.reserve(size);
  for (std::size_t r = 0; r < size; ++r) {
    t.total += 1.0 / std::pow(static_cast<double>(r + 1), skew);
    t.cumulative.push_back(t.total);
  }
  return t;
}

std::size_t draw_zipf(const ZipfTable& t, Rng& rng) {
  const double u = rng.uniform() * t.total;
  const auto it =
      std::upper_bound(t.cumulative.begin(), t.cumulative.end(), u);
  return std::min<std::size_t>(
      static_cast<std::size_t>(it - t.cumulative.begin()),
      t.cumulative.size() - 1);
}

}  // namespace

void GrammarSpec::validate() const {
  if (vocab_size < 24 || vocab_size > 5000)
    throw CscError("vocab_size out of range");
  if (vocab_size % 2 != 0)
    throw CscError("vocab_size must be even (3-regular confusable graph)");
  if (num_templates < 1) throw CscError("num_templates must be positive");
  if (template_min_len < 1 || template_max_len < template_min_len)
    throw CscError("invalid template length range");
  if (num_domains < 1) throw CscError("num_domains must be positive");
  if (skew <= 0.0) throw CscError("skew must be positive");
  if (unk_rate < 0.0 || unk_rate >= 1.0)
    throw CscError("unk_rate must lie in [0, 1)");
  if (domain_exclusive_frac < 0.0 || domain_exclusive_frac > 1.0)
    throw CscError("domain_exclusive_frac must lie in [0, 1]");
  if (sentences_per_domain < 1)
    throw CscError("sentences_per_domain must be positive");
}

void ErrorSpec::validate() const {
  if (num_head_pairs < 1) throw CscError("num_head_pairs must be positive");
  if (num_tail_pairs < 0) throw CscError("num_tail_pairs must be non-negative");
  if (error_probability < 0.0 || error_probability > 1.0)
    throw CscError("error_probability must lie in [0, 1]");
  if (tail_mix < 0.0 || tail_mix > 1.0)
    throw CscError("tail_mix must lie in [0, 1]");
}

Language build_language(const GrammarSpec& g) {
  g.validate();
  Language lang;
  std::vector<std::string> ordinary;
  ordinary.reserve(static_cast<std::size_t>(g.vocab_size));
  for (int i = 0; i < g.vocab_size; ++i)
    ordinary.push_back(codepoint_token(i));
  lang.vocab = Vocab::make(ordinary);

  const Rng base(g.seed);
  Rng structure = base.derive(11);
  int cursor = 4;  // ids below 4 are reserved
  int remaining = g.vocab_size;
  while (remaining > 0) {
    int len;
    if (remaining <= 3) len = remaining;
    else if (remaining == 4) len = 2;
    else len = structure.bernoulli(0.5) ? 3 : 2;
    std::vector<int> word(static_cast<std::size_t>(len));
    for (int k = 0; k < len; ++k) word[static_cast<std::size_t>(k)] = cursor++;
    lang.words.push_back(std::move(word));
    remaining -= len;
  }

  lang.classes.resize(kNumClasses);
  for (std::size_t w = 0; w < lang.words.size(); ++w)
    lang.classes[w % kNumClasses].push_back(static_cast<int>(w));

  Rng templates = base.derive(12);
  for (int t = 0; t < g.num_templates; ++t) {
    const int len =
        g.template_min_len +
        static_cast<int>(templates.uniform_index(
            static_cast<std::size_t>(g.template_max_len - g.template_min_len + 1)));
    std::vector<int> slots(static_cast<std::size_t>(len));
    for (auto& slot : slots)
      slot = static_cast<int>(templates.uniform_index(kNumClasses));
    lang.templates.push_back(std::move(slots));
  }

  lang.domain_words.resize(static_cast<std::size_t>(g.num_domains));
  for (int d = 0; d < g.num_domains; ++d)
    lang.domain_words[static_cast<std::size_t>(d)].resize(kNumClasses);
  for (int c = 0; c < kNumClasses; ++c) {
    const auto& members = lang.classes[static_cast<std::size_t>(c)];
    const std::size_t exclusive = std::min(
        members.size(),
        static_cast<std::size_t>(g.domain_exclusive_frac *
                                     static_cast<double>(members.size()) +
                                 0.5));
    for (int d = 0; d < g.num_domains; ++d) {
      std::vector<int>& avail =
          lang.domain_words[static_cast<std::size_t>(d)][static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < members.size(); ++i) {
        const bool is_exclusive = i < exclusive;
        if (!is_exclusive || static_cast<int>(i) % g.num_domains == d)
          avail.push_back(members[i]);
      }
      if (avail.empty())
        throw CscError("a domain has no words in some class; lower "
                       "domain_exclusive_frac");
      Rng perm = base.derive(1000 + static_cast<std::uint64_t>(d) * 64 +
                             static_cast<std::uint64_t>(c));
      shuffle(avail, perm);
    }
  }
  return lang;
}

std::vector<std::vector<Sentence>> generate_corpus(const Language& lang,
                                                   const GrammarSpec& g) {
  g.validate();
  std::vector<std::vector<Sentence>> corpus(
      static_cast<std::size_t>(g.num_domains));
  const Rng base(g.seed);
  for (int d = 0; d < g.num_domains; ++d) {
    std::vector<ZipfTable> tables(kNumClasses);
    for (int c = 0; c < kNumClasses; ++c)
      tables[static_cast<std::size_t>(c)] = make_zipf(
          lang.domain_words[static_cast<std::size_t>(d)]
                           [static_cast<std::size_t>(c)].size(),
          g.skew);
    Rng gen = base.derive(3000 + static_cast<std::uint64_t>(d));
    auto& out = corpus[static_cast<std::size_t>(d)];
    out.reserve(static_cast<std::size_t>(g.sentences_per_domain));
    for (int s = 0; s < g.sentences_per_domain; ++s) {
      const auto& tpl =
          lang.templates[gen.uniform_index(lang.templates.size())];
      Sentence sentence;
      for (int cls : tpl) {
        const std::size_t rank =
            draw_zipf(tables[static_cast<std::size_t>(cls)], gen);
        const int word_idx = lang.domain_words[static_cast<std::size_t>(d)]
                                              [static_cast<std::size_t>(cls)][rank];
        for (int id : lang.words[static_cast<std::size_t>(word_idx)]) {
          const int emitted =
              (g.unk_rate > 0.0 && gen.bernoulli(g.unk_rate))
                  ? lang.vocab.unk_id
                  : id;
          sentence.ids.push_back(emitted);
        }
      }
      out.push_back(std::move(sentence));
    }
  }
  return corpus;
}

std::vector<std::vector<Sentence>> generate_corpus(const GrammarSpec& g) {
  return generate_corpus(build_language(g), g);
}

ErrorChannel build_error_channel(const Language& lang, const ErrorSpec& e,
                                 const std::vector<Sentence>& frequency_ref) {
  e.validate();
  const int n = lang.vocab.size() - 4;
  Rng graph_rng = Rng(e.graph_seed).derive(21);
  const auto graph = make_regular_graph(n, graph_rng);

  ErrorChannel channel{{}, {}, graph_to_confusions(graph, lang.vocab)};

  std::vector<long> freq(static_cast<std::size_t>(lang.vocab.size()), 0);
  for (const auto& s : frequency_ref)
    for (int id : s.ids) {
      if (id < 0 || id >= lang.vocab.size())
        throw CscError("token id out of range");
      ++freq[static_cast<std::size_t>(id)];
    }

  // Directed graph edges ranked by the right token's corpus frequency:
  // frequent rights give many injectable positions. Each token is the wrong
  // side of at most one pair and the right side of at most one pair, so no
  // two pairs describe the same mapping and the head/tail pools differ only
  // in whether their pair was trained.
  struct Candidate {
    int wrong, right;
    long wrong_freq, right_freq;
  };
  std::vector<Candidate> candidates;
  for (int node = 0; node < n; ++node)
    for (int nb : graph[static_cast<std::size_t>(node)]) {
      const int wrong = 4 + node, right = 4 + nb;
      candidates.push_back({wrong, right,
                            freq[static_cast<std::size_t>(wrong)],
                            freq[static_cast<std::size_t>(right)]});
    }
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& a, const Candidate& b) {
              if (a.right_freq != b.right_freq) return a.right_freq > b.right_freq;
              if (a.right != b.right) return a.right < b.right;
              return a.wrong < b.wrong;
            });

  const std::size_t need =
      static_cast<std::size_t>(e.num_head_pairs + e.num_tail_pairs);
  std::set<int> used_wrong, used_right;
  std::vector<EditPairKey> picked;
  for (const auto& c : candidates) {
    if (picked.size() == need) break;
    if (c.right_freq == 0) break;  // uninjectable
    if (c.wrong_freq == 0) continue;  // wrong token must exist in the corpus
    if (used_wrong.count(c.wrong) || used_right.count(c.right)) continue;
    used_wrong.insert(c.wrong);
    used_right.insert(c.right);
    picked.push_back({c.wrong, c.right});
  }
  if (picked.size() < need)
    throw CscError("only " + std::to_string(picked.size()) +
                   " usable error pairs, need " + std::to_string(need));

  // Alternate assignment so head and tail cover the same frequency strata.
  bool head_turn = true;
  for (const auto& pair : picked) {
    const bool head_full =
        channel.head_pairs.size() == static_cast<std::size_t>(e.num_head_pairs);
    const bool tail_full =
        channel.tail_pairs.size() == static_cast<std::size_t>(e.num_tail_pairs);
    if ((head_turn && !head_full) || tail_full)
      channel.head_pairs.push_back(pair);
    else
      channel.tail_pairs.push_back(pair);
    head_turn = !head_turn;
  }
  return channel;
}

ConfusionSet build_synthetic_confusions(const Language& lang,
                                        std::uint64_t seed) {
  Rng rng = Rng(seed).derive(22);
  const auto graph = make_regular_graph(lang.vocab.size() - 4, rng);
  return graph_to_confusions(graph, lang.vocab);
}

std::vector<ParallelExample> inject_errors(const std::vector<Sentence>& corpus,
                                           const ErrorChannel& channel,
                                           const ErrorSpec& e,
                                           CorpusSplit split, Rng& rng,
                                           InjectStats* stats) {
  e.validate();
  std::unordered_map<int, int> head_by_right, tail_by_right;
  for (const auto& [wrong, right] : channel.head_pairs)
    head_by_right[right] = wrong;
  for (const auto& [wrong, right] : channel.tail_pairs)
    tail_by_right[right] = wrong;

  InjectStats local;
  std::vector<ParallelExample> out;
  out.reserve(corpus.size());
  std::vector<int> eligible;
  for (const auto& clean : corpus) {
    ParallelExample ex{clean, clean};
    if (!rng.bernoulli(e.error_probability)) {
      ++local.clean;
      out.push_back(std::move(ex));
      continue;
    }
    bool want_tail =
        split == CorpusSplit::Test && rng.bernoulli(e.tail_mix);
    const auto collect = [&](const std::unordered_map<int, int>& by_right) {
      eligible.clear();
      for (int i = 0; i < clean.size(); ++i)
        if (by_right.count(clean[i])) eligible.push_back(i);
    };
    collect(want_tail ? tail_by_right : head_by_right);
    if (eligible.empty() && split == CorpusSplit::Test) {
      want_tail = !want_tail;
      collect(want_tail ? tail_by_right : head_by_right);
      if (!eligible.empty()) ++local.type_fallbacks;
    }
    if (eligible.empty()) {
      ++local.forced_clean;
      out.push_back(std::move(ex));
      continue;
    }
    const int pos = eligible[rng.uniform_index(eligible.size())];
    const auto& by_right = want_tail ? tail_by_right : head_by_right;
    ex.source.ids[static_cast<std::size_t>(pos)] = by_right.at(clean[pos]);
    if (want_tail) ++local.tail_errors;
    else ++local.head_errors;
    out.push_back(std::move(ex));
  }
  if (stats) *stats = local;
  return out;
}

std::vector<double> unigram_distribution(const std::vector<Sentence>& corpus,
                                         int vocab_size) {
  std::vector<double> dist(static_cast<std::size_t>(vocab_size), 0.0);
  double total = 0.0;
  for (const auto& s : corpus)
    for (int id : s.ids) {
      if (id < 0 || id >= vocab_size)
        throw CscError("token id out of range");
      dist[static_cast<std::size_t>(id)] += 1.0;
      total += 1.0;
    }
  if (total > 0.0)
    for (auto& p : dist) p /= total;
  return dist;
}

double js_divergence(const std::vector<double>& p,
                     const std::vector<double>& q) {
  if (p.size() != q.size())
    throw CscError("distribution sizes differ");
  auto kl_to_mid = [&](const std::vector<double>& a) {
    double kl = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i] <= 0.0) continue;
      const double m = 0.5 * (p[i] + q[i]);
      kl += a[i] * std::log(a[i] / m);
    }
    return kl;
  };
  return 0.5 * kl_to_mid(p) + 0.5 * kl_to_mid(q);
}

IncExcData make_incexc_preset(std::uint64_t seed) {
  IncExcData data;
  data.grammar.vocab_size = 150;
  data.grammar.num_templates = 6;
  data.grammar.template_min_len = 3;
  data.grammar.template_max_len = 5;
  data.grammar.num_domains = 1;
  data.grammar.skew = 1.0;
  data.grammar.unk_rate = 0.02;
  data.grammar.domain_exclusive_frac = 0.0;
  data.grammar.sentences_per_domain = 6500;
  data.grammar.seed = Rng(seed).derive(31).seed();
  data.errors.num_head_pairs = 40;
  data.errors.num_tail_pairs = 40;
  data.errors.error_probability = 0.85;
  data.errors.tail_mix = 0.5;
  data.errors.graph_seed = Rng(seed).derive(32).seed();

  data.language = build_language(data.grammar);
  const auto domains = generate_corpus(data.language, data.grammar);
  const auto& all = domains[0];
  const std::vector<Sentence> train_clean(all.begin(), all.begin() + 5000);
  const std::vector<Sentence> test_clean(all.begin() + 5000,
                                         all.begin() + 6000);
  data.mono.assign(all.begin() + 6000, all.end());
  data.channel = build_error_channel(data.language, data.errors, all);

  Rng train_rng = Rng(seed).derive(33);
  Rng test_rng = Rng(seed).derive(34);
  data.train = inject_errors(train_clean, data.channel, data.errors,
                             CorpusSplit::Train, train_rng);
  data.test = inject_errors(test_clean, data.channel, data.errors,
                            CorpusSplit::Test, test_rng);

  // Pretraining corpus: same language, fresh draws. The corruption set used
  // on it is generated independently of the channel graph, so pretraining
  // never peeks at the test-time error distribution.
  GrammarSpec pg = data.grammar;
  pg.sentences_per_domain = 8000;
  pg.seed = Rng(seed).derive(35).seed();
  data.pretrain = generate_corpus(data.language, pg)[0];
  data.synth_confusions =
      build_synthetic_confusions(data.language, Rng(seed).derive(36).seed());
  return data;
}

TransferData make_transfer_scenario(const GrammarSpec& g, const ErrorSpec& e) {
  g.validate();
  e.validate();
  if (g.num_domains < 2)
    throw CscError("transfer scenario requires at least two domains");
  constexpr int kMono = 500, kTest = 1000, kTrain = 5000;
  if (g.sentences_per_domain < kMono + kTest)
    throw CscError("sentences_per_domain must be at least 1500 for a "
                   "transfer scenario");

  TransferData data;
  data.grammar = g;
  data.errors = e;
  data.language = build_language(g);
  const auto domains = generate_corpus(data.language, g);
  const auto& a = domains[0];
  const auto& b = domains[1];

  std::vector<Sentence> combined = a;
  combined.insert(combined.end(), b.begin(), b.end());
  data.channel = build_error_channel(data.language, e, combined);
  data.synth_channel = build_synthetic_confusions(
      data.language, Rng(g.seed).derive(41).seed());

  const std::size_t train_count =
      std::min<std::size_t>(a.size(), static_cast<std::size_t>(kTrain));
  const std::vector<Sentence> a_train(a.begin(),
                                      a.begin() + static_cast<long>(train_count));
  data.target_mono.assign(b.begin(), b.begin() + kMono);
  const std::vector<Sentence> b_test(b.begin() + kMono,
                                     b.begin() + kMono + kTest);

  // Head pairs everywhere: transfer difficulty comes from the lexicon, not
  // from pair novelty, so the test split reuses the training pair set.
  Rng a_rng = Rng(g.seed).derive(42);
  Rng b_rng = Rng(g.seed).derive(43);
  data.source_parallel = inject_errors(a_train, data.channel, e,
                                       CorpusSplit::Train, a_rng);
  data.target_test =
      inject_errors(b_test, data.channel, e, CorpusSplit::Train, b_rng);
  return data;
}

TransferData make_transfer_preset(std::uint64_t seed) {
  GrammarSpec g;
  g.vocab_size = 150;
  g.num_templates = 6;
  g.template_min_len = 3;
  g.template_max_len = 5;
  g.num_domains = 2;
  g.skew = 1.0;
  g.unk_rate = 0.02;
  g.domain_exclusive_frac = 0.5;
  g.sentences_per_domain = 5000;
  g.seed = Rng(seed).derive(51).seed();
  ErrorSpec e;
  e.num_head_pairs = 60;
  e.num_tail_pairs = 0;
  e.error_probability = 0.85;
  e.tail_mix = 0.0;
  e.graph_seed = Rng(seed).derive(52).seed();
  return make_transfer_scenario(g, e);
}

}  // namespace csc
