#include "csc/evaluation.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "csc/error.hpp"

namespace csc {

namespace {

void check_alignment(const PredictionSet& predictions) {
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& t = predictions[i];
    if (t.predicted.size() != t.source.size() ||
        t.target.size() != t.source.size())
      throw CscError("misaligned prediction triple at index " +
                     std::to_string(i));
  }
}

struct TripleCounts {
  PoolCounts detection;
  PoolCounts correction;
};

TripleCounts count_character(const PredictionTriple& t) {
  TripleCounts c;
  for (int i = 0; i < t.source.size(); ++i) {
    const int src = t.source[i], pred = t.predicted[i], tgt = t.target[i];
    const bool gold = src != tgt;
    const bool changed = pred != src;
    if (gold && changed) ++c.detection.tp;
    if (!gold && changed) ++c.detection.fp;
    if (gold && !changed) ++c.detection.fn;
    if (gold && pred == tgt) ++c.correction.tp;
    if (pred != src && pred != tgt) ++c.correction.fp;
    if (gold && pred != tgt) ++c.correction.fn;
  }
  return c;
}

TripleCounts count_sentence(const PredictionTriple& t) {
  TripleCounts c;
  bool gold = false, set_match = true, changed_any = false;
  for (int i = 0; i < t.source.size(); ++i) {
    const bool g = t.source[i] != t.target[i];
    const bool ch = t.predicted[i] != t.source[i];
    gold = gold || g;
    changed_any = changed_any || ch;
    set_match = set_match && (g == ch);
  }
  const bool corrected = t.predicted == t.target;
  if (gold && set_match) ++c.detection.tp;
  if (changed_any && !set_match) ++c.detection.fp;
  if (gold && !set_match) ++c.detection.fn;
  if (gold && corrected) ++c.correction.tp;
  if (t.predicted != t.source && !corrected) ++c.correction.fp;
  if (gold && !corrected) ++c.correction.fn;
  return c;
}

TripleCounts count_triple(const PredictionTriple& t, EvalLevel level) {
  return level == EvalLevel::Character ? count_character(t)
                                       : count_sentence(t);
}

void accumulate(PoolCounts& into, const PoolCounts& c) {
  into.tp += c.tp;
  into.fp += c.fp;
  into.fn += c.fn;
}

bool has_gold_error(const PredictionTriple& t) {
  return t.source.ids != t.target.ids;
}

}  // namespace

std::string level_name(EvalLevel level) {
  return level == EvalLevel::Character ? "character" : "sentence";
}

Prf prf_from_counts(const PoolCounts& c) {
  Prf r;
  if (c.tp + c.fp > 0) r.precision = static_cast<double>(c.tp) / (c.tp + c.fp);
  if (c.tp + c.fn > 0) r.recall = static_cast<double>(c.tp) / (c.tp + c.fn);
  if (r.precision + r.recall > 0.0)
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

EvalReport score(const PredictionSet& predictions, EvalLevel level) {
  check_alignment(predictions);
  EvalReport report;
  report.level = level;
  for (const auto& t : predictions) {
    const TripleCounts c = count_triple(t, level);
    accumulate(report.detection_counts, c.detection);
    accumulate(report.correction_counts, c.correction);
  }
  report.detection = prf_from_counts(report.detection_counts);
  report.correction = prf_from_counts(report.correction_counts);
  return report;
}

EvalReport score_split(const PredictionSet& predictions,
                       const std::vector<ParallelExample>& train,
                       EvalLevel level) {
  EvalReport report = score(predictions, level);

  std::vector<ParallelExample> test(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i)
    test[i] = {predictions[i].source, predictions[i].target};
  const std::vector<SplitLabel> labels = inc_exc_split(train, test);

  bool inc_has_gold = false, exc_has_gold = false;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const TripleCounts c = count_triple(predictions[i], level);
    switch (labels[i]) {
      case SplitLabel::Inc:
        ++report.inc_examples;
        accumulate(report.inc_counts, c.correction);
        inc_has_gold = inc_has_gold || has_gold_error(predictions[i]);
        break;
      case SplitLabel::Exc:
        ++report.exc_examples;
        accumulate(report.exc_counts, c.correction);
        exc_has_gold = exc_has_gold || has_gold_error(predictions[i]);
        break;
      case SplitLabel::Clean:
        ++report.clean_examples;
        accumulate(report.inc_counts, c.correction);
        accumulate(report.exc_counts, c.correction);
        break;
    }
  }
  if (inc_has_gold) report.i_f1 = prf_from_counts(report.inc_counts).f1;
  if (exc_has_gold) report.e_f1 = prf_from_counts(report.exc_counts).f1;
  return report;
}

Sentence correct_sentence(const MlmModel& model, const Sentence& source) {
  const auto probs = model.forward(source);
  Sentence out;
  out.ids.resize(source.ids.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto& row = probs[i];
    // Strict > keeps the lowest id on ties, matching predict().
    int best = 0;
    for (std::size_t y = 1; y < row.size(); ++y)
      if (row[y] > row[best]) best = static_cast<int>(y);
    out.ids[i] = best;
  }
  return out;
}

PredictionSet predict_all(const MlmModel& model,
                          const std::vector<ParallelExample>& test) {
  PredictionSet preds;
  preds.reserve(test.size());
  for (const auto& ex : test)
    preds.push_back({ex.source, correct_sentence(model, ex.source), ex.target});
  return preds;
}

double TopkReport::confusable_fraction() const {
  std::size_t slots = 0, hits = 0;
  for (const auto& e : entries)
    for (const auto& c : e.candidates) {
      ++slots;
      if (c.is_confusable) ++hits;
    }
  return slots == 0 ? 0.0 : static_cast<double>(hits) / slots;
}

std::string TopkReport::format(const Vocab& vocab) const {
  std::ostringstream out;
  char prob[32];
  for (const auto& e : entries) {
    for (std::size_t r = 0; r < e.candidates.size(); ++r) {
      const auto& c = e.candidates[r];
      std::snprintf(prob, sizeof(prob), "%.6f", c.prob);
      std::string flags;
      if (c.is_source) flags += 's';
      if (c.is_target) flags += 't';
      if (c.is_confusable) flags += 'c';
      if (flags.empty()) flags = "-";
      out << e.example << '\t' << e.position << '\t'
          << vocab.token(e.source_token) << '\t' << vocab.token(e.target_token)
          << '\t' << (r + 1) << '\t' << vocab.token(c.token) << '\t' << prob
          << '\t' << flags << '\n';
    }
  }
  return out.str();
}

TopkReport topk_report(const MlmModel& model,
                       const std::vector<ParallelExample>& examples, int k,
                       const ConfusionSet* cs) {
  if (k < 1) throw CscError("topk_report requires k >= 1");
  TopkReport report;
  report.k = k;
  for (std::size_t n = 0; n < examples.size(); ++n) {
    const auto& ex = examples[n];
    if (ex.source.size() != ex.target.size())
      throw CscError("misaligned example at index " + std::to_string(n));
    for (int i = 0; i < ex.source.size(); ++i) {
      if (ex.source[i] == ex.target[i]) continue;
      TopkEntry entry;
      entry.example = n;
      entry.position = i;
      entry.source_token = ex.source[i];
      entry.target_token = ex.target[i];
      const auto top = model.predict_topk(ex.source, i, k);
      std::vector<int> confusables;
      if (cs)
        for (auto cat : {ConfusionCategory::SamePron, ConfusionCategory::SimPron,
                         ConfusionCategory::SimGlyph}) {
          const auto& lst = cs->list(ex.source[i], cat);
          confusables.insert(confusables.end(), lst.begin(), lst.end());
        }
      for (const auto& [token, prob] : top) {
        TopkCandidate cand;
        cand.token = token;
        cand.prob = prob;
        cand.is_source = token == ex.source[i];
        cand.is_target = token == ex.target[i];
        cand.is_confusable =
            std::find(confusables.begin(), confusables.end(), token) !=
            confusables.end();
        entry.candidates.push_back(cand);
      }
      report.entries.push_back(std::move(entry));
    }
  }
  return report;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["level"] = level_name(level);
  j["detection"] = {{"precision", detection.precision},
                    {"recall", detection.recall},
                    {"f1", detection.f1},
                    {"tp", detection_counts.tp},
                    {"fp", detection_counts.fp},
                    {"fn", detection_counts.fn}};
  j["correction"] = {{"precision", correction.precision},
                     {"recall", correction.recall},
                     {"f1", correction.f1},
                     {"tp", correction_counts.tp},
                     {"fp", correction_counts.fp},
                     {"fn", correction_counts.fn}};
  j["i_f1"] = i_f1 ? nlohmann::json(*i_f1) : nlohmann::json(nullptr);
  j["e_f1"] = e_f1 ? nlohmann::json(*e_f1) : nlohmann::json(nullptr);
  j["inc"] = {{"tp", inc_counts.tp},
              {"fp", inc_counts.fp},
              {"fn", inc_counts.fn},
              {"examples", inc_examples}};
  j["exc"] = {{"tp", exc_counts.tp},
              {"fp", exc_counts.fp},
              {"fn", exc_counts.fn},
              {"examples", exc_examples}};
  j["clean_examples"] = clean_examples;
  j["dataset_id"] = dataset_id;
  j["checkpoint_id"] = checkpoint_id;
  return j.dump(2);
}

PredictionSet load_predictions(const std::string& path, const Vocab& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CscError("cannot open predictions: " + path);
  PredictionSet preds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos ||
        line.find('\t', t2 + 1) != std::string::npos)
      throw CscError("line " + std::to_string(lineno) +
                     ": expected exactly three tab-separated fields");
    PredictionTriple t;
    t.source = tokenize(line.substr(0, t1), vocab);
    t.predicted = tokenize(line.substr(t1 + 1, t2 - t1 - 1), vocab);
    t.target = tokenize(line.substr(t2 + 1), vocab);
    if (t.predicted.size() != t.source.size() ||
        t.target.size() != t.source.size())
      throw CscError("line " + std::to_string(lineno) +
                     ": fields have different lengths");
    preds.push_back(std::move(t));
  }
  return preds;
}

void save_predictions(const std::string& path, const PredictionSet& preds,
                      const Vocab& vocab) {
  check_alignment(preds);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CscError("cannot write predictions: " + path);
  for (const auto& t : preds)
    out << detokenize(t.source, vocab) << '\t' << detokenize(t.predicted, vocab)
        << '\t' << detokenize(t.target, vocab) << '\n';
  if (!out) throw CscError("write failed: " + path);
}

void save_report(const std::string& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CscError("cannot write report: " + path);
  out << report.to_json() << '\n';
  if (!out) throw CscError("write failed: " + path);
}

}  // namespace csc
