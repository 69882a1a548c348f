#include "csc/corruption.hpp"

#include <cstdio>
#include <fstream>

#include "csc/error.hpp"

namespace csc {

namespace {

const char* category_name(ConfusionCategory c) {
  switch (c) {
    case ConfusionCategory::SamePron: return "same_pron";
    case ConfusionCategory::SimPron: return "sim_pron";
    case ConfusionCategory::SimGlyph: return "sim_glyph";
  }
  throw CscError("invalid confusion category");
}

ConfusionCategory category_from_name(const std::string& name) {
  if (name == "same_pron") return ConfusionCategory::SamePron;
  if (name == "sim_pron") return ConfusionCategory::SimPron;
  if (name == "sim_glyph") return ConfusionCategory::SimGlyph;
  throw CscError("unknown confusion category: " + name);
}

constexpr std::array<ConfusionCategory, 3> kCategories = {
    ConfusionCategory::SamePron, ConfusionCategory::SimPron,
    ConfusionCategory::SimGlyph};

}  // namespace

ConfusionSet::ConfusionSet(int vocab_size,
                           const std::vector<int>& random_pool_exclusions)
    : vocab_size_(vocab_size),
      excluded_(static_cast<std::size_t>(vocab_size), 0) {
  if (vocab_size < 1) throw CscError("vocab_size must be positive");
  for (int id : random_pool_exclusions) {
    if (id < 0 || id >= vocab_size)
      throw CscError("random-pool exclusion out of vocabulary range");
    if (!excluded_[static_cast<std::size_t>(id)]) {
      excluded_[static_cast<std::size_t>(id)] = 1;
      ++excluded_count_;
    }
  }
}

ConfusionSet ConfusionSet::for_vocab(const Vocab& vocab) {
  return ConfusionSet(vocab.size(), {vocab.pad_id, vocab.unk_id, vocab.mask_id,
                                     vocab.unused_id});
}

void ConfusionSet::add(int token, ConfusionCategory category,
                       const std::vector<int>& confusables) {
  if (token < 0 || token >= vocab_size_)
    throw CscError("confusion-set key token out of vocabulary range");
  for (int id : confusables) {
    if (id < 0 || id >= vocab_size_)
      throw CscError("confusable out of vocabulary range");
    if (id == token)
      throw CscError("confusion list contains the key token itself");
    if (excluded_[static_cast<std::size_t>(id)])
      throw CscError("confusable is a reserved control token");
  }
  auto& lists = entries_[token];
  auto& target = lists[static_cast<std::size_t>(category)];
  if (!target.empty())
    throw CscError("duplicate confusion category for token " +
                   std::to_string(token));
  target = confusables;
}

const std::vector<int>& ConfusionSet::list(int token,
                                           ConfusionCategory category) const {
  static const std::vector<int> kEmpty;
  auto it = entries_.find(token);
  if (it == entries_.end()) return kEmpty;
  return it->second[static_cast<std::size_t>(category)];
}

bool ConfusionSet::has_entries(int token) const {
  return entries_.count(token) > 0;
}

std::size_t ConfusionSet::random_pool_size(int token) const {
  std::size_t ineligible = excluded_count_;
  if (!excluded_[static_cast<std::size_t>(token)]) ++ineligible;
  return static_cast<std::size_t>(vocab_size_) - ineligible;
}

ConfusionSet ConfusionSet::load(const std::string& path, const Vocab& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CscError("cannot open confusion-set file: " + path);
  ConfusionSet cs = ConfusionSet::for_vocab(vocab);
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
                     ": expected `token<TAB>category<TAB>list`");
    const int token = vocab.lookup(line.substr(0, t1));
    if (token < 0)
      throw CscError("line " + std::to_string(lineno) +
                     ": token not in vocabulary");
    std::vector<int> confusables;
    const std::string list_text = line.substr(t2 + 1);
    std::size_t start = 0;
    while (start <= list_text.size()) {
      auto comma = list_text.find(',', start);
      if (comma == std::string::npos) comma = list_text.size();
      const std::string entry = list_text.substr(start, comma - start);
      if (entry.empty())
        throw CscError("line " + std::to_string(lineno) +
                       ": empty confusable entry");
      const int id = vocab.lookup(entry);
      if (id < 0)
        throw CscError("line " + std::to_string(lineno) +
                       ": confusable not in vocabulary: " + entry);
      confusables.push_back(id);
      start = comma + 1;
    }
    try {
      cs.add(token, category_from_name(line.substr(t1 + 1, t2 - t1 - 1)),
             confusables);
    } catch (const CscError& e) {
      throw CscError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cs;
}

void ConfusionSet::save(const std::string& path, const Vocab& vocab) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CscError("cannot write confusion-set file: " + path);
  for (int token = 0; token < vocab_size_; ++token) {
    auto it = entries_.find(token);
    if (it == entries_.end()) continue;
    for (ConfusionCategory cat : kCategories) {
      const auto& lst = it->second[static_cast<std::size_t>(cat)];
      if (lst.empty()) continue;
      out << vocab.token(token) << '\t' << category_name(cat) << '\t';
      for (std::size_t i = 0; i < lst.size(); ++i) {
        if (i) out << ',';
        out << vocab.token(lst[i]);
      }
      out << '\n';
    }
  }
  if (!out) throw CscError("write failed: " + path);
}

void MaskPolicy::validate() const {
  if (rate < 0.0 || rate > 1.0) throw CscError("mask rate must be in [0,1]");
  if (mix_mask_probability < 0.0 || mix_mask_probability > 1.0)
    throw CscError("mix mask probability must be in [0,1]");
}

int MaskPolicy::token_id(const Vocab& vocab) const {
  switch (mask_token) {
    case MaskTokenKind::Mask: return vocab.mask_id;
    case MaskTokenKind::Unused: return vocab.unused_id;
    case MaskTokenKind::Unk: return vocab.unk_id;
  }
  throw CscError("invalid mask token kind");
}

MaskPolicy MaskPolicy::parse(const std::string& text) {
  MaskPolicy policy;
  std::size_t start = 0;
  while (start < text.size()) {
    auto comma = text.find(',', start);
    if (comma == std::string::npos) comma = text.size();
    const std::string field = text.substr(start, comma - start);
    const auto eq = field.find('=');
    if (eq == std::string::npos)
      throw CscError("malformed policy field: " + field);
    const std::string key = field.substr(0, eq);
    const std::string value = field.substr(eq + 1);
    if (key == "p" || key == "q") {
      double parsed = 0.0;
      try {
        std::size_t used = 0;
        parsed = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
      } catch (const std::exception&) {
        throw CscError("unparsable policy value: " + field);
      }
      (key == "p" ? policy.rate : policy.mix_mask_probability) = parsed;
    } else if (key == "token") {
      if (value == "MASK") policy.mask_token = MaskTokenKind::Mask;
      else if (value == "UNUSED") policy.mask_token = MaskTokenKind::Unused;
      else if (value == "UNK") policy.mask_token = MaskTokenKind::Unk;
      else throw CscError("unknown mask token: " + value);
    } else if (key == "pos") {
      if (value == "non_error") policy.position_policy = PositionPolicy::NonError;
      else if (value == "error_only") policy.position_policy = PositionPolicy::ErrorOnly;
      else if (value == "any") policy.position_policy = PositionPolicy::Any;
      else throw CscError("unknown position policy: " + value);
    } else {
      throw CscError("unknown policy key: " + key);
    }
    start = comma + 1;
  }
  policy.validate();
  return policy;
}

std::string MaskPolicy::format() const {
  const char* token = mask_token == MaskTokenKind::Mask     ? "MASK"
                      : mask_token == MaskTokenKind::Unused ? "UNUSED"
                                                            : "UNK";
  const char* pos = position_policy == PositionPolicy::NonError ? "non_error"
                    : position_policy == PositionPolicy::ErrorOnly
                        ? "error_only"
                        : "any";
  char buf[96];
  std::snprintf(buf, sizeof(buf), "p=%g,token=%s,pos=%s,q=%g", rate, token,
                pos, mix_mask_probability);
  return buf;
}

namespace {

int draw_from_random_pool(int token, const ConfusionSet& cs, Rng& rng) {
  if (cs.random_pool_size(token) == 0)
    throw CscError("no replacement available");
  const auto n = static_cast<std::uint64_t>(cs.vocab_size());
  while (true) {
    const int candidate = static_cast<int>(rng.uniform_index(n));
    if (candidate != token && !cs.excluded_from_random_pool(candidate))
      return candidate;
  }
}

}  // namespace

int sample_confusable(int token, const ConfusionSet& cs, Rng& rng) {
  if (token < 0 || token >= cs.vocab_size())
    throw CscError("token out of vocabulary range");
  const double u = rng.uniform();
  const std::vector<int>* lst = nullptr;
  if (u < 0.4) lst = &cs.list(token, ConfusionCategory::SamePron);
  else if (u < 0.7) lst = &cs.list(token, ConfusionCategory::SimPron);
  else if (u < 0.9) lst = &cs.list(token, ConfusionCategory::SimGlyph);
  if (lst == nullptr || lst->empty())
    return draw_from_random_pool(token, cs, rng);
  return (*lst)[rng.uniform_index(lst->size())];
}

ParallelExample synthesize_pair(const Sentence& clean, const ConfusionSet& cs,
                                Rng& rng) {
  if (clean.size() == 0) throw CscError("empty sentence");
  ParallelExample ex;
  ex.target = clean;
  ex.source = clean;
  const auto pos =
      rng.uniform_index(static_cast<std::uint64_t>(clean.size()));
  ex.source.ids[pos] = sample_confusable(clean.ids[pos], cs, rng);
  return ex;
}

ParallelExample apply_mask_policy(const ParallelExample& ex,
                                  const MaskPolicy& policy,
                                  const ConfusionSet* cs, const Vocab& vocab,
                                  Rng& rng) {
  policy.validate();
  if (ex.source.size() != ex.target.size())
    throw CscError("misaligned example: source and target lengths differ");
  if (policy.mix_mask_probability < 1.0 && cs == nullptr)
    throw CscError("confusion corruption requires a confusion set");

  const bool mask_mode = policy.mix_mask_probability >= 1.0
                             ? true
                             : rng.uniform() < policy.mix_mask_probability;
  const int mask_id = policy.token_id(vocab);

  ParallelExample out = ex;
  for (int i = 0; i < ex.source.size(); ++i) {
    const bool is_error = ex.source.ids[i] != ex.target.ids[i];
    bool eligible = false;
    switch (policy.position_policy) {
      case PositionPolicy::NonError: eligible = !is_error; break;
      case PositionPolicy::ErrorOnly: eligible = is_error; break;
      case PositionPolicy::Any: eligible = true; break;
    }
    if (!eligible || !rng.bernoulli(policy.rate)) continue;
    out.source.ids[static_cast<std::size_t>(i)] =
        mask_mode ? mask_id
                  : sample_confusable(ex.source.ids[i], *cs, rng);
  }
  return out;
}

}  // namespace csc
