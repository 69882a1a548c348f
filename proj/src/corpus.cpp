#include "csc/corpus.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "csc/error.hpp"

namespace csc {

std::vector<std::string> split_utf8(const std::string& text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  const auto* bytes = reinterpret_cast<const unsigned char*>(text.data());
  while (i < text.size()) {
    const unsigned char b = bytes[i];
    std::size_t len = 0;
    if (b < 0x80) len = 1;
    else if ((b & 0xE0) == 0xC0) len = 2;
    else if ((b & 0xF0) == 0xE0) len = 3;
    else if ((b & 0xF8) == 0xF0) len = 4;
    else throw CscError("malformed UTF-8 byte in input text");
    if (i + len > text.size())
      throw CscError("truncated UTF-8 sequence in input text");
    for (std::size_t k = 1; k < len; ++k)
      if ((bytes[i + k] & 0xC0) != 0x80)
        throw CscError("malformed UTF-8 continuation byte in input text");
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

Sentence tokenize(const std::string& text, const Vocab& vocab) {
  const auto chars = split_utf8(text);
  if (chars.empty()) throw CscError("empty sentence");
  Sentence s;
  s.ids.reserve(chars.size());
  for (const auto& c : chars) {
    int id = vocab.lookup(c);
    s.ids.push_back(id >= 0 ? id : vocab.unk_id);
  }
  return s;
}

std::string detokenize(const Sentence& s, const Vocab& vocab) {
  std::string out;
  for (int id : s.ids) out += vocab.token(id);
  return out;
}

void validate_natural_sentence(const Sentence& s, const Vocab& vocab) {
  for (int id : s.ids) {
    if (id < 0 || id >= vocab.size())
      throw CscError("token id out of range");
    if (vocab.forbidden_in_text(id))
      throw CscError("reserved token " + vocab.token(id) +
                     " occurs in ordinary text");
  }
}

void validate_natural_corpus(const std::vector<Sentence>& corpus,
                             const Vocab& vocab) {
  for (const auto& s : corpus) validate_natural_sentence(s, vocab);
}

void validate_natural_corpus(const std::vector<ParallelExample>& corpus,
                             const Vocab& vocab) {
  for (const auto& ex : corpus) {
    validate_natural_sentence(ex.source, vocab);
    validate_natural_sentence(ex.target, vocab);
  }
}

std::vector<EditPair> extract_edit_pairs(const ParallelExample& ex) {
  if (ex.source.size() != ex.target.size())
    throw CscError("misaligned example: source and target lengths differ");
  std::vector<EditPair> pairs;
  for (int i = 0; i < ex.source.size(); ++i)
    if (ex.source.ids[i] != ex.target.ids[i])
      pairs.push_back({ex.source.ids[i], ex.target.ids[i], i});
  return pairs;
}

std::vector<SplitLabel> inc_exc_split(
    const std::vector<ParallelExample>& train,
    const std::vector<ParallelExample>& test) {
  std::set<EditPairKey> seen;
  for (const auto& ex : train)
    for (const auto& p : extract_edit_pairs(ex)) seen.insert({p.src, p.tgt});

  std::vector<SplitLabel> labels;
  labels.reserve(test.size());
  for (const auto& ex : test) {
    const auto pairs = extract_edit_pairs(ex);
    if (pairs.empty()) {
      labels.push_back(SplitLabel::Clean);
      continue;
    }
    bool all_seen = true;
    for (const auto& p : pairs)
      if (!seen.count({p.src, p.tgt})) {
        all_seen = false;
        break;
      }
    labels.push_back(all_seen ? SplitLabel::Inc : SplitLabel::Exc);
  }
  return labels;
}

CorpusStats corpus_stats(const std::vector<ParallelExample>& corpus) {
  CorpusStats st;
  st.num_examples = corpus.size();
  std::set<EditPairKey> pairs;
  std::size_t total_len = 0, total_errors = 0;
  for (const auto& ex : corpus) {
    total_len += static_cast<std::size_t>(ex.source.size());
    const auto eps = extract_edit_pairs(ex);
    if (!eps.empty()) {
      ++st.num_positive;
      total_errors += eps.size();
      for (const auto& p : eps) pairs.insert({p.src, p.tgt});
    }
  }
  st.mean_length =
      st.num_examples ? static_cast<double>(total_len) / st.num_examples : 0.0;
  st.mean_errors_per_positive =
      st.num_positive ? static_cast<double>(total_errors) / st.num_positive
                      : 0.0;
  st.distinct_edit_pairs = pairs.size();
  return st;
}

std::vector<ParallelExample> load_parallel_tsv(const std::string& path,
                                               const Vocab& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CscError("cannot open parallel file: " + path);
  std::vector<ParallelExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
      throw CscError("line " + std::to_string(lineno) + ": expected exactly one tab");
    const std::string src_text = line.substr(0, tab);
    const std::string tgt_text = line.substr(tab + 1);
    ParallelExample ex;
    try {
      ex.source = tokenize(src_text, vocab);
      ex.target = tokenize(tgt_text, vocab);
    } catch (const CscError& e) {
      throw CscError("line " + std::to_string(lineno) + ": " + e.what());
    }
    if (ex.source.size() != ex.target.size())
      throw CscError("line " + std::to_string(lineno) +
                     ": source and target lengths differ");
    out.push_back(std::move(ex));
  }
  return out;
}

void save_parallel_tsv(const std::string& path,
                       const std::vector<ParallelExample>& corpus,
                       const Vocab& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CscError("cannot write parallel file: " + path);
  for (const auto& ex : corpus)
    out << detokenize(ex.source, vocab) << '\t' << detokenize(ex.target, vocab)
        << '\n';
  if (!out) throw CscError("write failed: " + path);
}

std::vector<Sentence> load_monolingual(const std::string& path,
                                       const Vocab& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CscError("cannot open monolingual file: " + path);
  std::vector<Sentence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      out.push_back(tokenize(line, vocab));
    } catch (const CscError& e) {
      throw CscError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void save_monolingual(const std::string& path,
                      const std::vector<Sentence>& corpus, const Vocab& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CscError("cannot write monolingual file: " + path);
  for (const auto& s : corpus) out << detokenize(s, vocab) << '\n';
  if (!out) throw CscError("write failed: " + path);
}

}  // namespace csc
