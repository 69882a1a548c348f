#include "csc/channel.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "csc/error.hpp"

namespace csc {

ChannelTable ChannelTable::identity(int vocab_size) {
  ChannelTable t;
  t.vocab_size_ = vocab_size;
  t.table_.assign(static_cast<std::size_t>(vocab_size) * vocab_size, 0.0);
  for (int y = 0; y < vocab_size; ++y)
    t.table_[static_cast<std::size_t>(y) * vocab_size + y] = 1.0;
  return t;
}

ChannelTable ChannelTable::estimate(const std::vector<ParallelExample>& corpus,
                                    int vocab_size, double alpha) {
  std::vector<double> counts(static_cast<std::size_t>(vocab_size) * vocab_size,
                             0.0);
  std::vector<double> totals(vocab_size, 0.0);
  for (const auto& ex : corpus) {
    if (ex.source.size() != ex.target.size())
      throw CscError("misaligned example: source and target lengths differ");
    for (int i = 0; i < ex.source.size(); ++i) {
      const int x = ex.source.ids[i];
      const int y = ex.target.ids[i];
      counts[static_cast<std::size_t>(y) * vocab_size + x] += 1.0;
      totals[y] += 1.0;
    }
  }
  ChannelTable t;
  t.vocab_size_ = vocab_size;
  t.table_.resize(counts.size());
  for (int y = 0; y < vocab_size; ++y) {
    const double denom = totals[y] + alpha * vocab_size;
    for (int x = 0; x < vocab_size; ++x)
      t.table_[static_cast<std::size_t>(y) * vocab_size + x] =
          (counts[static_cast<std::size_t>(y) * vocab_size + x] + alpha) /
          denom;
  }
  return t;
}

ChannelTable ChannelTable::load(const std::string& path, const Vocab& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CscError("cannot open channel table: " + path);

  const int n = vocab.size();
  ChannelTable t;
  t.vocab_size_ = n;
  t.table_.assign(static_cast<std::size_t>(n) * n, 0.0);
  std::vector<bool> listed(n, false);
  std::vector<std::vector<bool>> entry_seen(n, std::vector<bool>(n, false));

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
                     ": expected `y<TAB>x<TAB>probability`");
    const std::string y_tok = line.substr(0, t1);
    const std::string x_tok = line.substr(t1 + 1, t2 - t1 - 1);
    const std::string prob_text = line.substr(t2 + 1);
    const int y = vocab.lookup(y_tok);
    const int x = vocab.lookup(x_tok);
    if (y < 0 || x < 0)
      throw CscError("line " + std::to_string(lineno) +
                     ": token not in vocabulary");
    double p = 0.0;
    try {
      std::size_t used = 0;
      p = std::stod(prob_text, &used);
      if (used != prob_text.size()) throw std::invalid_argument(prob_text);
    } catch (const std::exception&) {
      throw CscError("line " + std::to_string(lineno) +
                     ": unparsable probability `" + prob_text + "`");
    }
    if (p < 0.0 || p > 1.0 || !std::isfinite(p))
      throw CscError("line " + std::to_string(lineno) +
                     ": probability out of range");
    if (entry_seen[y][x])
      throw CscError("line " + std::to_string(lineno) +
                     ": duplicate entry for (" + y_tok + ", " + x_tok + ")");
    entry_seen[y][x] = true;
    listed[y] = true;
    t.table_[static_cast<std::size_t>(y) * n + x] = p;
  }

  for (int y = 0; y < n; ++y) {
    if (!listed[y]) {
      t.table_[static_cast<std::size_t>(y) * n + y] = 1.0;
      continue;
    }
    double sum = 0.0;
    for (int x = 0; x < n; ++x)
      sum += t.table_[static_cast<std::size_t>(y) * n + x];
    if (std::abs(sum - 1.0) > 1e-4)
      throw CscError("channel row for token " + vocab.token(y) +
                     " sums to " + std::to_string(sum) + ", expected 1");
  }
  return t;
}

void ChannelTable::save(const std::string& path, const Vocab& vocab) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CscError("cannot write channel table: " + path);
  char buf[64];
  for (int y = 0; y < vocab_size_; ++y)
    for (int x = 0; x < vocab_size_; ++x) {
      const double p = prob(x, y);
      if (p == 0.0) continue;
      std::snprintf(buf, sizeof(buf), "%.17g", p);
      out << vocab.token(y) << '\t' << vocab.token(x) << '\t' << buf << '\n';
    }
  if (!out) throw CscError("write failed: " + path);
}

void ChannelTable::validate(double tol) const {
  for (int y = 0; y < vocab_size_; ++y) {
    double sum = 0.0;
    for (int x = 0; x < vocab_size_; ++x) sum += prob(x, y);
    if (std::abs(sum - 1.0) > tol)
      throw CscError("channel row " + std::to_string(y) + " sums to " +
                     std::to_string(sum) + ", expected 1");
    if (!(prob(y, y) > 0.0))
      throw CscError("channel self-loop mass for token " + std::to_string(y) +
                     " must be positive");
  }
}

std::vector<double> posterior(const LanguageModel& lm, const ErrorModel& em,
                              const Sentence& x, int position) {
  if (position < 0 || position >= x.size())
    throw CscError("posterior position out of range");
  const int observed = x.ids[position];
  std::vector<double> dist = lm.distribution(x, position);
  double total = 0.0;
  for (std::size_t y = 0; y < dist.size(); ++y) {
    dist[y] *= em.likelihood(observed, static_cast<int>(y), x, position);
    total += dist[y];
  }
  if (!(total > 0.0)) throw CscError("degenerate posterior");
  for (auto& p : dist) p /= total;
  return dist;
}

Sentence correct(const LanguageModel& lm, const ErrorModel& em,
                 const Sentence& x) {
  if (x.size() == 0) throw CscError("empty sentence");
  Sentence out = x;
  for (int i = 0; i < x.size(); ++i) {
    const auto post = posterior(lm, em, x, i);
    std::size_t best = 0;
    for (std::size_t y = 1; y < post.size(); ++y)
      if (post[y] > post[best]) best = y;
    out.ids[i] = static_cast<int>(best);
  }
  return out;
}

}  // namespace csc
