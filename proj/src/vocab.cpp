#include "csc/vocab.hpp"

#include <fstream>

#include "csc/error.hpp"

namespace csc {

namespace {

constexpr const char* kPadToken = "[PAD]";
constexpr const char* kUnkToken = "\xe3\x80\x93";  // 〓
constexpr const char* kMaskToken = "[MASK]";
constexpr const char* kUnusedToken = "[UNUSED]";

void build_index(Vocab& v) {
  v.index.clear();
  v.index.reserve(v.tokens.size());
  for (std::size_t i = 0; i < v.tokens.size(); ++i) {
    auto [it, fresh] = v.index.emplace(v.tokens[i], static_cast<int>(i));
    if (!fresh) throw CscError("duplicate token in vocabulary: " + v.tokens[i]);
  }
}

int require(const Vocab& v, const std::string& token, const char* role) {
  int id = v.lookup(token);
  if (id < 0)
    throw CscError(std::string("vocabulary missing declared ") + role +
                   " token: " + token);
  return id;
}

}  // namespace

Vocab Vocab::make(const std::vector<std::string>& ordinary) {
  Vocab v;
  v.tokens = {kPadToken, kUnkToken, kMaskToken, kUnusedToken};
  v.pad_id = 0;
  v.unk_id = 1;
  v.mask_id = 2;
  v.unused_id = 3;
  v.tokens.insert(v.tokens.end(), ordinary.begin(), ordinary.end());
  build_index(v);
  return v;
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CscError("cannot open vocabulary file: " + path);

  Vocab v;
  std::string pad = kPadToken, unk = kUnkToken, mask = kMaskToken,
              unused = kUnusedToken;
  std::string line;
  bool in_header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (in_header && line.rfind('#', 0) == 0) {
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw CscError("malformed vocabulary header line: " + line);
      const std::string key = line.substr(1, eq - 1);
      const std::string val = line.substr(eq + 1);
      if (key == "MASK") mask = val;
      else if (key == "UNUSED") unused = val;
      else if (key == "UNK") unk = val;
      else if (key == "PAD") pad = val;
      else throw CscError("unknown vocabulary header key: " + key);
      continue;
    }
    in_header = false;
    if (line.empty()) continue;
    v.tokens.push_back(line);
  }
  build_index(v);
  v.pad_id = require(v, pad, "PAD");
  v.unk_id = require(v, unk, "UNK");
  v.mask_id = require(v, mask, "MASK");
  v.unused_id = require(v, unused, "UNUSED");
  const bool distinct = v.pad_id != v.unk_id && v.pad_id != v.mask_id &&
                        v.pad_id != v.unused_id && v.unk_id != v.mask_id &&
                        v.unk_id != v.unused_id && v.mask_id != v.unused_id;
  if (!distinct) throw CscError("reserved token indices must be distinct");
  return v;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CscError("cannot write vocabulary file: " + path);
  out << "#MASK=" << tokens[mask_id] << '\n';
  out << "#UNUSED=" << tokens[unused_id] << '\n';
  out << "#UNK=" << tokens[unk_id] << '\n';
  out << "#PAD=" << tokens[pad_id] << '\n';
  for (const auto& t : tokens) out << t << '\n';
  if (!out) throw CscError("write failed: " + path);
}

}  // namespace csc
