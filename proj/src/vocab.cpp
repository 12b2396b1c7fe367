#include "textcanvas/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "textcanvas/errors.hpp"

namespace textcanvas::vse {

std::vector<std::string> split_tokens(const std::string& caption) {
  std::vector<std::string> out;
  std::string cur;
  for (char raw : caption) {
    const unsigned char c = static_cast<unsigned char>(raw);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

Vocabulary Vocabulary::from_captions(const std::vector<std::string>& captions) {
  std::set<std::string> uniq;
  for (const auto& c : captions)
    for (auto& t : split_tokens(c)) uniq.insert(t);
  std::vector<std::string> sorted(uniq.begin(), uniq.end());
  return from_tokens(sorted);
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& vocab_tokens) {
  Vocabulary v;
  v.tokens = {"<pad>", "<unk>"};
  for (const auto& t : vocab_tokens) {
    if (t == "<pad>" || t == "<unk>") continue;
    v.tokens.push_back(t);
  }
  for (int i = 0; i < static_cast<int>(v.tokens.size()); ++i)
    v.index[v.tokens[i]] = i;
  return v;
}

int Vocabulary::lookup(const std::string& token) const {
  auto it = index.find(token);
  return it == index.end() ? kUnk : it->second;
}

TokenSequence tokenize(const std::string& caption, const Vocabulary& vocab) {
  TokenSequence seq;
  seq.raw_tokens = split_tokens(caption);
  if (seq.raw_tokens.empty())
    throw EmptyCaption("no tokens survive tokenization: \"" + caption + "\"");
  seq.indices.reserve(seq.raw_tokens.size());
  for (const auto& t : seq.raw_tokens) seq.indices.push_back(vocab.lookup(t));
  return seq;
}

}  // namespace textcanvas::vse
