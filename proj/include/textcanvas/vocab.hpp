#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "textcanvas/types.hpp"

namespace textcanvas::vse {

/// Token ids with PAD pinned to 0 and UNK to 1; all other tokens are a
/// bijective, sorted mapping.
struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  std::vector<std::string> tokens;  // index -> token, tokens[0]="<pad>"
  std::unordered_map<std::string, int> index;

  static Vocabulary from_captions(const std::vector<std::string>& captions);
  static Vocabulary from_tokens(const std::vector<std::string>& vocab_tokens);

  int size() const { return static_cast<int>(tokens.size()); }
  int lookup(const std::string& token) const;
  bool contains(const std::string& token) const {
    return index.count(token) > 0;
  }
};

struct TokenSequence {
  std::vector<int> indices;
  std::vector<std::string> raw_tokens;

  Index length() const { return static_cast<Index>(indices.size()); }
};

/// Lowercase, strip punctuation, split on whitespace.
std::vector<std::string> split_tokens(const std::string& caption);

/// Map a caption to vocabulary indices; unknown tokens become UNK.
/// Throws EmptyCaption when no tokens survive.
TokenSequence tokenize(const std::string& caption, const Vocabulary& vocab);

}  // namespace textcanvas::vse
