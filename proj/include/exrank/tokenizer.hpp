#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace exrank {

namespace detail {

inline bool is_split_punct(char c) { return std::string_view(".,:;!?()").find(c) != std::string_view::npos; }
inline bool attaches_left(std::string_view tok) {
  return tok.size() == 1 && std::string_view(".,:;!?)").find(tok[0]) != std::string_view::npos;
}
inline bool attaches_right(std::string_view tok) { return tok == "("; }

}  // namespace detail

/// Whitespace tokenizer that also splits off sentence punctuation, so
/// "food: positive; staff: negative" becomes
/// [food, :, positive, ;, staff, :, negative].
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      flush();
    } else if (detail::is_split_punct(c)) {
      flush();
      out.emplace_back(1, c);
    } else {
      cur.push_back(c);
    }
  }
  flush();
  return out;
}

/// Inverse of tokenize for text in canonical spacing (single spaces,
/// punctuation attached to the preceding word).
inline std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  bool glue_next = true;
  for (const auto& tok : tokens) {
    if (!glue_next && !detail::attaches_left(tok)) out.push_back(' ');
    out += tok;
    glue_next = detail::attaches_right(tok);
  }
  return out;
}

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kReserved = 4;

  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

  /// Words are deduplicated and sorted, so the id assignment depends only
  /// on the word set.
  explicit Vocabulary(std::vector<std::string> words) {
    tokens_ = {"<pad>", "<s>", "</s>", "<unk>"};
    std::set<std::string> uniq(words.begin(), words.end());
    for (const auto& t : tokens_) uniq.erase(t);
    tokens_.insert(tokens_.end(), uniq.begin(), uniq.end());
    for (int i = 0; i < static_cast<int>(tokens_.size()); ++i) index_.emplace(tokens_[i], i);
  }

  static Vocabulary from_texts(std::span<const std::string> texts) {
    std::vector<std::string> words;
    for (const auto& t : texts) {
      auto toks = tokenize(t);
      words.insert(words.end(), toks.begin(), toks.end());
    }
    return Vocabulary(std::move(words));
  }

  /// Rebuild from a full token list as stored in a checkpoint (reserved first).
  static Vocabulary from_token_list(std::vector<std::string> all) {
    if (all.size() < kReserved) throw std::runtime_error("vocabulary: token list shorter than reserved block");
    Vocabulary v;
    v.tokens_ = std::move(all);
    v.index_.clear();
    for (int i = 0; i < static_cast<int>(v.tokens_.size()); ++i) {
      if (!v.index_.emplace(v.tokens_[i], i).second) throw std::runtime_error("vocabulary: duplicate token " + v.tokens_[i]);
    }
    return v;
  }

  int id(std::string_view tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? kUnk : it->second;
  }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& t : tokenize(text)) ids.push_back(id(t));
    return ids;
  }

  /// Drops pad/bos/eos; unknown ids render as "<unk>".
  std::string decode(std::span<const int> ids) const {
    std::vector<std::string> toks;
    for (int i : ids) {
      if (i == kPad || i == kBos || i == kEos) continue;
      toks.push_back(token(i));
    }
    return detokenize(toks);
  }

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int, std::less<>> index_;
};

}  // namespace exrank
