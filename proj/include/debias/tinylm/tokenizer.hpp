#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace debias::tinylm {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kClsId = 2;
inline constexpr int kSepId = 3;
inline constexpr int kMaskId = 4;
inline constexpr int kNumSpecial = 5;

// Word-level vocabulary over lowercased tokens. Ids below kNumSpecial are
// reserved for [PAD] [UNK] [CLS] [SEP] [MASK].
class Vocabulary {
public:
  Vocabulary();

  // Most frequent words first (ties broken lexicographically), capped so the
  // total size including specials is at most max_size.
  static Vocabulary build(const std::vector<std::string>& sentences, int max_size);
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  // Lowercases and splits on whitespace, peeling leading and trailing ASCII
  // punctuation into tokens of their own.
  static std::vector<std::string> words(std::string_view sentence);

  int id(std::string_view word) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(tokens_.size()); }
  static bool is_special(int id) { return id >= 0 && id < kNumSpecial; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // [CLS] words [SEP]
  std::vector<int> encode(std::string_view sentence) const;
  // [CLS] a [SEP] b [SEP]
  std::vector<int> encode_pair(std::string_view a, std::string_view b) const;

private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace debias::tinylm
