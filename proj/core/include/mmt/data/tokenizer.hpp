// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mmt::data {

/// Word-level vocabulary. Ids 0 and 1 are reserved for UNK and PAD; the rest
/// are assigned in lexicographic order, so the same word set always yields
/// the same ids.
class Vocabulary {
 public:
  static constexpr std::int32_t kUnk = 0;
  static constexpr std::int32_t kPad = 1;

  Vocabulary();
  /// Every distinct word of `texts` (min frequency 1).
  static Vocabulary build(std::span<const std::string> texts);
  /// `words` must start with the two reserved entries.
  static Vocabulary from_words(std::vector<std::string> words);

  std::int32_t id(std::string_view word) const;
  const std::string& word(std::int32_t id) const { return words_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const noexcept { return words_.size(); }
  const std::vector<std::string>& words() const noexcept { return words_; }

 private:
  struct Empty {};
  explicit Vocabulary(Empty) {}

  std::vector<std::string> words_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

struct TokenizerOptions {
  bool remove_stop_words = false;
  std::size_t max_tokens = 30;
};

/// Lowercases and splits on any character that is not an ASCII letter or digit.
std::vector<std::string> split_words(std::string_view text);

/// Version of the bundled English stop-word list.
inline constexpr int kStopWordListVersion = 1;
std::span<const std::string_view> stop_words();
bool is_stop_word(std::string_view word);

/// split -> optional stop-word filter -> vocabulary lookup -> truncation.
/// Never empty: if filtering removes everything the unfiltered words are used,
/// and text with no words at all becomes a single UNK.
std::vector<std::int32_t> tokenize(std::string_view text, const Vocabulary& vocab, const TokenizerOptions& options);

}  // namespace mmt::data
