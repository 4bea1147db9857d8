// SPDX-License-Identifier: Apache-2.0
#include "mmt/data/tokenizer.hpp"

#include <algorithm>
#include <set>

#include "mmt/errors.hpp"

namespace mmt::data {

Vocabulary::Vocabulary() : Vocabulary(from_words({"<unk>", "<pad>"})) {}

Vocabulary Vocabulary::build(std::span<const std::string> texts) {
  std::set<std::string> distinct;
  for (const auto& t : texts) {
    for (auto& w : split_words(t)) distinct.insert(std::move(w));
  }
  std::vector<std::string> words{"<unk>", "<pad>"};
  words.insert(words.end(), distinct.begin(), distinct.end());
  return from_words(std::move(words));
}

Vocabulary Vocabulary::from_words(std::vector<std::string> words) {
  if (words.size() < 2 || words[0] != "<unk>" || words[1] != "<pad>") {
    throw ValidationError("vocabulary must start with <unk>, <pad>");
  }
  Vocabulary v{Empty{}};
  v.words_ = std::move(words);
  v.ids_.clear();
  for (std::size_t i = 0; i < v.words_.size(); ++i) {
    if (!v.ids_.emplace(v.words_[i], static_cast<std::int32_t>(i)).second) {
      throw DuplicateNameError("duplicate vocabulary entry: " + v.words_[i]);
    }
  }
  return v;
}

std::int32_t Vocabulary::id(std::string_view word) const {
  auto it = ids_.find(std::string(word));
  return it == ids_.end() ? kUnk : it->second;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const unsigned char c = static_cast<unsigned char>(ch);
    if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) {
      cur.push_back(static_cast<char>(c));
    } else if (c >= 'A' && c <= 'Z') {
      cur.push_back(static_cast<char>(c - 'A' + 'a'));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<std::int32_t> tokenize(std::string_view text, const Vocabulary& vocab, const TokenizerOptions& options) {
  if (options.max_tokens == 0) throw ConfigError("max_tokens must be >= 1");
  std::vector<std::string> words = split_words(text);
  if (options.remove_stop_words) {
    std::vector<std::string> kept;
    std::copy_if(words.begin(), words.end(), std::back_inserter(kept), [](const std::string& w) { return !is_stop_word(w); });
    if (!kept.empty()) words = std::move(kept);
  }
  std::vector<std::int32_t> ids;
  ids.reserve(std::min(words.size(), options.max_tokens));
  for (const auto& w : words) {
    if (ids.size() == options.max_tokens) break;
    ids.push_back(vocab.id(w));
  }
  if (ids.empty()) ids.push_back(Vocabulary::kUnk);
  return ids;
}

}  // namespace mmt::data
