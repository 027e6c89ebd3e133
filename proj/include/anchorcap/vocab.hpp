#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "anchorcap/scene_io.hpp"

namespace anchorcap {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kNumSpecials = 4;
inline constexpr const char* kUnkText = "<unk>";

// Lowercase, drop ASCII punctuation, split on whitespace.
std::vector<std::string> tokenize(const std::string& caption);

class Vocabulary {
 public:
  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& words);  // non-special words, in id order

  int id(const std::string& word) const;  // kUnk when absent
  bool contains(const std::string& word) const { return word_to_id_.count(word) != 0; }
  const std::string& word(int id) const;
  int size() const { return static_cast<int>(id_to_word_.size()); }
  // Non-special entries, in id order.
  std::vector<std::string> words() const;

  // One word per line; line i holds id i + kNumSpecials.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return id_to_word_ == other.id_to_word_; }

 private:
  std::vector<std::string> id_to_word_;
  std::unordered_map<std::string, int> word_to_id_;
};

// Words with corpus frequency >= min_freq, ordered by frequency desc then
// lexicographically. Throws std::invalid_argument when min_freq < 1.
Vocabulary build_vocab(const std::vector<std::string>& captions, int min_freq);

struct EncodedCaption {
  std::vector<int> ids;                     // BOS ... EOS
  std::vector<std::vector<int>> copy_flags;  // per position: matching OCR indices

  bool operator==(const EncodedCaption&) const = default;
};

struct CaptionTargets {
  EncodedCaption masked;  // OCR words -> UNK (visual-captioner target)
  EncodedCaption full;    // words kept, copy flags set (text-captioner target)
};

// For each caption position, the OCR indices whose (tokenized) text starts a
// contiguous match there, plus the positions covered by any match.
struct OcrMatches {
  std::vector<std::vector<int>> starts;
  std::vector<bool> covered;
};
OcrMatches match_ocr(const std::vector<std::string>& words, const std::vector<std::vector<std::string>>& ocr_words);
std::vector<std::vector<std::string>> tokenize_ocr(const std::vector<OcrToken>& tokens);

// Both captions are framed by BOS/EOS and truncated to max_words words.
CaptionTargets encode_for_targets(const std::string& caption, const std::vector<OcrToken>& ocr_tokens,
                                  const Vocabulary& vocab, int max_words);

// Words between BOS and EOS; PAD skipped. UNK decodes to kUnkText.
std::vector<std::string> decode(const std::vector<int>& ids, const Vocabulary& vocab);

// Drops OCR matches; the common vocabulary is built from these.
std::string strip_ocr_words(const std::string& caption, const std::vector<OcrToken>& ocr_tokens);

}  // namespace anchorcap
