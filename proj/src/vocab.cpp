#include "anchorcap/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace anchorcap {

namespace {
const char* const kSpecials[kNumSpecials] = {"<pad>", "<bos>", "<eos>", kUnkText};
}

std::vector<std::string> tokenize(const std::string& caption) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char c : caption) {
    if (std::isspace(c)) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else if (!std::ispunct(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
  for (const char* s : kSpecials) id_to_word_.emplace_back(s);
  for (const auto& w : words) {
    if (w.empty() || word_to_id_.count(w) != 0 ||
        std::find(std::begin(kSpecials), std::end(kSpecials), w) != std::end(kSpecials)) {
      throw std::invalid_argument("vocabulary word is empty, special or duplicated: '" + w + "'");
    }
    word_to_id_.emplace(w, static_cast<int>(id_to_word_.size()));
    id_to_word_.push_back(w);
  }
}

int Vocabulary::id(const std::string& word) const {
  auto it = word_to_id_.find(word);
  return it == word_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocabulary id " + std::to_string(id));
  return id_to_word_[static_cast<std::size_t>(id)];
}

std::vector<std::string> Vocabulary::words() const {
  return {id_to_word_.begin() + kNumSpecials, id_to_word_.end()};
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary: " + path.string());
  for (const auto& w : words()) out << w << "\n";
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary: " + path.string());
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) words.push_back(line);
  }
  return Vocabulary(words);
}

Vocabulary build_vocab(const std::vector<std::string>& captions, int min_freq) {
  if (min_freq < 1) throw std::invalid_argument("min_freq must be >= 1");
  std::map<std::string, int> counts;
  for (const auto& c : captions) {
    for (auto& w : tokenize(c)) ++counts[w];
  }
  std::vector<std::pair<std::string, int>> kept;
  for (const auto& [w, n] : counts) {
    if (n >= min_freq && std::find(std::begin(kSpecials), std::end(kSpecials), w) == std::end(kSpecials)) {
      kept.emplace_back(w, n);
    }
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  words.reserve(kept.size());
  for (auto& [w, _] : kept) words.push_back(w);
  return Vocabulary(words);
}

std::vector<std::vector<std::string>> tokenize_ocr(const std::vector<OcrToken>& tokens) {
  std::vector<std::vector<std::string>> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(tokenize(t.text));
  return out;
}

OcrMatches match_ocr(const std::vector<std::string>& words,
                     const std::vector<std::vector<std::string>>& ocr_words) {
  OcrMatches m;
  m.starts.assign(words.size(), {});
  m.covered.assign(words.size(), false);
  for (std::size_t p = 0; p < words.size(); ++p) {
    for (std::size_t k = 0; k < ocr_words.size(); ++k) {
      const auto& ow = ocr_words[k];
      if (ow.empty() || p + ow.size() > words.size()) continue;
      if (std::equal(ow.begin(), ow.end(), words.begin() + static_cast<std::ptrdiff_t>(p))) {
        m.starts[p].push_back(static_cast<int>(k));
        for (std::size_t q = p; q < p + ow.size(); ++q) m.covered[q] = true;
      }
    }
  }
  return m;
}

CaptionTargets encode_for_targets(const std::string& caption, const std::vector<OcrToken>& ocr_tokens,
                                  const Vocabulary& vocab, int max_words) {
  std::vector<std::string> words = tokenize(caption);
  if (static_cast<int>(words.size()) > max_words) words.resize(static_cast<std::size_t>(std::max(0, max_words)));
  const OcrMatches matches = match_ocr(words, tokenize_ocr(ocr_tokens));

  CaptionTargets out;
  out.masked.ids.push_back(kBos);
  out.full.ids.push_back(kBos);
  for (std::size_t p = 0; p < words.size(); ++p) {
    const int id = vocab.id(words[p]);
    out.full.ids.push_back(id);
    out.masked.ids.push_back(matches.covered[p] ? kUnk : id);
  }
  out.masked.ids.push_back(kEos);
  out.full.ids.push_back(kEos);

  out.masked.copy_flags.assign(out.masked.ids.size(), {});
  out.full.copy_flags.assign(out.full.ids.size(), {});
  for (std::size_t p = 0; p < words.size(); ++p) out.full.copy_flags[p + 1] = matches.starts[p];
  return out;
}

std::vector<std::string> decode(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::vector<std::string> words;
  for (int id : ids) {
    if (id == kBos || id == kPad) continue;
    if (id == kEos) break;
    words.push_back(vocab.word(id));
  }
  return words;
}

std::string strip_ocr_words(const std::string& caption, const std::vector<OcrToken>& ocr_tokens) {
  const std::vector<std::string> words = tokenize(caption);
  const OcrMatches matches = match_ocr(words, tokenize_ocr(ocr_tokens));
  std::ostringstream os;
  bool first = true;
  for (std::size_t p = 0; p < words.size(); ++p) {
    if (matches.covered[p]) continue;
    if (!first) os << ' ';
    os << words[p];
    first = false;
  }
  return os.str();
}

}  // namespace anchorcap
