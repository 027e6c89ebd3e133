#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "anchorcap/autograd.hpp"
#include "anchorcap/inference.hpp"
#include "anchorcap/scene_io.hpp"

namespace anchorcap {

// Sentence BLEU: clipped n-gram precisions, geometric mean, brevity penalty
// against the closest reference length, no smoothing.
double bleu(const std::string& candidate, const std::vector<std::string>& references, int max_n = 4);

using NgramCounts = std::map<std::string, int>;
// n-grams of tokenize(caption), joined by single spaces.
NgramCounts ngrams(const std::vector<std::string>& words, int n);

// Plain CIDEr (no length penalty or clipping) with document frequencies from
// a fixed reference corpus; idf = log((1 + N) / (1 + df)) + 1.
class CiderScorer {
 public:
  static constexpr int kMaxN = 4;

  // Each entry is one image's reference set.
  explicit CiderScorer(const std::vector<std::vector<std::string>>& corpus_refs);

  // 10 * mean over n = 1..4 of the TF-IDF cosine, averaged over references.
  double score(const std::string& candidate, const std::vector<std::string>& references) const;

  // Symmetric similarity in [0, 1] for the diversity kernel: the cosine is
  // averaged over the n-gram orders present in either caption; two empty
  // captions count as identical.
  double similarity(const std::string& a, const std::string& b) const;

  double idf(const std::string& gram, int n) const;
  int documents() const { return documents_; }

 private:
  std::vector<std::map<std::string, double>> vectors(const std::string& caption) const;

  int documents_ = 0;
  std::vector<std::map<std::string, int>> df_;  // per order
};

// Distinct n-grams over all captions / total n-gram count.
double div_n(const std::vector<std::string>& captions, int n);

// -log(lambda_1 / sum lambda) / log K on the eigenvalues of the kernel
// (negatives clipped to 0), clamped to [0, 1]. Throws for K < 2.
double self_cider_from_kernel(const nn::Matrix& kernel);
double self_cider(const std::vector<std::string>& captions, const CiderScorer& scorer);

// Distinct OCR texts mentioned anywhere in the captions / distinct OCR texts.
// Empty when there are no OCR tokens.
std::optional<double> cover_ratio(const std::vector<std::string>& captions, const std::vector<OcrToken>& tokens);

struct ImageMetrics {
  std::string id;
  double bleu4 = 0.0;
  double cider = 0.0;
  double cider_visual = 0.0;
  double div1 = 0.0;
  double div2 = 0.0;
  std::optional<double> self_cider;
  std::optional<double> cover_ratio;
  int captions = 0;
};

struct MetricReport {
  std::vector<ImageMetrics> images;
  double bleu4 = 0.0;
  double cider = 0.0;
  double cider_visual = 0.0;
  double div1 = 0.0;
  double div2 = 0.0;
  double self_cider = 0.0;
  double cover_ratio = 0.0;
  int self_cider_images = 0;
  int cover_ratio_images = 0;
  std::string captions_from = "generated";
};

enum class CaptionSource { generated, references };

// Accuracy metrics use the top-1 refined caption (the visual caption when no
// refined caption exists); diversity metrics use every refined caption, or the
// scene's references with CaptionSource::references. Results whose scene id is
// not in `scenes` throw ValidationError.
MetricReport evaluate(const std::vector<GenerationResult>& results, const std::vector<Scene>& scenes,
                      CaptionSource source = CaptionSource::generated);

nlohmann::json to_json(const MetricReport& r);

}  // namespace anchorcap
