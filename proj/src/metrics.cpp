#include "anchorcap/metrics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "anchorcap/vocab.hpp"

namespace anchorcap {

NgramCounts ngrams(const std::vector<std::string>& words, int n) {
  NgramCounts out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= words.size(); ++i) {
    std::string g = words[i];
    for (int k = 1; k < n; ++k) g += " " + words[i + static_cast<std::size_t>(k)];
    ++out[g];
  }
  return out;
}

double bleu(const std::string& candidate, const std::vector<std::string>& references, int max_n) {
  if (references.empty()) throw std::invalid_argument("bleu: references must be nonempty");
  const auto cand = tokenize(candidate);
  if (cand.empty()) return 0.0;
  std::vector<std::vector<std::string>> refs;
  for (const auto& r : references) refs.push_back(tokenize(r));

  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const NgramCounts c = ngrams(cand, n);
    std::map<std::string, int> max_ref;
    for (const auto& r : refs) {
      for (const auto& [g, count] : ngrams(r, n)) max_ref[g] = std::max(max_ref[g], count);
    }
    int clipped = 0;
    int total = 0;
    for (const auto& [g, count] : c) {
      total += count;
      const auto it = max_ref.find(g);
      clipped += it == max_ref.end() ? 0 : std::min(count, it->second);
    }
    if (clipped == 0) return 0.0;
    log_sum += std::log(static_cast<double>(clipped) / total);
  }

  const auto c_len = static_cast<long>(cand.size());
  long r_len = static_cast<long>(refs.front().size());
  for (const auto& r : refs) {
    const auto len = static_cast<long>(r.size());
    const long d = std::labs(len - c_len), best = std::labs(r_len - c_len);
    if (d < best || (d == best && len < r_len)) r_len = len;
  }
  const double bp = c_len >= r_len ? 1.0 : std::exp(1.0 - static_cast<double>(r_len) / static_cast<double>(c_len));
  return bp * std::exp(log_sum / max_n);
}

// ---------------------------------------------------------------------------
// CIDEr

CiderScorer::CiderScorer(const std::vector<std::vector<std::string>>& corpus_refs)
    : documents_(static_cast<int>(corpus_refs.size())), df_(kMaxN) {
  for (const auto& refs : corpus_refs) {
    for (int n = 1; n <= kMaxN; ++n) {
      std::set<std::string> seen;
      for (const auto& r : refs) {
        for (const auto& [g, c] : ngrams(tokenize(r), n)) seen.insert(g);
      }
      for (const auto& g : seen) ++df_[static_cast<std::size_t>(n - 1)][g];
    }
  }
}

double CiderScorer::idf(const std::string& gram, int n) const {
  const auto& table = df_[static_cast<std::size_t>(n - 1)];
  const auto it = table.find(gram);
  const double df = it == table.end() ? 0.0 : it->second;
  return std::log((1.0 + documents_) / (1.0 + df)) + 1.0;
}

std::vector<std::map<std::string, double>> CiderScorer::vectors(const std::string& caption) const {
  const auto words = tokenize(caption);
  std::vector<std::map<std::string, double>> out(kMaxN);
  for (int n = 1; n <= kMaxN; ++n) {
    for (const auto& [g, count] : ngrams(words, n)) out[static_cast<std::size_t>(n - 1)][g] = count * idf(g, n);
  }
  return out;
}

namespace {

double cosine(const std::map<std::string, double>& a, const std::map<std::string, double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [g, v] : a) {
    na += v * v;
    const auto it = b.find(g);
    if (it != b.end()) dot += v * it->second;
  }
  for (const auto& [g, v] : b) nb += v * v;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

double CiderScorer::score(const std::string& candidate, const std::vector<std::string>& references) const {
  if (references.empty()) return 0.0;
  const auto cand = vectors(candidate);
  double total = 0.0;
  for (const auto& r : references) {
    const auto ref = vectors(r);
    double per_n = 0.0;
    for (int n = 0; n < kMaxN; ++n) per_n += cosine(cand[static_cast<std::size_t>(n)], ref[static_cast<std::size_t>(n)]);
    total += per_n / kMaxN;
  }
  return 10.0 * total / static_cast<double>(references.size());
}

double CiderScorer::similarity(const std::string& a, const std::string& b) const {
  const auto va = vectors(a);
  const auto vb = vectors(b);
  double sum = 0.0;
  int orders = 0;
  for (std::size_t n = 0; n < static_cast<std::size_t>(kMaxN); ++n) {
    if (va[n].empty() && vb[n].empty()) continue;
    sum += cosine(va[n], vb[n]);
    ++orders;
  }
  return orders == 0 ? 1.0 : sum / orders;
}

// ---------------------------------------------------------------------------
// Diversity

double div_n(const std::vector<std::string>& captions, int n) {
  if (captions.empty()) throw std::invalid_argument("div_n: needs at least one caption");
  std::set<std::string> distinct;
  long total = 0;
  for (const auto& c : captions) {
    for (const auto& [g, count] : ngrams(tokenize(c), n)) {
      distinct.insert(g);
      total += count;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(distinct.size()) / static_cast<double>(total);
}

double self_cider_from_kernel(const nn::Matrix& kernel) {
  const auto k = kernel.rows();
  if (k < 2 || kernel.cols() != k) throw std::invalid_argument("self_cider: needs a square kernel with K >= 2");
  const Eigen::MatrixXd s = kernel;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(s, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd lambda = solver.eigenvalues().cwiseMax(0.0);
  const double total = lambda.sum();
  if (total <= 0.0) return 0.0;
  const double ratio = lambda.maxCoeff() / total;
  const double score = -std::log(ratio) / std::log(static_cast<double>(k));
  return std::clamp(score, 0.0, 1.0);
}

double self_cider(const std::vector<std::string>& captions, const CiderScorer& scorer) {
  const auto k = static_cast<Eigen::Index>(captions.size());
  if (k < 2) throw std::invalid_argument("self_cider: needs K >= 2 captions");
  nn::Matrix s(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    s(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < k; ++j) {
      s(i, j) = s(j, i) = scorer.similarity(captions[static_cast<std::size_t>(i)], captions[static_cast<std::size_t>(j)]);
    }
  }
  return self_cider_from_kernel(s);
}

std::optional<double> cover_ratio(const std::vector<std::string>& captions, const std::vector<OcrToken>& tokens) {
  std::set<std::vector<std::string>> distinct;
  for (const auto& t : tokens) {
    auto words = tokenize(t.text);
    if (!words.empty()) distinct.insert(std::move(words));
  }
  if (distinct.empty()) return std::nullopt;
  std::vector<std::vector<std::string>> caps;
  for (const auto& c : captions) caps.push_back(tokenize(c));
  int covered = 0;
  for (const auto& needle : distinct) {
    const bool hit = std::any_of(caps.begin(), caps.end(), [&](const auto& words) {
      return std::search(words.begin(), words.end(), needle.begin(), needle.end()) != words.end();
    });
    covered += hit;
  }
  return static_cast<double>(covered) / static_cast<double>(distinct.size());
}

// ---------------------------------------------------------------------------
// Corpus evaluation

MetricReport evaluate(const std::vector<GenerationResult>& results, const std::vector<Scene>& scenes,
                      CaptionSource source) {
  std::unordered_map<std::string, const Scene*> by_id;
  for (const auto& s : scenes) by_id.emplace(s.id, &s);
  std::vector<const Scene*> matched;
  std::vector<std::vector<std::string>> corpus;
  for (const auto& r : results) {
    const auto it = by_id.find(r.scene_id);
    if (it == by_id.end()) throw ValidationError(r.scene_id, "generation result has no matching scene");
    matched.push_back(it->second);
    corpus.push_back(it->second->references);
  }
  const CiderScorer scorer(corpus);

  MetricReport report;
  report.captions_from = source == CaptionSource::generated ? "generated" : "refs";
  int accuracy_images = 0;
  int diversity_images = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const GenerationResult& r = results[i];
    const Scene& scene = *matched[i];
    ImageMetrics m;
    m.id = r.scene_id;

    std::vector<std::string> pool;
    if (source == CaptionSource::references) {
      pool = scene.references;
    } else {
      for (const auto& c : r.refined) pool.push_back(c.caption);
    }
    m.captions = static_cast<int>(pool.size());

    if (!scene.references.empty()) {
      const std::string& top = r.refined.empty() ? r.visual_caption : r.refined.front().caption;
      m.bleu4 = bleu(top, scene.references);
      m.cider = scorer.score(top, scene.references);
      m.cider_visual = scorer.score(r.visual_caption, scene.references);
      report.bleu4 += m.bleu4;
      report.cider += m.cider;
      report.cider_visual += m.cider_visual;
      ++accuracy_images;
    }
    if (!pool.empty()) {
      m.div1 = div_n(pool, 1);
      m.div2 = div_n(pool, 2);
      report.div1 += m.div1;
      report.div2 += m.div2;
      ++diversity_images;
      if (pool.size() >= 2) {
        m.self_cider = self_cider(pool, scorer);
        report.self_cider += *m.self_cider;
        ++report.self_cider_images;
      }
      m.cover_ratio = cover_ratio(pool, scene.ocr_tokens);
      if (m.cover_ratio) {
        report.cover_ratio += *m.cover_ratio;
        ++report.cover_ratio_images;
      }
    }
    report.images.push_back(std::move(m));
  }
  auto mean = [](double& total, int n) { total = n > 0 ? total / n : 0.0; };
  mean(report.bleu4, accuracy_images);
  mean(report.cider, accuracy_images);
  mean(report.cider_visual, accuracy_images);
  mean(report.div1, diversity_images);
  mean(report.div2, diversity_images);
  mean(report.self_cider, report.self_cider_images);
  mean(report.cover_ratio, report.cover_ratio_images);
  return report;
}

nlohmann::json to_json(const MetricReport& r) {
  using nlohmann::json;
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json images = json::array();
  for (const auto& m : r.images) {
    images.push_back({{"id", m.id},
                      {"bleu4", m.bleu4},
                      {"cider", m.cider},
                      {"cider_visual", m.cider_visual},
                      {"div1", m.div1},
                      {"div2", m.div2},
                      {"self_cider", opt(m.self_cider)},
                      {"cover_ratio", opt(m.cover_ratio)},
                      {"captions", m.captions}});
  }
  return {{"captions_from", r.captions_from},
          {"bleu4", r.bleu4},
          {"cider", r.cider},
          {"cider_visual", r.cider_visual},
          {"div1", r.div1},
          {"div2", r.div2},
          {"self_cider", r.self_cider},
          {"self_cider_images", r.self_cider_images},
          {"cover_ratio", r.cover_ratio},
          {"cover_ratio_images", r.cover_ratio_images},
          {"images", std::move(images)}};
}

}  // namespace anchorcap
