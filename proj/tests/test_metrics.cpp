#include <doctest.h>

#include <cmath>

#include "anchorcap/metrics.hpp"
#include "anchorcap/vocab.hpp"

using namespace anchorcap;

namespace {

OcrToken ocr(const std::string& text) {
  OcrToken t;
  t.text = text;
  return t;
}

using Vec = std::map<std::string, double>;

std::string padded(const std::string& text) {
  std::string s = " ";
  for (const auto& w : tokenize(text)) s += w + " ";
  return s;
}

// TF-IDF vector of one order, idf smoothed as log((1 + N) / (1 + df)) + 1.
Vec tfidf(const std::string& caption, int n, const std::vector<std::vector<std::string>>& corpus) {
  const auto words = tokenize(caption);
  Vec v;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= words.size(); ++i) {
    std::string g;
    for (int k = 0; k < n; ++k) g += (k ? " " : "") + words[i + static_cast<std::size_t>(k)];
    v[g] += 1.0;
  }
  for (auto& [g, w] : v) {
    int df = 0;
    for (const auto& refs : corpus) {
      bool hit = false;
      for (const auto& r : refs) hit = hit || padded(r).find(" " + g + " ") != std::string::npos;
      df += hit ? 1 : 0;
    }
    w *= std::log((1.0 + static_cast<double>(corpus.size())) / (1.0 + df)) + 1.0;
  }
  return v;
}

double cosine(const Vec& a, const Vec& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [g, w] : a) {
    na += w * w;
    if (auto it = b.find(g); it != b.end()) dot += w * it->second;
  }
  for (const auto& [g, w] : b) nb += w * w;
  return na > 0 && nb > 0 ? dot / std::sqrt(na * nb) : 0.0;
}

double cider_oracle(const std::string& cand, const std::vector<std::string>& refs,
                    const std::vector<std::vector<std::string>>& corpus) {
  double total = 0.0;
  for (int n = 1; n <= 4; ++n) {
    double per_n = 0.0;
    for (const auto& r : refs) per_n += cosine(tfidf(cand, n, corpus), tfidf(r, n, corpus));
    total += per_n / static_cast<double>(refs.size());
  }
  return 10.0 * total / 4.0;
}

}  // namespace

TEST_CASE("BLEU") {
  CHECK(bleu("the cat sat on the mat", {"a dog", "the cat sat on the mat"}) == doctest::Approx(1.0));
  CHECK(bleu("the the the the", {"the cat sat down"}) == 0.0);
  CHECK(bleu("the the the the", {"the cat sat down"}, 1) == doctest::Approx(0.25));
  CHECK(bleu("", {"the cat"}) == 0.0);
  // precisions 6/7, 5/6, 4/5, 3/4 and no brevity penalty
  CHECK(bleu("the cat sat on the mat today", {"the cat sat on the mat"}) ==
        doctest::Approx(std::pow(3.0 / 7.0, 0.25)).epsilon(1e-12));
  // all precisions 1, brevity penalty exp(1 - 6/4)
  CHECK(bleu("the cat sat on", {"the cat sat on the mat"}) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  // closest reference length: 4 words beats 7
  CHECK(bleu("the cat sat on", {"the cat sat on the red mat", "the cat sat on"}) == doctest::Approx(1.0));
  CHECK_THROWS(bleu("a", {}));
}

TEST_CASE("CIDEr: identity, disjointness and reference order") {
  const std::vector<std::vector<std::string>> one{{"a red stop sign"}};
  CHECK(CiderScorer(one).score("a red stop sign", {"a red stop sign"}) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(CiderScorer(one).score("blue bus", {"a red stop sign"}) == 0.0);

  const std::vector<std::vector<std::string>> corpus{{"a red stop sign", "the sign says stop"},
                                                     {"a bus to boston", "the boston bus"}};
  const CiderScorer scorer(corpus);
  CHECK(scorer.documents() == 2);
  const double forward = scorer.score("a sign that says stop", corpus[0]);
  const double reversed = scorer.score("a sign that says stop", {corpus[0][1], corpus[0][0]});
  CHECK(forward == doctest::Approx(reversed).epsilon(1e-12));
}

TEST_CASE("CIDEr matches an independent TF-IDF cosine computation") {
  const std::vector<std::vector<std::string>> corpus{{"a red stop sign", "the sign says stop", "stop sign ahead"},
                                                     {"a bus to boston", "the boston bus", "a red bus"},
                                                     {"a shirt with number 23", "a jersey reading 23"}};
  const CiderScorer scorer(corpus);
  for (const std::string cand : {"a red sign says stop", "the red bus to boston", "number 23", "a a a"}) {
    for (const auto& refs : corpus) {
      CHECK(scorer.score(cand, refs) == doctest::Approx(cider_oracle(cand, refs, corpus)).epsilon(1e-10));
    }
  }
  CHECK(scorer.idf("stop", 1) == doctest::Approx(std::log(4.0 / 2.0) + 1.0));
  CHECK(scorer.idf("red", 1) == doctest::Approx(std::log(4.0 / 3.0) + 1.0));
  CHECK(scorer.idf("zebra", 1) == doctest::Approx(std::log(4.0) + 1.0));
}

TEST_CASE("cider equals 10 when the candidate equals every reference and they are the corpus") {
  const std::vector<std::string> refs{"a sign that says stop", "a sign that says stop"};
  CHECK(CiderScorer({refs}).score("a sign that says stop", refs) == doctest::Approx(10.0));
}

TEST_CASE("Div-n") {
  CHECK(div_n({"a b", "a b"}, 1) == doctest::Approx(0.5));
  CHECK(div_n({"a b c", "a b d"}, 2) == doctest::Approx(0.75));
  CHECK(div_n({"stop", "stop", "stop", "stop"}, 1) == doctest::Approx(0.25));
  CHECK(div_n({"a", "b"}, 2) == 0.0);
  CHECK(div_n({"A B", "a b"}, 1) == div_n({"a b", "a b"}, 1));
  CHECK(div_n({"x y z", "a b"}, 1) == div_n({"a b", "x y z"}, 1));
}

TEST_CASE("SelfCIDEr from a kernel") {
  CHECK(self_cider_from_kernel(nn::Matrix::Ones(3, 3)) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(self_cider_from_kernel(nn::Matrix::Identity(4, 4)) == doctest::Approx(1.0).epsilon(1e-12));
  nn::Matrix half = nn::Matrix::Constant(3, 3, 0.5);
  half.diagonal().setOnes();
  // eigenvalues {2, 0.5, 0.5}
  CHECK(self_cider_from_kernel(half) == doctest::Approx(-std::log(2.0 / 3.0) / std::log(3.0)).epsilon(1e-12));
  CHECK(self_cider_from_kernel(half) == doctest::Approx(0.369).epsilon(1e-3));
  CHECK_THROWS(self_cider_from_kernel(nn::Matrix::Ones(1, 1)));
}

TEST_CASE("SelfCIDEr over captions") {
  const CiderScorer scorer({{"a red stop sign", "a bus to boston"}, {"number 23 shirt"}});
  CHECK(self_cider({"a red stop sign", "a red stop sign", "a red stop sign"}, scorer) ==
        doctest::Approx(0.0).epsilon(1e-12));
  CHECK(self_cider({"red", "bus", "shirt"}, scorer) == doctest::Approx(1.0).epsilon(1e-12));
  const double mixed = self_cider({"a red stop sign", "a red bus", "number 23"}, scorer);
  CHECK(mixed > 0.0);
  CHECK(mixed < 1.0);
  CHECK(self_cider({"number 23", "a red bus", "a red stop sign"}, scorer) == doctest::Approx(mixed).epsilon(1e-12));
  CHECK(scorer.similarity("a red bus", "a red bus") == doctest::Approx(1.0));
  CHECK(scorer.similarity("a red bus", "a blue car") == scorer.similarity("a blue car", "a red bus"));
}

TEST_CASE("Cover ratio") {
  const std::vector<OcrToken> tokens{ocr("STOP"), ocr("ahead")};
  CHECK(*cover_ratio({"a stop sign", "a red sign"}, tokens) == doctest::Approx(0.5));
  CHECK(*cover_ratio({"a red sign"}, tokens) == 0.0);
  CHECK(*cover_ratio({"stop", "road Ahead"}, tokens) == 1.0);
  CHECK_FALSE(cover_ratio({"a sign"}, {}).has_value());
  // duplicated texts count once; multi-word texts match as sequences; "stopped" is not "stop"
  CHECK(*cover_ratio({"stop here"}, {ocr("stop"), ocr("Stop"), ocr("new york")}) == doctest::Approx(0.5));
  CHECK(*cover_ratio({"welcome to new york"}, {ocr("new york")}) == 1.0);
  CHECK(*cover_ratio({"it stopped"}, {ocr("stop")}) == 0.0);
}

TEST_CASE("evaluate aggregates per image and rejects unknown ids") {
  Scene a;
  a.id = "a";
  a.ocr_tokens = {ocr("stop"), ocr("ahead")};
  a.references = {"a sign that says stop", "stop sign ahead"};
  Scene b;
  b.id = "b";
  b.references = {"a big red bus"};

  GenerationResult ga;
  ga.scene_id = "a";
  ga.visual_caption = "a sign that says <unk>";
  ga.refined = {{0, "stop", {1}, {"ahead"}, "a sign that says stop", 0.7},
                {1, "ahead", {}, {}, "a road ahead", 0.2}};
  GenerationResult gb;
  gb.scene_id = "b";
  gb.visual_caption = "a big red bus";

  const MetricReport r = evaluate({ga, gb}, {a, b});
  REQUIRE(r.images.size() == 2);
  CHECK(r.images[0].bleu4 == doctest::Approx(1.0));
  CHECK(r.images[1].bleu4 == doctest::Approx(1.0));
  CHECK(r.bleu4 == doctest::Approx(1.0));
  CHECK(r.images[0].cover_ratio.value() == 1.0);
  CHECK_FALSE(r.images[1].cover_ratio.has_value());
  CHECK(r.cover_ratio_images == 1);
  CHECK(r.cover_ratio == 1.0);
  CHECK(r.self_cider_images == 1);
  CHECK(r.images[0].captions == 2);
  CHECK(r.images[0].div1 == doctest::Approx(div_n({"a sign that says stop", "a road ahead"}, 1)));
  // diversity means skip images without refined captions
  CHECK(r.images[1].captions == 0);
  CHECK(r.div1 == doctest::Approx(r.images[0].div1));
  CHECK(r.images[0].cider_visual < r.images[0].cider);

  const MetricReport refs = evaluate({ga, gb}, {a, b}, CaptionSource::references);
  CHECK(refs.captions_from == "refs");
  CHECK(refs.images[0].cover_ratio.value() == 1.0);
  CHECK(refs.images[0].div1 == doctest::Approx(div_n(a.references, 1)));

  GenerationResult stray = gb;
  stray.scene_id = "zzz";
  CHECK_THROWS_AS(evaluate({stray}, {a, b}), ValidationError);
  CHECK(to_json(r).contains("images"));
}
