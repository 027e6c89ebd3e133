#include "anchorcap/inference.hpp"

#include <fstream>
#include <stdexcept>

namespace anchorcap {

using nlohmann::json;

namespace {

std::string visual_text(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    if (id == kEos) break;
    out += (out.empty() ? "" : " ") + vocab.word(id);
  }
  return out;
}

RefinedCaption refine(const AnchorCaptioner& model, nn::Tape& tape, const Scene& scene, const VisualOutput& visual,
                      const AnchorCentredGraph& acg, double score) {
  std::vector<std::string> slot_text;
  for (int k : acg.slots()) slot_text.push_back(scene.ocr_tokens[static_cast<std::size_t>(k)].text);
  const TextOutput text = model.ancm().text_caption(tape, acg.embedding, visual.hidden, nullptr);

  RefinedCaption r;
  r.anchor = acg.anchor;
  r.anchor_text = slot_text.front();
  r.members = acg.members;
  r.member_texts.assign(slot_text.begin() + 1, slot_text.end());
  r.caption = render_tokens(text.tokens, model.vocab(), slot_text);
  r.anchor_score = score;
  return r;
}

}  // namespace

GenerationResult generate(const AnchorCaptioner& model, const Scene& scene, int k) {
  if (k < 1) throw std::invalid_argument("generate: K must be >= 1");
  nn::Tape tape(false);
  const FusedFeatures fused = model.fusion()(tape, scene);
  const VisualOutput visual = model.ancm().visual_caption(tape, fused, nullptr);

  GenerationResult out;
  out.scene_id = scene.id;
  out.visual_caption = visual_text(visual.ids, model.vocab());
  const AnchorScores scores = model.anpm().predict_anchor_scores(tape, fused);
  if (scores.empty()) return out;
  const auto confidence = token_confidences(scene);
  for (int anchor : select_anchors(scores, SelectMode::topk, k)) {
    const AnchorCentredGraph acg =
        model.anpm().build_acg(tape, fused, confidence, anchor, model.config().graph_threshold);
    out.refined.push_back(
        refine(model, tape, scene, visual, acg, scores.scores[static_cast<std::size_t>(anchor)]));
  }
  return out;
}

GenerationResult generate_with_acgs(const AnchorCaptioner& model, const Scene& scene,
                                    const std::vector<AcgChoice>& acgs) {
  nn::Tape tape(false);
  const FusedFeatures fused = model.fusion()(tape, scene);
  const VisualOutput visual = model.ancm().visual_caption(tape, fused, nullptr);

  GenerationResult out;
  out.scene_id = scene.id;
  out.visual_caption = visual_text(visual.ids, model.vocab());
  if (acgs.empty()) return out;
  const AnchorScores scores = model.anpm().predict_anchor_scores(tape, fused);
  const auto confidence = token_confidences(scene);
  for (const auto& choice : acgs) {
    const GraphScores gs = model.anpm().graph_scores(tape, fused, confidence, choice.anchor);
    const AnchorCentredGraph acg =
        assemble_acg(fused, gs, choice.anchor, choice.members, model.config().features.max_tokens);
    out.refined.push_back(
        refine(model, tape, scene, visual, acg, scores.scores[static_cast<std::size_t>(choice.anchor)]));
  }
  return out;
}

json to_json(const GenerationResult& r) {
  json refined = json::array();
  for (const auto& c : r.refined) {
    refined.push_back({{"anchor", c.anchor},
                       {"anchor_text", c.anchor_text},
                       {"members", c.members},
                       {"member_texts", c.member_texts},
                       {"caption", c.caption},
                       {"anchor_score", c.anchor_score}});
  }
  return {{"id", r.scene_id}, {"visual_caption", r.visual_caption}, {"refined", std::move(refined)}};
}

GenerationResult generation_from_json(const json& j) {
  GenerationResult r;
  r.scene_id = j.at("id").get<std::string>();
  r.visual_caption = j.at("visual_caption").get<std::string>();
  for (const auto& c : j.at("refined")) {
    RefinedCaption rc;
    rc.anchor = c.at("anchor").get<int>();
    rc.anchor_text = c.at("anchor_text").get<std::string>();
    rc.members = c.at("members").get<std::vector<int>>();
    rc.member_texts = c.at("member_texts").get<std::vector<std::string>>();
    rc.caption = c.at("caption").get<std::string>();
    rc.anchor_score = c.at("anchor_score").get<double>();
    r.refined.push_back(std::move(rc));
  }
  return r;
}

void write_generations(const std::vector<GenerationResult>& results, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : results) out << to_json(r).dump() << '\n';
}

std::vector<GenerationResult> read_generations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot open " + path.string());
  std::vector<GenerationResult> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(generation_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return out;
}

}  // namespace anchorcap
