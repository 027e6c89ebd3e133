#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "anchorcap/model.hpp"

namespace anchorcap {

struct RefinedCaption {
  int anchor = -1;
  std::string anchor_text;
  std::vector<int> members;
  std::vector<std::string> member_texts;
  std::string caption;
  double anchor_score = 0.0;

  bool operator==(const RefinedCaption&) const = default;
};

struct GenerationResult {
  std::string scene_id;
  std::string visual_caption;
  std::vector<RefinedCaption> refined;  // anchor score descending

  bool operator==(const GenerationResult&) const = default;
};

// An explicit ACG choice (anchor + members), e.g. from a rule-based baseline.
struct AcgChoice {
  int anchor = -1;
  std::vector<int> members;
};

// Fusion and the visual caption run once; each of the top-K anchors gets its
// own ACG and refined caption. K is clipped to the number of OCR tokens; a
// scene without tokens yields the visual caption only.
GenerationResult generate(const AnchorCaptioner& model, const Scene& scene, int k);

// Same pipeline, but with the given ACGs instead of the AnPM's choices. The
// ACG rows still come from the model's graph features for each anchor.
GenerationResult generate_with_acgs(const AnchorCaptioner& model, const Scene& scene,
                                    const std::vector<AcgChoice>& acgs);

nlohmann::json to_json(const GenerationResult& r);
GenerationResult generation_from_json(const nlohmann::json& j);

void write_generations(const std::vector<GenerationResult>& results, const std::filesystem::path& path);
std::vector<GenerationResult> read_generations(const std::filesystem::path& path);

}  // namespace anchorcap
