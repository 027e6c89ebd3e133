#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "anchorcap/inference.hpp"
#include "anchorcap/metrics.hpp"
#include "anchorcap/trainer.hpp"

namespace anchorcap {

enum class AnchorRule { large, centre, gt };
enum class GroupRule { all, around, random };

std::string to_string(AnchorRule r);
std::string to_string(GroupRule r);
AnchorRule parse_anchor_rule(const std::string& s);
GroupRule parse_group_rule(const std::string& s);

inline constexpr int kDefaultAround = 5;

// large: biggest bbox area; centre: bbox centre closest to (0.5, 0.5);
// gt: the mined anchor (gt_anchor must be set). all: every other token;
// around: the k nearest by bbox-centre distance; random: k tokens drawn
// uniformly with `seed`. Ties go to the lower index. Throws for a scene
// without OCR tokens.
AcgChoice rule_based_acg(const Scene& scene, AnchorRule anchor_rule, GroupRule group_rule,
                         int k_around = kDefaultAround, std::uint64_t seed = 0, std::optional<int> gt_anchor = {});

struct AblationRow {
  std::string name;
  MetricReport metrics;
  std::optional<AnpmEvaluation> anpm;  // learned strategies only
};

// One row per (anchor rule, group rule) in {large, centre} x {all, around, random},
// each generating one refined caption per scene with `model`.
std::vector<AblationRow> rule_ablation(const AnchorCaptioner& model, const DatasetManifest& data, int k_around,
                                       std::uint64_t seed);

// Trains one model per graph strategy with `base` (strategy overridden) and
// reports its AnPM scores and top-k generation metrics.
std::vector<AblationRow> strategy_ablation(const DatasetManifest& data, const TrainConfig& base, int topk);

nlohmann::json to_json(const std::vector<AblationRow>& rows);

}  // namespace anchorcap
