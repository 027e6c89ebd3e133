#include "anchorcap/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace anchorcap {

std::string to_string(AnchorRule r) {
  switch (r) {
    case AnchorRule::large:
      return "large";
    case AnchorRule::centre:
      return "centre";
    case AnchorRule::gt:
      return "gt";
  }
  return "?";
}

std::string to_string(GroupRule r) {
  switch (r) {
    case GroupRule::all:
      return "all";
    case GroupRule::around:
      return "around";
    case GroupRule::random:
      return "random";
  }
  return "?";
}

AnchorRule parse_anchor_rule(const std::string& s) {
  if (s == "large") return AnchorRule::large;
  if (s == "centre" || s == "center") return AnchorRule::centre;
  if (s == "gt") return AnchorRule::gt;
  throw ConfigError("unknown anchor rule '" + s + "' (large|centre|gt)");
}

GroupRule parse_group_rule(const std::string& s) {
  if (s == "all") return GroupRule::all;
  if (s == "around") return GroupRule::around;
  if (s == "random") return GroupRule::random;
  throw ConfigError("unknown group rule '" + s + "' (all|around|random)");
}

namespace {

double area(const BBox& b) { return (b[2] - b[0]) * (b[3] - b[1]); }

std::pair<double, double> centre(const BBox& b) { return {(b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0}; }

double distance(std::pair<double, double> a, std::pair<double, double> b) {
  return std::hypot(a.first - b.first, a.second - b.second);
}

}  // namespace

AcgChoice rule_based_acg(const Scene& scene, AnchorRule anchor_rule, GroupRule group_rule, int k_around,
                         std::uint64_t seed, std::optional<int> gt_anchor) {
  const auto& tokens = scene.ocr_tokens;
  const int m = static_cast<int>(tokens.size());
  if (m == 0) throw ValidationError(scene.id, "rule-based ACG needs at least one OCR token");
  if (k_around < 0) throw std::invalid_argument("k_around must be >= 0");

  AcgChoice acg;
  switch (anchor_rule) {
    case AnchorRule::large: {
      acg.anchor = 0;
      for (int i = 1; i < m; ++i) {
        if (area(tokens[static_cast<std::size_t>(i)].bbox) > area(tokens[static_cast<std::size_t>(acg.anchor)].bbox)) acg.anchor = i;
      }
      break;
    }
    case AnchorRule::centre: {
      acg.anchor = 0;
      auto d = [&](int i) { return distance(centre(tokens[static_cast<std::size_t>(i)].bbox), {0.5, 0.5}); };
      for (int i = 1; i < m; ++i) {
        if (d(i) < d(acg.anchor)) acg.anchor = i;
      }
      break;
    }
    case AnchorRule::gt:
      if (!gt_anchor || *gt_anchor < 0 || *gt_anchor >= m) {
        throw ValidationError(scene.id, "gt anchor rule needs a mined anchor");
      }
      acg.anchor = *gt_anchor;
      break;
  }

  std::vector<int> others;
  for (int i = 0; i < m; ++i) {
    if (i != acg.anchor) others.push_back(i);
  }
  const auto keep = std::min<std::size_t>(static_cast<std::size_t>(k_around), others.size());
  switch (group_rule) {
    case GroupRule::all:
      acg.members = others;
      break;
    case GroupRule::around: {
      const auto c = centre(tokens[static_cast<std::size_t>(acg.anchor)].bbox);
      std::stable_sort(others.begin(), others.end(), [&](int a, int b) {
        return distance(centre(tokens[static_cast<std::size_t>(a)].bbox), c) <
               distance(centre(tokens[static_cast<std::size_t>(b)].bbox), c);
      });
      acg.members.assign(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(keep));
      break;
    }
    case GroupRule::random: {
      std::mt19937_64 rng(seed);
      for (std::size_t i = 0; i < keep; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (others.size() - i));
        std::swap(others[i], others[j]);
      }
      acg.members.assign(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(keep));
      break;
    }
  }
  std::sort(acg.members.begin(), acg.members.end());
  return acg;
}

std::vector<AblationRow> rule_ablation(const AnchorCaptioner& model, const DatasetManifest& data, int k_around,
                                       std::uint64_t seed) {
  std::vector<AblationRow> rows;
  for (AnchorRule a : {AnchorRule::large, AnchorRule::centre}) {
    for (GroupRule g : {GroupRule::all, GroupRule::around, GroupRule::random}) {
      std::vector<GenerationResult> results;
      for (std::size_t i = 0; i < data.scenes.size(); ++i) {
        const Scene& scene = data.scenes[i];
        std::vector<AcgChoice> acgs;
        if (!scene.ocr_tokens.empty()) acgs.push_back(rule_based_acg(scene, a, g, k_around, seed + i));
        results.push_back(generate_with_acgs(model, scene, acgs));
      }
      rows.push_back({to_string(a) + "+" + to_string(g), evaluate(results, data.scenes), std::nullopt});
    }
  }
  return rows;
}

std::vector<AblationRow> strategy_ablation(const DatasetManifest& data, const TrainConfig& base, int topk) {
  std::vector<AblationRow> rows;
  for (GraphStrategy s : {GraphStrategy::sequence, GraphStrategy::independent, GraphStrategy::multiple}) {
    TrainConfig config = base;
    config.model.strategy = s;
    TrainingSession session(data, config);
    while (session.iteration() < config.iterations) session.step();
    std::vector<GenerationResult> results;
    for (const auto& scene : data.scenes) results.push_back(generate(session.model(), scene, topk));
    rows.push_back({to_string(s), evaluate(results, data.scenes), evaluate_anpm(session.model(), session.examples())});
  }
  return rows;
}

nlohmann::json to_json(const std::vector<AblationRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j = to_json(r.metrics);
    j.erase("images");
    j["name"] = r.name;
    if (r.anpm) {
      j["anchor_accuracy"] = r.anpm->anchor_accuracy;
      j["graph_f1"] = r.anpm->graph_f1;
    }
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace anchorcap
