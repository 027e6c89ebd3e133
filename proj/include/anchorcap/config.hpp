#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "anchorcap/scene_io.hpp"

namespace anchorcap {

enum class GraphStrategy { sequence, independent, multiple };
enum class AnchorLossKind { bce, categorical };

std::string to_string(GraphStrategy s);
GraphStrategy parse_graph_strategy(const std::string& s);
std::string to_string(AnchorLossKind k);
AnchorLossKind parse_anchor_loss(const std::string& s);

// total = L_anchor + alpha * L_graph + beta * L_vcap + eta * L_tcap
struct LossWeights {
  double alpha = 1.0;
  double beta = 1.0;
  double eta = 1.0;

  bool operator==(const LossWeights&) const = default;
};

struct ModelConfig {
  int dim = 64;
  int heads = 4;
  int ffn_dim = 128;
  int fusion_layers = 1;  // L1
  int visual_layers = 2;  // L2
  int text_layers = 2;    // L3
  int graph_layers = 1;   // stack depth for the "multiple" graph builder
  int max_caption = 30;   // C
  FeatureDims features;
  int vocab_size = kDefaultVocab;
  GraphStrategy strategy = GraphStrategy::sequence;
  double graph_threshold = 0.5;
  AnchorLossKind anchor_loss = AnchorLossKind::bce;
  LossWeights weights;
  std::uint64_t init_seed = 0;

  static constexpr int kDefaultVocab = 4;

  // CPU-minute scale.
  static ModelConfig desk();
  // d=768, 12 heads, L1=2, L2=L3=4, N=100, M=50, C=30.
  static ModelConfig full();
  // d=8, one head, one layer everywhere, N=M=3, C=5: gradient checks.
  static ModelConfig tiny();

  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& c);
// Missing keys keep their desk defaults.
ModelConfig model_config_from_json(const nlohmann::json& j);

// A JSON object, or flat key=value lines ('#' starts a comment) read into one.
nlohmann::json load_flat_config(const std::filesystem::path& path);

}  // namespace anchorcap
