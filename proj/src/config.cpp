#include "anchorcap/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace anchorcap {

std::string to_string(GraphStrategy s) {
  switch (s) {
    case GraphStrategy::sequence:
      return "sequence";
    case GraphStrategy::independent:
      return "independent";
    case GraphStrategy::multiple:
      return "multiple";
  }
  return "?";
}

GraphStrategy parse_graph_strategy(const std::string& s) {
  if (s == "sequence") return GraphStrategy::sequence;
  if (s == "independent") return GraphStrategy::independent;
  if (s == "multiple") return GraphStrategy::multiple;
  throw ConfigError("unknown graph strategy '" + s + "' (sequence|independent|multiple)");
}

std::string to_string(AnchorLossKind k) { return k == AnchorLossKind::bce ? "bce" : "categorical"; }

AnchorLossKind parse_anchor_loss(const std::string& s) {
  if (s == "bce") return AnchorLossKind::bce;
  if (s == "categorical") return AnchorLossKind::categorical;
  throw ConfigError("unknown anchor loss '" + s + "' (bce|categorical)");
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.dim = 768;
  c.heads = 12;
  c.ffn_dim = 3072;
  c.fusion_layers = 2;
  c.visual_layers = 4;
  c.text_layers = 4;
  c.graph_layers = 1;
  c.max_caption = 30;
  c.features.max_objects = 100;
  c.features.max_tokens = 50;
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.dim = 8;
  c.heads = 1;
  c.ffn_dim = 16;
  c.fusion_layers = 1;
  c.visual_layers = 1;
  c.text_layers = 1;
  c.graph_layers = 1;
  c.max_caption = 5;
  c.features = FeatureDims{4, 3, 3, 3, 3};
  return c;
}

nlohmann::json to_json(const ModelConfig& c) {
  return {
      {"dim", c.dim},
      {"heads", c.heads},
      {"ffn_dim", c.ffn_dim},
      {"fusion_layers", c.fusion_layers},
      {"visual_layers", c.visual_layers},
      {"text_layers", c.text_layers},
      {"graph_layers", c.graph_layers},
      {"max_caption", c.max_caption},
      {"d_app", c.features.d_app},
      {"d_ft", c.features.d_ft},
      {"d_phoc", c.features.d_phoc},
      {"max_objects", c.features.max_objects},
      {"max_tokens", c.features.max_tokens},
      {"vocab_size", c.vocab_size},
      {"strategy", to_string(c.strategy)},
      {"graph_threshold", c.graph_threshold},
      {"anchor_loss", to_string(c.anchor_loss)},
      {"alpha", c.weights.alpha},
      {"beta", c.weights.beta},
      {"eta", c.weights.eta},
      {"init_seed", c.init_seed},
  };
}

namespace {

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  ModelConfig c;
  read(j, "dim", c.dim);
  read(j, "heads", c.heads);
  read(j, "ffn_dim", c.ffn_dim);
  read(j, "fusion_layers", c.fusion_layers);
  read(j, "visual_layers", c.visual_layers);
  read(j, "text_layers", c.text_layers);
  read(j, "graph_layers", c.graph_layers);
  read(j, "max_caption", c.max_caption);
  read(j, "d_app", c.features.d_app);
  read(j, "d_ft", c.features.d_ft);
  read(j, "d_phoc", c.features.d_phoc);
  read(j, "max_objects", c.features.max_objects);
  read(j, "max_tokens", c.features.max_tokens);
  read(j, "vocab_size", c.vocab_size);
  read(j, "graph_threshold", c.graph_threshold);
  read(j, "alpha", c.weights.alpha);
  read(j, "beta", c.weights.beta);
  read(j, "eta", c.weights.eta);
  read(j, "init_seed", c.init_seed);
  if (j.contains("strategy")) c.strategy = parse_graph_strategy(j.at("strategy").get<std::string>());
  if (j.contains("anchor_loss")) c.anchor_loss = parse_anchor_loss(j.at("anchor_loss").get<std::string>());
  if (c.dim <= 0 || c.heads <= 0 || c.dim % c.heads != 0) throw ConfigError("dim must be a positive multiple of heads");
  if (c.max_caption < 1) throw ConfigError("max_caption must be >= 1");
  return c;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// Numbers and booleans are typed; everything else stays a string.
nlohmann::json parse_scalar(const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  nlohmann::json parsed = nlohmann::json::parse(v, nullptr, false);
  if (!parsed.is_discarded() && parsed.is_number()) return parsed;
  return v;
}

}  // namespace

nlohmann::json load_flat_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ConfigError("config file " + path.string() + " is not a JSON object");
    return j;
  }
  nlohmann::json j = nlohmann::json::object();
  std::istringstream lines(text);
  std::string line;
  int lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    j[trim(line.substr(0, eq))] = parse_scalar(trim(line.substr(eq + 1)));
  }
  return j;
}

}  // namespace anchorcap
