#include "anchorcap/scene_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

namespace anchorcap {

using ordered_json = nlohmann::ordered_json;

namespace {

bool bbox_ok(const BBox& b) {
  for (double v : b) {
    if (!(v >= 0.0 && v <= 1.0)) return false;
  }
  return b[0] <= b[2] && b[1] <= b[3];
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

ordered_json bbox_json(const BBox& b) { return ordered_json::array({b[0], b[1], b[2], b[3]}); }

ordered_json scene_json(const Scene& s) {
  ordered_json j;
  j["id"] = s.id;
  ordered_json objects = ordered_json::array();
  for (const auto& o : s.visual_objects) {
    ordered_json oj;
    oj["app"] = o.appearance;
    oj["bbox"] = bbox_json(o.bbox);
    objects.push_back(std::move(oj));
  }
  j["objects"] = std::move(objects);
  ordered_json ocr = ordered_json::array();
  for (const auto& t : s.ocr_tokens) {
    ordered_json tj;
    tj["text"] = t.text;
    tj["app"] = t.appearance;
    tj["bbox"] = bbox_json(t.bbox);
    tj["word_emb"] = t.word_emb;
    tj["char_emb"] = t.char_emb;
    tj["conf"] = t.confidence;
    ocr.push_back(std::move(tj));
  }
  j["ocr"] = std::move(ocr);
  j["refs"] = s.references;
  return j;
}

BBox parse_bbox(const ordered_json& j, const std::string& scene_id, const std::string& where) {
  if (!j.is_array() || j.size() != 4) {
    throw ValidationError(scene_id, where + ".bbox must have exactly 4 numbers, got " +
                                        std::to_string(j.is_array() ? j.size() : 0));
  }
  BBox b{};
  for (std::size_t i = 0; i < 4; ++i) b[i] = j.at(i).get<double>();
  return b;
}

Scene parse_scene(const ordered_json& j, std::size_t line) {
  if (!j.is_object() || !j.contains("id") || !j["id"].is_string()) {
    throw ParseError(line, "scene record needs a string \"id\"");
  }
  Scene s;
  s.id = j["id"].get<std::string>();
  try {
    for (const auto& oj : j.value("objects", ordered_json::array())) {
      VisualObject o;
      o.appearance = oj.at("app").get<std::vector<double>>();
      o.bbox = parse_bbox(oj.at("bbox"), s.id, "objects[" + std::to_string(s.visual_objects.size()) + "]");
      s.visual_objects.push_back(std::move(o));
    }
    for (const auto& tj : j.value("ocr", ordered_json::array())) {
      OcrToken t;
      t.text = tj.at("text").get<std::string>();
      t.appearance = tj.at("app").get<std::vector<double>>();
      t.bbox = parse_bbox(tj.at("bbox"), s.id, "ocr[" + std::to_string(s.ocr_tokens.size()) + "]");
      t.word_emb = tj.at("word_emb").get<std::vector<double>>();
      t.char_emb = tj.at("char_emb").get<std::vector<double>>();
      t.confidence = tj.at("conf").get<double>();
      s.ocr_tokens.push_back(std::move(t));
    }
    s.references = j.value("refs", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(s.id, std::string("malformed field (line ") + std::to_string(line) + "): " + e.what());
  }
  return s;
}

FeatureDims parse_dims(const ordered_json& j, std::size_t line) {
  try {
    FeatureDims d;
    d.d_app = j.at("d_app").get<int>();
    d.d_ft = j.at("d_ft").get<int>();
    d.d_phoc = j.at("d_phoc").get<int>();
    d.max_objects = j.value("N", d.max_objects);
    d.max_tokens = j.value("M", d.max_tokens);
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(line, std::string("bad manifest dims: ") + e.what());
  }
}

}  // namespace

std::vector<std::string> validate_scene(const Scene& scene, const FeatureDims& dims) {
  std::vector<std::string> out;
  if (scene.id.empty()) out.emplace_back("id is empty");
  if (static_cast<int>(scene.visual_objects.size()) > dims.max_objects) {
    out.push_back("objects: " + std::to_string(scene.visual_objects.size()) + " exceeds N=" +
                  std::to_string(dims.max_objects));
  }
  if (static_cast<int>(scene.ocr_tokens.size()) > dims.max_tokens) {
    out.push_back("ocr: " + std::to_string(scene.ocr_tokens.size()) + " exceeds M=" +
                  std::to_string(dims.max_tokens));
  }
  for (std::size_t i = 0; i < scene.visual_objects.size(); ++i) {
    const auto& o = scene.visual_objects[i];
    const std::string at = "objects[" + std::to_string(i) + "]";
    if (static_cast<int>(o.appearance.size()) != dims.d_app) out.push_back(at + ".app length != d_app");
    if (!bbox_ok(o.bbox)) out.push_back(at + ".bbox out of [0,1] or not ordered");
  }
  for (std::size_t i = 0; i < scene.ocr_tokens.size(); ++i) {
    const auto& t = scene.ocr_tokens[i];
    const std::string at = "ocr[" + std::to_string(i) + "]";
    if (trim(t.text).empty()) out.push_back(at + ".text is empty");
    if (static_cast<int>(t.appearance.size()) != dims.d_app) out.push_back(at + ".app length != d_app");
    if (static_cast<int>(t.word_emb.size()) != dims.d_ft) out.push_back(at + ".word_emb length != d_ft");
    if (static_cast<int>(t.char_emb.size()) != dims.d_phoc) out.push_back(at + ".char_emb length != d_phoc");
    if (!bbox_ok(t.bbox)) out.push_back(at + ".bbox out of [0,1] or not ordered");
    if (!(t.confidence >= 0.0 && t.confidence <= 1.0)) out.push_back(at + ".conf outside [0,1]");
  }
  return out;
}

DatasetManifest load_scenes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scene file: " + path.string());

  DatasetManifest manifest;
  bool have_header = false;
  std::set<std::string> seen;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (trim(text).empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line, std::string("invalid JSON: ") + e.what());
    }
    if (!have_header && manifest.scenes.empty() && j.is_object() && j.contains("dims")) {
      manifest.dims = parse_dims(j["dims"], line);
      manifest.created_seed = j.value("seed", std::int64_t{0});
      have_header = true;
      continue;
    }
    if (!have_header) throw ParseError(line, "missing manifest header line {\"dims\":...}");
    Scene scene = parse_scene(j, line);
    if (!seen.insert(scene.id).second) throw ValidationError(scene.id, "duplicate scene id");
    if (auto problems = validate_scene(scene, manifest.dims); !problems.empty()) {
      std::string joined;
      for (const auto& p : problems) joined += (joined.empty() ? "" : "; ") + p;
      throw ValidationError(scene.id, joined);
    }
    manifest.scenes.push_back(std::move(scene));
  }
  return manifest;
}

std::string serialize_scenes(const DatasetManifest& manifest) {
  std::ostringstream os;
  ordered_json header;
  header["dims"] = ordered_json{{"d_app", manifest.dims.d_app},
                                {"d_ft", manifest.dims.d_ft},
                                {"d_phoc", manifest.dims.d_phoc},
                                {"N", manifest.dims.max_objects},
                                {"M", manifest.dims.max_tokens}};
  header["seed"] = manifest.created_seed;
  os << header.dump() << "\n";
  for (const auto& s : manifest.scenes) os << scene_json(s).dump() << "\n";
  return os.str();
}

void write_scenes(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write scene file: " + path.string());
  out << serialize_scenes(manifest);
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

// Portable generators: std distributions differ between standard libraries.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit(rng); }

double normal(std::mt19937_64& rng) {
  const double u1 = std::max(unit(rng), 1e-300);
  const double u2 = unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

std::size_t pick(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

constexpr std::uint64_t kObjectSalt = 0x0b1ec7;
constexpr std::uint64_t kWordSalt = 0xfa57;
constexpr std::uint64_t kCharSalt = 0x9c0c;

BBox box_around(double cx, double cy, double w, double h) {
  auto clamp01 = [](double v) { return std::clamp(v, 0.0, 1.0); };
  return {clamp01(cx - w / 2), clamp01(cy - h / 2), clamp01(cx + w / 2), clamp01(cy + h / 2)};
}

double centre_distance(const BBox& a, const BBox& b) {
  const double ax = (a[0] + a[2]) / 2, ay = (a[1] + a[3]) / 2;
  const double bx = (b[0] + b[2]) / 2, by = (b[1] + b[3]) / 2;
  return std::hypot(ax - bx, ay - by);
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
  return out;
}

std::string caption_for(const std::string& object, const std::vector<std::string>& ocr) {
  const bool vowel = !object.empty() && std::string("aeiou").find(object[0]) != std::string::npos;
  return std::string(vowel ? "an " : "a ") + object + " with " + join_words(ocr) + " on it";
}

}  // namespace

std::vector<double> hashed_embedding(const std::string& text, std::uint64_t salt, int dim) {
  std::mt19937_64 rng(fnv1a(text) ^ (salt * 0x9e3779b97f4a7c15ULL));
  std::vector<double> v(static_cast<std::size_t>(dim));
  for (double& x : v) x = normal(rng);
  return v;
}

SynthConfig SynthConfig::defaults() {
  SynthConfig c;
  c.object_words = {"sign", "bottle", "bus", "shirt", "poster", "book", "laptop", "clock", "jersey", "can",
                    "box", "phone"};
  c.ocr_words = {"stop",   "exit",   "coke",   "sale",    "open",    "pepsi",  "nike",  "delta",
                 "metro",  "cafe",   "hotel",  "pizza",   "taxi",    "police", "bank",  "apple",
                 "sony",   "canon",  "nokia",  "adidas",  "puma",    "ford",   "audi",  "tesla",
                 "yale",   "oxford", "boston", "paris",   "london",  "tokyo",  "rome",  "berlin",
                 "miami",  "dallas", "denver", "seattle", "chicago", "austin", "hello", "welcome",
                 "free",   "menu",   "beer",   "wine",    "coffee",  "tea",    "jazz",  "radio"};
  return c;
}

DatasetManifest generate_synthetic(const SynthConfig& config, std::uint64_t seed) {
  if (config.n_scenes <= 0) throw ConfigError("n_scenes must be positive");
  if (config.tokens_per_scene <= 0 || config.objects_per_scene <= 0 || config.refs_per_scene <= 0) {
    throw ConfigError("objects, tokens and refs per scene must be positive");
  }
  if (config.tokens_per_scene > config.dims.max_tokens) throw ConfigError("tokens_per_scene exceeds M");
  if (config.objects_per_scene > config.dims.max_objects) throw ConfigError("objects_per_scene exceeds N");
  if (config.object_words.empty()) throw ConfigError("object vocabulary is empty");
  if (static_cast<int>(config.ocr_words.size()) < config.tokens_per_scene) {
    throw ConfigError("OCR vocabulary smaller than tokens_per_scene");
  }

  const FeatureDims& dims = config.dims;
  std::mt19937_64 rng(seed);
  DatasetManifest manifest;
  manifest.dims = dims;
  manifest.created_seed = static_cast<std::int64_t>(seed);

  for (int si = 0; si < config.n_scenes; ++si) {
    Scene scene;
    char id[32];
    std::snprintf(id, sizeof(id), "syn-%04d", si);
    scene.id = id;

    const std::size_t main_class = pick(rng, config.object_words.size());
    const std::string& object = config.object_words[main_class];
    const int n_main = (config.objects_per_scene + 1) / 2;
    for (int oi = 0; oi < config.objects_per_scene; ++oi) {
      const bool is_main = oi < n_main || config.object_words.size() == 1;
      std::size_t cls = main_class;
      if (!is_main) {
        cls = pick(rng, config.object_words.size() - 1);
        if (cls >= main_class) ++cls;
      }
      VisualObject o;
      o.appearance = hashed_embedding(config.object_words[cls], kObjectSalt, dims.d_app);
      for (double& x : o.appearance) x += 0.1 * normal(rng);
      const double size = is_main ? uniform(rng, 0.3, 0.5) : uniform(rng, 0.1, 0.2);
      o.bbox = box_around(uniform(rng, 0.25, 0.75), uniform(rng, 0.25, 0.75), size, size);
      scene.visual_objects.push_back(std::move(o));
    }

    // Distinct OCR words; the anchor is the token with the largest box.
    std::vector<std::size_t> pool(config.ocr_words.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    for (std::size_t i = 0; i < static_cast<std::size_t>(config.tokens_per_scene); ++i) {
      std::swap(pool[i], pool[i + pick(rng, pool.size() - i)]);
    }
    const int n_tok = config.tokens_per_scene;
    const int anchor = static_cast<int>(pick(rng, static_cast<std::size_t>(n_tok)));
    for (int ti = 0; ti < n_tok; ++ti) {
      OcrToken t;
      t.text = config.ocr_words[pool[static_cast<std::size_t>(ti)]];
      t.appearance.resize(static_cast<std::size_t>(dims.d_app));
      for (double& x : t.appearance) x = normal(rng);
      const bool big = ti == anchor;
      const double w = big ? uniform(rng, 0.25, 0.35) : uniform(rng, 0.05, 0.15);
      const double h = big ? uniform(rng, 0.10, 0.15) : uniform(rng, 0.03, 0.07);
      t.bbox = box_around(uniform(rng, 0.15, 0.85), uniform(rng, 0.15, 0.85), w, h);
      t.word_emb = hashed_embedding(t.text, kWordSalt, dims.d_ft);
      t.char_emb = hashed_embedding(t.text, kCharSalt, dims.d_phoc);
      t.confidence = uniform(rng, 0.5, 1.0);
      scene.ocr_tokens.push_back(std::move(t));
    }

    // Partner = nearest token to the anchor; "other" = any remaining token.
    int partner = -1;
    double best = 1e9;
    for (int ti = 0; ti < n_tok; ++ti) {
      if (ti == anchor) continue;
      const double d = centre_distance(scene.ocr_tokens[static_cast<std::size_t>(ti)].bbox,
                                       scene.ocr_tokens[static_cast<std::size_t>(anchor)].bbox);
      if (d < best) {
        best = d;
        partner = ti;
      }
    }
    std::vector<int> others;
    for (int ti = 0; ti < n_tok; ++ti) {
      if (ti != anchor && ti != partner) others.push_back(ti);
    }
    const int other = others.empty() ? -1 : others[pick(rng, others.size())];

    auto text_of = [&](int i) { return scene.ocr_tokens[static_cast<std::size_t>(i)].text; };
    const int n_refs = config.refs_per_scene;
    for (int r = 0; r < n_refs; ++r) {
      std::vector<std::string> mention;
      const bool last = r == n_refs - 1;
      const bool second_last = r == n_refs - 2;
      if (n_refs >= 4 && last && other >= 0) {
        mention = {text_of(other)};
      } else if ((n_refs >= 4 && second_last) || (n_refs < 4 && last && n_refs > 1) || partner < 0 ||
                 n_refs == 1) {
        mention = {text_of(anchor)};
      } else {
        mention = {text_of(anchor), text_of(partner)};
      }
      scene.references.push_back(caption_for(object, mention));
    }
    manifest.scenes.push_back(std::move(scene));
  }
  return manifest;
}

}  // namespace anchorcap
