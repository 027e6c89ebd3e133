#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace anchorcap {

using BBox = std::array<double, 4>;  // normalised x1, y1, x2, y2

struct VisualObject {
  std::vector<double> appearance;
  BBox bbox{};

  bool operator==(const VisualObject&) const = default;
};

struct OcrToken {
  std::string text;
  std::vector<double> appearance;
  BBox bbox{};
  std::vector<double> word_emb;
  std::vector<double> char_emb;
  double confidence = 1.0;

  bool operator==(const OcrToken&) const = default;
};

struct Scene {
  std::string id;
  std::vector<VisualObject> visual_objects;
  std::vector<OcrToken> ocr_tokens;
  std::vector<std::string> references;

  bool operator==(const Scene&) const = default;
};

// Feature widths plus the per-scene caps on objects (N) and OCR tokens (M).
struct FeatureDims {
  int d_app = 32;
  int d_ft = 16;
  int d_phoc = 16;
  int max_objects = 10;
  int max_tokens = 8;

  bool operator==(const FeatureDims&) const = default;
};

struct DatasetManifest {
  FeatureDims dims;
  std::int64_t created_seed = 0;
  std::vector<Scene> scenes;

  bool operator==(const DatasetManifest&) const = default;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public std::runtime_error {
 public:
  ValidationError(std::string scene_id, const std::string& what)
      : std::runtime_error("scene '" + scene_id + "': " + what), scene_id_(std::move(scene_id)) {}
  const std::string& scene_id() const { return scene_id_; }

 private:
  std::string scene_id_;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Returns one message per broken invariant; empty means the scene is valid.
std::vector<std::string> validate_scene(const Scene& scene, const FeatureDims& dims);

// Reads the line-delimited scene format. The first line may be the manifest
// header {"dims":{...},"seed":...}; every other non-blank line is a scene.
DatasetManifest load_scenes(const std::filesystem::path& path);
void write_scenes(const DatasetManifest& manifest, const std::filesystem::path& path);
std::string serialize_scenes(const DatasetManifest& manifest);

struct SynthConfig {
  int n_scenes = 32;
  int objects_per_scene = 4;
  int tokens_per_scene = 5;
  int refs_per_scene = 5;
  FeatureDims dims;
  std::vector<std::string> object_words;
  std::vector<std::string> ocr_words;

  // Populates object_words / ocr_words with the built-in lists.
  static SynthConfig defaults();
};

// Deterministic for a fixed (config, seed). Every scene's largest OCR token
// is its most described one, so the mined anchor always exists.
DatasetManifest generate_synthetic(const SynthConfig& config, std::uint64_t seed);

// Pseudo-random unit-scale vector keyed by (text, salt); stable across runs.
std::vector<double> hashed_embedding(const std::string& text, std::uint64_t salt, int dim);

}  // namespace anchorcap
