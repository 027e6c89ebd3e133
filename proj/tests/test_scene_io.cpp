#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "anchorcap/anpm.hpp"
#include "anchorcap/scene_io.hpp"
#include "anchorcap/vocab.hpp"

using namespace anchorcap;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("anchorcap_scene_io_" + name); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

SynthConfig small_config(int scenes) {
  SynthConfig c = SynthConfig::defaults();
  c.n_scenes = scenes;
  return c;
}

std::string lower(std::string s) {
  for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

}  // namespace

TEST_CASE("write then load yields an equal manifest") {
  const DatasetManifest m = generate_synthetic(small_config(2), 3);
  const fs::path path = temp_file("roundtrip.jsonl");
  write_scenes(m, path);
  const DatasetManifest back = load_scenes(path);
  CHECK(back == m);
  REQUIRE(back.scenes.size() == 2);
  CHECK(back.scenes[0].id == m.scenes[0].id);
  CHECK(back.scenes[1].id == m.scenes[1].id);
}

TEST_CASE("a 5-element bbox in the third scene is reported against that scene") {
  const DatasetManifest m = generate_synthetic(small_config(4), 5);
  auto lines = lines_of(serialize_scenes(m));
  auto j = nlohmann::json::parse(lines[3]);  // header + scenes 1, 2, then scene 3
  j["ocr"][0]["bbox"].push_back(0.5);
  lines[3] = j.dump();
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  const fs::path path = temp_file("bad_bbox.jsonl");
  write_text(path, text);
  try {
    load_scenes(path);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(e.scene_id() == m.scenes[2].id);
    CHECK(std::string(e.what()).find(m.scenes[2].id) != std::string::npos);
  }
}

TEST_CASE("an empty file is a valid empty manifest") {
  const fs::path path = temp_file("empty.jsonl");
  write_text(path, "");
  CHECK(load_scenes(path).scenes.empty());
}

TEST_CASE("malformed JSON is reported with its line number") {
  const DatasetManifest m = generate_synthetic(small_config(2), 5);
  auto lines = lines_of(serialize_scenes(m));
  const fs::path path = temp_file("bad_json.jsonl");
  write_text(path, lines[0] + "\n" + lines[1] + "\n{\"id\": oops\n");
  try {
    load_scenes(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
}

TEST_CASE("duplicate scene ids are rejected") {
  const DatasetManifest m = generate_synthetic(small_config(1), 5);
  const auto lines = lines_of(serialize_scenes(m));
  const fs::path path = temp_file("dupe.jsonl");
  write_text(path, lines[0] + "\n" + lines[1] + "\n" + lines[1] + "\n");
  CHECK_THROWS_AS(load_scenes(path), ValidationError);
}

TEST_CASE("synthetic corpora are byte-identical for a fixed seed") {
  const SynthConfig c = small_config(4);
  CHECK(serialize_scenes(generate_synthetic(c, 7)) == serialize_scenes(generate_synthetic(c, 7)));
  CHECK(serialize_scenes(generate_synthetic(c, 7)) != serialize_scenes(generate_synthetic(c, 8)));
}

TEST_CASE("synthetic scenes have exactly the configured token count") {
  SynthConfig c = small_config(6);
  c.tokens_per_scene = 3;
  for (const auto& s : generate_synthetic(c, 11).scenes) CHECK(s.ocr_tokens.size() == 3);
}

TEST_CASE("every synthetic reference mentions one of its scene's OCR strings") {
  const DatasetManifest m = generate_synthetic(small_config(20), 13);
  for (const auto& s : m.scenes) {
    REQUIRE_FALSE(s.references.empty());
    for (const auto& ref : s.references) {
      bool found = false;
      for (const auto& t : s.ocr_tokens) found = found || lower(ref).find(lower(t.text)) != std::string::npos;
      CHECK_MESSAGE(found, ref);
    }
  }
}

TEST_CASE("ground-truth mining never skips a synthetic scene") {
  const DatasetManifest m = generate_synthetic(small_config(50), 17);
  const Vocabulary vocab;
  for (const auto& s : m.scenes) CHECK(mine_ground_truth(s, vocab, 30).anchor.has_value());
}

TEST_CASE("equal OCR text always maps to equal embeddings") {
  CHECK(hashed_embedding("stop", 1, 8) == hashed_embedding("stop", 1, 8));
  CHECK(hashed_embedding("stop", 1, 8) != hashed_embedding("stop", 2, 8));
  CHECK(hashed_embedding("stop", 1, 8) != hashed_embedding("exit", 1, 8));
}

TEST_CASE("synthetic config errors") {
  SynthConfig c = small_config(0);
  CHECK_THROWS_AS(generate_synthetic(c, 1), ConfigError);
  c.n_scenes = -3;
  CHECK_THROWS_AS(generate_synthetic(c, 1), ConfigError);
  c = small_config(2);
  c.tokens_per_scene = c.dims.max_tokens + 1;
  CHECK_THROWS_AS(generate_synthetic(c, 1), ConfigError);
}

TEST_CASE("validate_scene") {
  const DatasetManifest m = generate_synthetic(small_config(1), 19);
  const Scene good = m.scenes[0];
  CHECK(validate_scene(good, m.dims).empty());

  Scene flipped = good;
  flipped.visual_objects[0].bbox = {0.8, 0.1, 0.2, 0.5};
  const auto v1 = validate_scene(flipped, m.dims);
  REQUIRE(v1.size() == 1);
  CHECK(v1[0].find("objects[0].bbox") != std::string::npos);

  Scene confident = good;
  confident.ocr_tokens[0].confidence = 1.5;
  const auto v2 = validate_scene(confident, m.dims);
  REQUIRE(v2.size() == 1);
  CHECK(v2[0].find("conf") != std::string::npos);

  Scene blank = good;
  blank.ocr_tokens[0].text = "   ";
  CHECK(validate_scene(blank, m.dims).size() == 1);

  Scene short_emb = good;
  short_emb.ocr_tokens[0].word_emb.pop_back();
  CHECK(validate_scene(short_emb, m.dims).size() == 1);
}
