#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "anchorcap/cli.hpp"
#include "anchorcap/inference.hpp"
#include "anchorcap/scene_io.hpp"

using namespace anchorcap;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "anchorcap");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path workdir() {
  const fs::path p = fs::temp_directory_path() / "anchorcap_cli";
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(run({}).code == cli::kExitValidation);
  CHECK(run({"frobnicate"}).code == cli::kExitValidation);
  const Result no_config = run({"train", "--data", "x.jsonl", "--out", "dir"});
  CHECK(no_config.code == cli::kExitValidation);
  CHECK(no_config.err.find("--config") != std::string::npos);
  CHECK(run({"gradcheck", "--dims", "full"}).code == cli::kExitValidation);
  CHECK(run({"mine-acg", "--data", "/nonexistent/scenes.jsonl"}).code == cli::kExitValidation);
  CHECK(run({"synth", "--scenes", "0", "--out", (workdir() / "s.jsonl").string()}).code == cli::kExitValidation);
}

TEST_CASE("gradcheck passes at tiny dims") {
  const Result r = run({"gradcheck", "--dims", "tiny", "--seed", "3", "--coords", "60"});
  CHECK(r.code == cli::kExitOk);
  CHECK(r.out.find("max relative error") != std::string::npos);
  CHECK(r.out.find("over 60 coordinates") != std::string::npos);
}

TEST_CASE("synth, mine-acg, train, generate, eval and ablate chain together") {
  const fs::path dir = workdir();
  const fs::path cfg = dir / "tiny.cfg";
  {
    std::ofstream out(cfg);
    out << "# tiny end-to-end run\n"
           "n_scenes = 4\ntokens_per_scene = 3\nobjects_per_scene = 2\nrefs_per_scene = 3\n"
           "d_app = 4\nd_ft = 3\nd_phoc = 3\nmax_objects = 3\nmax_tokens = 3\n"
           "dim = 8\nheads = 1\nffn_dim = 16\nfusion_layers = 1\nvisual_layers = 1\ntext_layers = 1\n"
           "max_caption = 10\nbatch_size = 2\niterations = 3\nlearning_rate = 0.01\nseed = 5\n";
  }
  const std::string scenes = (dir / "scenes.jsonl").string();

  const Result synth = run({"synth", "--config", cfg.string(), "--out", scenes});
  REQUIRE(synth.code == cli::kExitOk);
  CHECK(load_scenes(scenes).scenes.size() == 4);
  CHECK(fs::exists(scenes + ".run.json"));
  CHECK(read_json(scenes + ".run.json").at("command") == "synth");

  const Result mine = run({"mine-acg", "--data", scenes});
  REQUIRE(mine.code == cli::kExitOk);
  CHECK(mine.err.find("4 scenes, 0 without an anchor") != std::string::npos);
  std::istringstream lines(mine.out);
  int count = 0;
  for (std::string line; std::getline(lines, line); ++count) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("id"));
    CHECK(j.at("anchor").is_string());
    CHECK(j.at("graph").is_array());
  }
  CHECK(count == 4);

  const fs::path run_dir = dir / "run";
  const Result train = run({"train", "--config", cfg.string(), "--data", scenes, "--out", run_dir.string(),
                            "--iterations", "4"});
  REQUIRE(train.code == cli::kExitOk);
  CHECK(fs::exists(run_dir / "checkpoint.json"));
  const auto report = read_json(run_dir / "report.json");
  CHECK(report.at("history").size() == 4);  // the flag beats the file's 3
  const auto manifest = read_json(run_dir / "run_manifest.json");
  CHECK(manifest.at("config").at("iterations") == 4);
  CHECK(manifest.at("config").at("dim") == 8);
  CHECK(manifest.at("seed") == 5);

  const std::string gen = (dir / "gen.jsonl").string();
  const Result generate = run({"generate", "--ckpt", (run_dir / "checkpoint.json").string(), "--data", scenes,
                               "--topk", "2", "--out", gen});
  REQUIRE(generate.code == cli::kExitOk);
  const auto results = read_generations(gen);
  REQUIRE(results.size() == 4);
  for (const auto& r : results) CHECK(r.refined.size() == 2);

  const std::string metrics = (dir / "metrics.json").string();
  REQUIRE(run({"eval", "--gen", gen, "--data", scenes, "--out", metrics}).code == cli::kExitOk);
  const auto m = read_json(metrics);
  for (const char* key : {"bleu4", "cider", "div1", "div2", "self_cider", "cover_ratio"}) CHECK(m.contains(key));
  CHECK(m.at("images").size() == 4);
  CHECK(run({"eval", "--gen", gen, "--data", scenes, "--out", metrics, "--captions-from", "nobody"}).code ==
        cli::kExitValidation);

  const std::string ablation = (dir / "ablation.json").string();
  const Result ablate = run({"ablate", "--data", scenes, "--ckpt", (run_dir / "checkpoint.json").string(),
                             "--skip-strategies", "--out", ablation});
  REQUIRE(ablate.code == cli::kExitOk);
  const auto rows = read_json(ablation);
  REQUIRE(rows.contains("rules"));
  CHECK(rows.at("rules").size() == 6);
  CHECK(rows.at("rules")[0].at("name") == "large+all");
  CHECK_FALSE(rows.contains("strategies"));

  // resuming a finished run restores it and trains nothing further
  const Result resume = run({"train", "--config", cfg.string(), "--data", scenes, "--out", (dir / "run2").string(),
                             "--resume", (run_dir / "checkpoint.json").string()});
  CHECK(resume.code == cli::kExitOk);
}
