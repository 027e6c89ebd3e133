#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace anchorcap::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;  // bad input, bad flags, unknown command
inline constexpr int kExitNumeric = 2;     // NaN/Inf, failed gradient check

// git-describe style id baked in at configure time ("unknown" outside a checkout).
std::string build_id();

// Commands: synth, mine-acg, train, generate, eval, gradcheck, ablate.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// The record each command writes next to its outputs before heavy work starts.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::vector<std::string> outputs;
  std::string started_at;
};

nlohmann::json to_json(const RunManifest& m);
void write_manifest(const RunManifest& m, const std::filesystem::path& path);

}  // namespace anchorcap::cli
