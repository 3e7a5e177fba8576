#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <json.hpp>
#include <string>
#include <string_view>
#include <vector>

#include "phynfp/datasets.hpp"
#include "phynfp/models.hpp"
#include "phynfp/traineval.hpp"

namespace phynfp::cli {

using Json = nlohmann::json;

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kDataError = 3,
  kDivergence = 4,
};

/// The full parameter tree with every default filled in. Keys absent here are rejected.
Json default_config();

/// Reads `path` (may be empty for pure defaults), merges it over the defaults,
/// resolves file paths against the config's directory, then applies `overrides`
/// of the form `section.key=value` (value parsed as JSON, else taken as a string).
/// Throws ConfigError on unknown keys, wrong types or out-of-range values.
Json load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

void apply_override(Json& cfg, const std::string& assignment);
void validate_config(const Json& cfg);

std::uint64_t fnv1a64(std::string_view bytes);
/// 16 hex digits of FNV-1a over the compact dump of `cfg`.
std::string config_hash(const Json& cfg);

DirectedGraph graph_from_config(const Json& cfg);
Dataset simulate_from_config(const Json& cfg);
ModelConfig model_config(const Json& cfg, int num_features, int edge_features);
TrainConfig train_config(const Json& cfg);
PreparedData prepare_from_config(const Json& cfg, const Dataset& data);

/// Dataset directory written by `simulate`: edges.csv, series.csv, targets.csv.
Dataset load_dataset(const std::filesystem::path& dir);
/// FNV-1a over the three dataset files.
std::string dataset_fingerprint(const std::filesystem::path& dir);

/// Runs one subcommand. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace phynfp::cli
