#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "efest/estimator.hpp"
#include "efest/train.hpp"

namespace efest {

struct DataConfig {
  enum class Source { Synthetic, Idx };
  Source source = Source::Synthetic;
  // synthetic
  std::uint32_t classes = 3;
  std::uint32_t dim = 10;
  std::uint32_t samples_per_class = 1000;
  double sigma = 1.0;
  double mean_scale = 1.0;
  // idx
  std::string idx_images;
  std::string idx_labels;
  std::uint64_t limit = 0;  // 0 keeps every example
};

/// Everything a run needs; serialized verbatim into the manifest header.
struct RunConfig {
  std::uint64_t seed = 1;
  DataConfig data;
  std::vector<std::uint32_t> hidden{16};
  std::uint32_t rounds = 10;
  std::uint32_t ratio = 6;
  TrainConfig train;  // train.seed mirrors `seed`
  GradPath estimator = GradPath::PerSample;
  std::uint32_t estimator_batch = 50;
  bool verify_caches = true;

  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Parses `key = value` lines ('#' starts a comment). Later keys win.
std::map<std::string, std::string> parse_key_values(const std::string& text);

/// Builds a config from defaults, then the file (if any), then overrides.
/// Unknown keys and malformed values are all reported in one Configuration error.
RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                          const std::map<std::string, std::string>& overrides);

/// Key names accepted in config files.
const std::vector<std::string>& config_keys();

}  // namespace efest
