#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "phonotrack/error.hpp"
#include "phonotrack/features.hpp"
#include "phonotrack/mm.hpp"
#include "phonotrack/nn.hpp"
#include "phonotrack/signal.hpp"
#include "phonotrack/synth.hpp"

namespace phonotrack::config {

struct TrfSettings {
  double window_ms = 400.0;
  std::vector<double> lambda_grid;  // empty -> default grid
  std::vector<std::string> channels;  // evaluation subset; empty -> default 27
  // Windows for topographic summaries of the TRF, in ms.
  std::vector<std::pair<double, double>> topo_windows{{80, 130}, {180, 230}, {200, 350}, {350, 400}};
};

struct MmSettings {
  bool enabled = true;
  std::vector<features::Scheme> schemes{features::Scheme::vc};
  mm::SegmentationConfig segmentation;
  nn::ModelConfig model;  // channel / dim / window sizes are taken from the data
  nn::TrainConfig train;
  nn::TrainConfig finetune;
};

struct CorpusSettings {
  std::size_t n_subjects = 2;
  synth::SynthConfig synth;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path config_path;
  std::filesystem::path dataset;     // corpus manifest.json
  std::filesystem::path output_dir;
  std::filesystem::path inventory;   // empty -> the corpus copy
  std::optional<CorpusSettings> synth;
  signal::PreprocessConfig preprocessing;
  std::vector<features::Scheme> schemes;
  TrfSettings trf;
  MmSettings mm;
  std::vector<std::pair<std::string, std::string>> stats_pairs;

  // Fully resolved document, defaults included.
  nlohmann::json to_json() const;
};

// Every problem found, each prefixed with its key path.
class ConfigError : public ValidationError {
 public:
  explicit ConfigError(std::vector<std::string> errors);
  const std::vector<std::string>& errors() const { return errors_; }

 private:
  std::vector<std::string> errors_;
};

// Paths inside the document are relative to `base_dir`.
RunConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
RunConfig validate_config(const std::filesystem::path& path);

// Dotted key path (e.g. "match_mismatch.train.max_epochs") set to a value
// before validation.
using Override = std::pair<std::string, nlohmann::json>;
RunConfig validate_config(const std::filesystem::path& path, const std::vector<Override>& overrides);
void apply_override(nlohmann::json& doc, const Override& o);

std::filesystem::path default_inventory_path();

}  // namespace phonotrack::config
