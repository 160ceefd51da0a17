#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "phonotrack/config.hpp"
#include "phonotrack/synth.hpp"

// Stage runner behind the CLI. Every stage reads its inputs from the output
// directory (or the dataset), writes its outputs there, and records them with
// checksums in <out>/run_manifest.json.
namespace phonotrack::pipeline {

std::string tool_version();

class RunManifest {
 public:
  explicit RunManifest(std::filesystem::path out_dir);

  void set_config(const nlohmann::json& resolved, std::uint64_t seed);
  void set_inputs(const std::vector<std::filesystem::path>& files);
  // Replaces any earlier record of the same stage.
  void record_stage(const std::string& name, const std::vector<std::filesystem::path>& outputs,
                    const std::string& started, const std::string& finished);
  void save() const;
  const nlohmann::json& document() const { return doc_; }

  // Problems found when re-hashing recorded outputs and inputs.
  static std::vector<std::string> verify(const std::filesystem::path& manifest);

 private:
  std::filesystem::path out_;
  nlohmann::json doc_;
};

class Pipeline {
 public:
  explicit Pipeline(config::RunConfig cfg);

  void synth();
  void preprocess();
  void encode();
  void trf_fit();
  void trf_eval();
  void trf_export();
  void mm_build();
  void mm_train();
  void mm_finetune();
  void mm_eval();
  void stats_compare();
  void run_all();

  const config::RunConfig& config() const { return cfg_; }
  const std::filesystem::path& out() const { return cfg_.output_dir; }

  std::function<void(const std::string&)> log = [](const std::string&) {};

 private:
  struct StageScope;

  synth::Corpus corpus() const;
  features::PhoneInventory inventory() const;
  std::vector<features::Scheme> encoded_schemes() const;
  std::filesystem::path preprocessed_path(const std::string& subject) const;
  std::filesystem::path features_path(const std::string& subject, features::Scheme s) const;
  std::filesystem::path model_path(const std::string& subject, features::Scheme s) const;
  std::filesystem::path mm_dir(features::Scheme s) const;

  config::RunConfig cfg_;
};

}  // namespace phonotrack::pipeline
