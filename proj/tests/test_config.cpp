#include <doctest.h>

#include <algorithm>

#include "phonotrack/config.hpp"
#include "phonotrack/io.hpp"
#include "support.hpp"

using namespace phonotrack;
using namespace phonotrack::config;

namespace {

std::vector<std::string> errors_of(const std::filesystem::path& p, const std::vector<Override>& o = {}) {
  try {
    validate_config(p, o);
  } catch (const ConfigError& e) {
    return e.errors();
  }
  return {};
}

bool mentions(const std::vector<std::string>& errs, const std::string& text) {
  return std::any_of(errs.begin(), errs.end(), [&](const auto& e) { return e.find(text) != std::string::npos; });
}

std::filesystem::path write(const std::string& name, const std::string& body) {
  const auto dir = testing::scratch("config_" + name);
  io::write_text(dir / "run.json", body);
  return dir / "run.json";
}

}  // namespace

TEST_CASE("empty file names the required keys") {
  const auto errs = errors_of(write("empty", ""));
  CHECK(errs.size() >= 1);
  CHECK(mentions(errs, "seed"));
  CHECK(mentions(errs, "paths.dataset"));
}

TEST_CASE("overlap bound is reported with its key path") {
  const auto errs = errors_of(write("overlap", R"({"seed": 1, "synth": {},
    "match_mismatch": {"segmentation": {"overlap_fraction": 1.2}}})"));
  REQUIRE(errs.size() == 1);
  CHECK(mentions(errs, "match_mismatch.segmentation.overlap_fraction"));
  CHECK(mentions(errs, "SegmentationConfig"));
}

TEST_CASE("errors are aggregated") {
  const auto errs = errors_of(write("many", R"({"seed": "x", "synth": {"noise": "brown"},
    "trf": {"window_ms": -1}, "schemes": ["vc", "letters"], "extra": true,
    "match_mismatch": {"train": {"max_epochs": 5, "patience": 9}}})"));
  CHECK(errs.size() >= 5);
  CHECK(mentions(errs, "seed"));
  CHECK(mentions(errs, "synth"));
  CHECK(mentions(errs, "trf.window_ms"));
  CHECK(mentions(errs, "letters"));
  CHECK(mentions(errs, "extra"));
  CHECK(mentions(errs, "match_mismatch.train"));
}

TEST_CASE("minimal config fills the documented defaults") {
  const auto cfg = validate_config(write("minimal", R"({"seed": 7, "synth": {}})"));
  CHECK(cfg.seed == 7);
  CHECK(cfg.trf.window_ms == 400.0);
  CHECK(cfg.mm.segmentation.window_s == 5.0);
  CHECK(cfg.mm.segmentation.overlap_fraction == 0.8);
  CHECK(cfg.mm.segmentation.mismatch_gap_s == 1.0);
  CHECK(cfg.mm.train.max_epochs == 30);
  CHECK(cfg.mm.train.patience == 5);
  CHECK(cfg.preprocessing.highpass_hz == 0.5);
  CHECK(cfg.preprocessing.filter_order == 4);
  CHECK(cfg.preprocessing.target_fs == 64.0);
  CHECK(cfg.mm.model.window_samples == 320);
  CHECK(cfg.mm.model.frames() == 104);
  CHECK(cfg.trf.lambda_grid.size() == 10);
  CHECK(cfg.trf.channels.size() == 27);
  REQUIRE(cfg.synth.has_value());
  CHECK(cfg.synth->synth.fs == 64.0);
  CHECK(cfg.dataset.filename() == "manifest.json");
  CHECK_FALSE(cfg.stats_pairs.empty());

  // The resolved document parses back to the same values.
  const auto again = parse_config(cfg.to_json(), cfg.config_path.parent_path());
  CHECK(again.to_json() == cfg.to_json());
}

TEST_CASE("dataset manifest must exist when there is no synth section") {
  const auto errs = errors_of(write("missing", R"({"seed": 1, "paths": {"dataset": "nowhere/manifest.json"}})"));
  CHECK(mentions(errs, "paths.dataset"));
}

TEST_CASE("overrides") {
  const auto p = write("overrides", R"({"seed": 1, "synth": {}})");
  const auto cfg = validate_config(p, {{"match_mismatch.train.max_epochs", 12}, {"seed", 99}, {"trf.window_ms", 250}});
  CHECK(cfg.mm.train.max_epochs == 12);
  CHECK(cfg.seed == 99);
  CHECK(cfg.trf.window_ms == 250.0);
  CHECK(mentions(errors_of(p, {{"match_mismatch.segmentation.overlap_fraction", 1.5}}), "SegmentationConfig"));

  nlohmann::json doc = {{"a", 1}};
  apply_override(doc, {"b.c.d", "x"});
  CHECK(doc["b"]["c"]["d"] == "x");
}

TEST_CASE("derived model shape may not be set by hand") {
  const auto errs = errors_of(write("shape", R"({"seed": 1, "synth": {},
    "match_mismatch": {"model": {"eeg_channels": 12}}})"));
  CHECK(mentions(errs, "match_mismatch.model.eeg_channels"));
}

TEST_CASE("shipped demo config validates") {
  const auto cfg = validate_config(std::filesystem::path(PHONOTRACK_TEST_CONFIG_DIR) / "demo.json");
  CHECK(cfg.schemes.size() == 8);
  CHECK(cfg.synth->n_subjects == 2);
  CHECK(std::filesystem::exists(default_inventory_path()));
}
