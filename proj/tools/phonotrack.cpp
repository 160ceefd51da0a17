#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "phonotrack/config.hpp"
#include "phonotrack/error.hpp"
#include "phonotrack/nn.hpp"
#include "phonotrack/pipeline.hpp"
#include "phonotrack/simd.hpp"

namespace fs = std::filesystem;
using namespace phonotrack;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::vector<std::string> sets;
  bool quiet = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  app->add_option("--out", c.out, "Output directory (overrides paths.output_dir)");
  app->add_option_function<std::uint64_t>(
      "--seed", [&c](std::uint64_t s) { c.seed = s, c.seed_set = true; }, "Top-level seed (overrides seed)");
  app->add_option("--set", c.sets, "Override a config key: key.path=value (value parsed as JSON)");
  app->add_flag("-q,--quiet", c.quiet, "Suppress progress messages");
}

config::Override parse_set(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError("--set expects key.path=value, got \"" + s + "\"");
  const std::string key = s.substr(0, eq), value = s.substr(eq + 1);
  nlohmann::json v;
  try {
    v = nlohmann::json::parse(value);
  } catch (const nlohmann::json::parse_error&) {
    v = value;
  }
  return {key, v};
}

pipeline::Pipeline make_pipeline(const Common& c, std::vector<config::Override> extra) {
  std::vector<config::Override> overrides;
  if (!c.out.empty()) overrides.emplace_back("paths.output_dir", fs::absolute(c.out).lexically_normal().string());
  if (c.seed_set) overrides.emplace_back("seed", c.seed);
  for (auto& o : extra) overrides.push_back(std::move(o));
  for (const auto& s : c.sets) overrides.push_back(parse_set(s));
  pipeline::Pipeline p(config::validate_config(c.config, overrides));
  if (!c.quiet) p.log = [](const std::string& m) { std::cerr << m << '\n'; };
  return p;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"phonotrack: phonetic speech representations, forward TRF models and match-mismatch classification"};
  app.set_version_flag("--version", pipeline::tool_version());
  app.require_subcommand(1);

  Common c;
  std::vector<config::Override> extra;
  std::function<void(pipeline::Pipeline&)> action;

  auto stage = [&](CLI::App* sub, std::function<void(pipeline::Pipeline&)> fn) {
    add_common(sub, c);
    sub->callback([&action, fn] { action = fn; });
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus with known ground truth");
  stage(synth, [](pipeline::Pipeline& p) { p.synth(); });
  synth->add_option_function<std::size_t>(
      "--subjects", [&](std::size_t n) { extra.emplace_back("synth.n_subjects", n); }, "Number of subjects");
  synth->add_option_function<double>(
      "--duration-s", [&](double d) { extra.emplace_back("synth.duration_s", d); }, "Recording duration per subject");

  stage(app.add_subcommand("preprocess", "High-pass, re-reference and resample the raw EEG"),
        [](pipeline::Pipeline& p) { p.preprocess(); });
  stage(app.add_subcommand("encode", "Encode speech representations from the alignments"),
        [](pipeline::Pipeline& p) { p.encode(); });

  auto* trf = app.add_subcommand("trf", "Forward TRF models");
  trf->require_subcommand(1);
  for (auto* sub : {trf->add_subcommand("fit", "Select lambda on validation data and fit ridge TRFs"),
                    trf->add_subcommand("eval", "Spearman evaluation on the test partition"),
                    trf->add_subcommand("export", "TRF weights and topographic CSVs")}) {
    const std::string name = sub->get_name();
    stage(sub, [name](pipeline::Pipeline& p) {
      if (name == "fit") p.trf_fit();
      else if (name == "eval") p.trf_eval();
      else p.trf_export();
    });
    sub->add_option_function<double>(
        "--window-ms", [&](double w) { extra.emplace_back("trf.window_ms", w); }, "Integration window in ms");
  }

  auto* mmc = app.add_subcommand("mm", "Match-mismatch classification");
  mmc->require_subcommand(1);
  for (auto* sub : {mmc->add_subcommand("build", "Segment recordings into examples"),
                    mmc->add_subcommand("train", "Train the subject-independent model"),
                    mmc->add_subcommand("finetune", "Fine-tune the SI model per subject"),
                    mmc->add_subcommand("eval", "Test accuracy of SI and fine-tuned models")}) {
    const std::string name = sub->get_name();
    stage(sub, [name](pipeline::Pipeline& p) {
      if (name == "build") p.mm_build();
      else if (name == "train") p.mm_train();
      else if (name == "finetune") p.mm_finetune();
      else p.mm_eval();
    });
    const std::string section = name == "finetune" ? "match_mismatch.finetune." : "match_mismatch.train.";
    sub->add_option_function<int>(
        "--epochs", [&extra, section](int e) { extra.emplace_back(section + "max_epochs", e); }, "Maximum epochs");
    sub->add_option_function<double>(
        "--lr", [&extra, section](double lr) { extra.emplace_back(section + "learning_rate", lr); }, "Learning rate");
    sub->add_option_function<double>(
        "--window-s", [&](double w) { extra.emplace_back("match_mismatch.segmentation.window_s", w); },
        "Decision window in seconds");
  }

  auto* st = app.add_subcommand("stats", "Paired statistics");
  st->require_subcommand(1);
  stage(st->add_subcommand("compare", "Wilcoxon signed-rank comparisons with Holm correction"),
        [](pipeline::Pipeline& p) { p.stats_compare(); });

  auto* pl = app.add_subcommand("pipeline", "All stages");
  pl->require_subcommand(1);
  stage(pl->add_subcommand("run", "Run every stage in order"), [](pipeline::Pipeline& p) { p.run_all(); });
  bool verify_failed = false;
  stage(pl->add_subcommand("verify", "Re-hash every file recorded in the run manifest"), [&](pipeline::Pipeline& p) {
    const auto problems = pipeline::RunManifest::verify(p.out() / "run_manifest.json");
    for (const auto& m : problems) std::cerr << m << '\n';
    if (!problems.empty()) verify_failed = true;
    else std::cout << "run manifest verified\n";
  });

  auto* cfgc = app.add_subcommand("config", "Configuration");
  cfgc->require_subcommand(1);
  stage(cfgc->add_subcommand("show", "Print the resolved configuration"),
        [](pipeline::Pipeline& p) { std::cout << p.config().to_json().dump(2) << '\n'; });

  auto* info = app.add_subcommand("info", "Build and model information");
  info->callback([&] {
    action = nullptr;
    std::cout << "phonotrack " << pipeline::tool_version() << "\nsimd backend: " << simd::backend_name(simd::active().backend)
              << "\ndefault model parameters: " << nn::ModelConfig{}.parameter_count()
              << "\ndefault model frames: " << nn::ModelConfig{}.frames() << '\n';
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (action) {
      auto p = make_pipeline(c, extra);
      action(p);
    }
  } catch (const config::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return verify_failed ? 2 : 0;
}
