#include "phonotrack/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <map>

#include "phonotrack/io.hpp"
#include "phonotrack/mm.hpp"
#include "phonotrack/stats.hpp"
#include "phonotrack/trf.hpp"

#ifndef PHONOTRACK_VERSION
#define PHONOTRACK_VERSION "0.0.0"
#endif

namespace phonotrack::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using features::Scheme;

std::string tool_version() { return PHONOTRACK_VERSION; }

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string rel(const fs::path& p, const fs::path& base) { return p.lexically_relative(base).generic_string(); }

json file_entry(const fs::path& p, const fs::path& base) {
  return {{"path", rel(p, base)}, {"sha256", io::sha256_file(p)}, {"bytes", fs::file_size(p)}};
}

std::string scheme_name(Scheme s) { return std::string(features::to_string(s)); }

}  // namespace

// ---------------------------------------------------------------------------

RunManifest::RunManifest(fs::path out_dir) : out_(std::move(out_dir)) {
  const fs::path p = out_ / "run_manifest.json";
  if (fs::exists(p)) doc_ = io::read_json(p);
  if (!doc_.is_object()) doc_ = json::object();
  doc_["tool"] = "phonotrack";
  doc_["tool_version"] = tool_version();
  if (!doc_.contains("stages")) doc_["stages"] = json::array();
}

void RunManifest::set_config(const json& resolved, std::uint64_t seed) {
  doc_["config_sha256"] = io::sha256_hex(resolved.dump());
  doc_["config"] = resolved;
  doc_["seed"] = seed;
}

void RunManifest::set_inputs(const std::vector<fs::path>& files) {
  auto arr = json::array();
  for (const auto& f : files) {
    json e = file_entry(f, out_);
    e["path"] = fs::absolute(f).lexically_normal().generic_string();
    arr.push_back(e);
  }
  doc_["inputs"] = arr;
}

void RunManifest::record_stage(const std::string& name, const std::vector<fs::path>& outputs, const std::string& started,
                               const std::string& finished) {
  std::vector<fs::path> sorted = outputs;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  auto files = json::array();
  for (const auto& f : sorted) files.push_back(file_entry(f, out_));
  json stage{{"name", name}, {"started", started}, {"finished", finished}, {"outputs", files}};
  auto& stages = doc_["stages"];
  auto it = std::find_if(stages.begin(), stages.end(), [&](const json& s) { return s.at("name") == name; });
  if (it != stages.end())
    *it = stage;
  else
    stages.push_back(stage);
}

void RunManifest::save() const { io::write_json(out_ / "run_manifest.json", doc_); }

std::vector<std::string> RunManifest::verify(const fs::path& manifest) {
  std::vector<std::string> problems;
  const json doc = io::read_json(manifest);
  const fs::path base = manifest.parent_path();
  auto check = [&](const json& e, const fs::path& p) {
    if (!fs::exists(p)) {
      problems.push_back(p.generic_string() + ": missing");
      return;
    }
    if (io::sha256_file(p) != e.at("sha256").get<std::string>()) problems.push_back(p.generic_string() + ": checksum mismatch");
  };
  for (const auto& e : doc.value("inputs", json::array())) check(e, fs::path(e.at("path").get<std::string>()));
  for (const auto& st : doc.value("stages", json::array()))
    for (const auto& e : st.at("outputs")) check(e, base / e.at("path").get<std::string>());
  return problems;
}

// ---------------------------------------------------------------------------

// Times a stage and records its outputs in the run manifest on success.
struct Pipeline::StageScope {
  Pipeline& p;
  std::string name;
  std::string started = utc_now();
  std::vector<fs::path> outputs;

  StageScope(Pipeline& pl, std::string n) : p(pl), name(std::move(n)) { p.log("[" + name + "] start"); }

  void write_text(const fs::path& path, std::string_view text) {
    io::write_text(path, text);
    outputs.push_back(path);
  }
  void add(const fs::path& path) { outputs.push_back(path); }

  void commit() {
    RunManifest m(p.out());
    m.set_config(p.cfg_.to_json(), p.cfg_.seed);
    std::vector<fs::path> inputs;
    if (fs::exists(p.cfg_.dataset)) {
      const auto c = synth::load_corpus(p.cfg_.dataset);
      inputs.push_back(p.cfg_.dataset);
      for (const auto& f : c.manifest.value("files", json::array())) inputs.push_back(c.root / f.at("path").get<std::string>());
    }
    m.set_inputs(inputs);
    m.record_stage(name, outputs, started, utc_now());
    m.save();
    p.log("[" + name + "] done, " + std::to_string(outputs.size()) + " outputs");
  }
};

Pipeline::Pipeline(config::RunConfig cfg) : cfg_(std::move(cfg)) {}

synth::Corpus Pipeline::corpus() const {
  if (!fs::exists(cfg_.dataset))
    throw ValidationError("dataset manifest not found: " + cfg_.dataset.string() +
                          (cfg_.synth ? " (run the synth stage first)" : ""));
  auto c = synth::load_corpus(cfg_.dataset);
  if (c.subjects.empty()) throw ValidationError("dataset has no subjects: " + cfg_.dataset.string());
  return c;
}

features::PhoneInventory Pipeline::inventory() const {
  if (!cfg_.inventory.empty()) return features::load_inventory(cfg_.inventory);
  const auto c = corpus();
  if (c.inventory.empty()) throw ValidationError("no phone inventory configured and the dataset ships none");
  return features::load_inventory(c.inventory);
}

std::vector<Scheme> Pipeline::encoded_schemes() const {
  std::vector<Scheme> out = cfg_.schemes;
  if (cfg_.mm.enabled)
    for (auto s : cfg_.mm.schemes)
      if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
  return out;
}

fs::path Pipeline::preprocessed_path(const std::string& subject) const {
  return out() / "preprocessed" / subject / "eeg.bin";
}
fs::path Pipeline::features_path(const std::string& subject, Scheme s) const {
  return out() / "features" / subject / (scheme_name(s) + ".bin");
}
fs::path Pipeline::model_path(const std::string& subject, Scheme s) const {
  return out() / "trf" / "models" / (subject + "_" + scheme_name(s) + ".json");
}
fs::path Pipeline::mm_dir(Scheme s) const { return out() / "mm" / scheme_name(s); }

// ---------------------------------------------------------------------------

void Pipeline::synth() {
  if (!cfg_.synth) throw ValidationError("the configuration has no synth section");
  StageScope st(*this, "synth");
  const fs::path dir = cfg_.dataset.parent_path();
  const auto inv = features::load_inventory(cfg_.inventory);
  const auto c = synth::generate_corpus(cfg_.synth->n_subjects, cfg_.synth->synth, inv,
                                        io::derive_seed(cfg_.seed, "synth"), dir);
  for (const auto& f : c.manifest.at("files")) st.add(dir / f.at("path").get<std::string>());
  st.add(dir / "manifest.json");
  st.commit();
}

void Pipeline::preprocess() {
  StageScope st(*this, "preprocess");
  const auto c = corpus();
  const signal::IdentityArtifactRemover artifacts;
  for (const auto& s : c.subjects) {
    log("  preprocess " + s.id);
    const auto raw = signal::read_timeseries(s.eeg);
    const auto x = signal::preprocess(raw, cfg_.preprocessing, artifacts);
    const auto path = preprocessed_path(s.id);
    signal::write_timeseries(path, x, {{"subject", s.id}, {"artifact_removal", artifacts.name()}});
    st.add(path);
    st.add(io::sidecar_path(path));
  }
  st.commit();
}

void Pipeline::encode() {
  StageScope st(*this, "encode");
  const auto c = corpus();
  const auto inv = inventory();
  for (const auto& s : c.subjects) {
    json side;
    signal::read_timeseries(preprocessed_path(s.id), &side);
    const double fs = side.at("fs").get<double>();
    const auto n = side.at("n_samples").get<std::size_t>();
    const auto track = features::load_alignment(s.alignment);
    for (auto scheme : encoded_schemes()) {
      const auto f = features::encode_representation(track, inv, scheme, fs, n);
      const auto path = features_path(s.id, scheme);
      features::write_features(path, f);
      st.add(path);
      st.add(io::sidecar_path(path));
    }
  }
  st.commit();
}

namespace {

struct TrfData {
  trf::LaggedDesignMatrix train, validation, test;
  signal::TimeSeries r_train, r_validation, r_test;
};

TrfData trf_data(const signal::TimeSeries& eeg, const features::FeatureMatrix& feat, double window_ms) {
  if (eeg.n_samples() != feat.n_samples()) throw ValidationError("EEG and features differ in length");
  const auto parts = signal::split_recording(eeg);
  const auto& b = parts.boundaries;
  const auto stats = signal::fit_normalization(parts.train());
  const auto r = signal::apply_normalization(eeg, stats);
  const auto S = trf::build_lagged_matrix(feat, window_ms);
  return {trf::concat(S.rows(b[0], b[1]), S.rows(b[3], b[4])),
          S.rows(b[1], b[2]),
          S.rows(b[2], b[3]),
          trf::concat(r.slice(b[0], b[1]), r.slice(b[3], b[4])),
          r.slice(b[1], b[2]),
          r.slice(b[2], b[3])};
}

}  // namespace

void Pipeline::trf_fit() {
  StageScope st(*this, "trf_fit");
  const auto c = corpus();
  std::string csv = "subject,scheme,lambda,mean_validation_rho,selected\n";
  for (const auto& s : c.subjects) {
    const auto eeg = signal::read_timeseries(preprocessed_path(s.id));
    for (auto scheme : cfg_.schemes) {
      log("  trf fit " + s.id + " " + scheme_name(scheme));
      const auto feat = features::read_features(features_path(s.id, scheme));
      const auto d = trf_data(eeg, feat, cfg_.trf.window_ms);
      const auto sel = trf::select_lambda(d.train, d.r_train, d.validation, d.r_validation, cfg_.trf.lambda_grid,
                                          cfg_.trf.channels);
      for (std::size_t i = 0; i < sel.grid.size(); ++i)
        csv += s.id + ',' + scheme_name(scheme) + ',' + io::fmt_double(sel.grid[i]) + ',' + io::fmt_double(sel.mean_rho[i]) +
               ',' + (sel.grid[i] == sel.lambda ? "1" : "0") + '\n';
      const auto model = trf::ridge_fit(d.train, d.r_train, sel.lambda);
      const auto path = model_path(s.id, scheme);
      io::write_json(path, model.to_json());
      st.add(path);
    }
  }
  st.write_text(out() / "trf" / "lambda_selection.csv", csv);
  st.commit();
}

void Pipeline::trf_eval() {
  StageScope st(*this, "trf_eval");
  const auto c = corpus();
  std::vector<trf::EvaluationReport> reports;
  json summary = json::object();
  std::string csv = "subject,scheme,lambda,mean_subset_rho\n";
  for (const auto& s : c.subjects) {
    const auto eeg = signal::read_timeseries(preprocessed_path(s.id));
    for (auto scheme : cfg_.schemes) {
      const auto model = trf::TrfModel::from_json(io::read_json(model_path(s.id, scheme)));
      const auto feat = features::read_features(features_path(s.id, scheme));
      const auto d = trf_data(eeg, feat, cfg_.trf.window_ms);
      auto rep = trf::evaluate(model, d.test, d.r_test, cfg_.trf.channels, s.id, scheme_name(scheme));
      summary[scheme_name(scheme)][s.id] = rep.mean_subset_rho;
      csv += s.id + ',' + scheme_name(scheme) + ',' + io::fmt_double(rep.lambda) + ',' + io::fmt_double(rep.mean_subset_rho) +
             '\n';
      reports.push_back(std::move(rep));
    }
  }
  st.write_text(out() / "trf" / "correlations.csv", trf::correlation_csv(reports));
  // Prediction-correlation maps, averaged over subjects.
  for (auto scheme : cfg_.schemes) {
    std::vector<trf::EvaluationReport> group;
    for (const auto& r : reports)
      if (r.scheme == scheme_name(scheme)) group.push_back(r);
    const auto map = trf::channel_correlation_map(group);
    st.write_text(out() / "trf" / "topo" / (scheme_name(scheme) + "_correlation.csv"),
                  trf::topo_csv(group.front().channel_names, map, std::nan(""), std::nan("")));
  }
  st.write_text(out() / "trf" / "summary.csv", csv);
  io::write_json(out() / "trf" / "summary.json", summary);
  st.add(out() / "trf" / "summary.json");
  st.commit();
}

void Pipeline::trf_export() {
  StageScope st(*this, "trf_export");
  const auto c = corpus();
  for (auto scheme : cfg_.schemes) {
    std::vector<trf::TrfTensor> tensors;
    for (const auto& s : c.subjects) {
      const auto model = trf::TrfModel::from_json(io::read_json(model_path(s.id, scheme)));
      st.write_text(out() / "trf" / "export" / (s.id + "_" + scheme_name(scheme) + "_trf.csv"), trf::trf_csv(model));
      tensors.push_back(trf::extract_trf(model));
    }
    // Subject-averaged window maps, one file per feature dimension.
    const auto& t0 = tensors.front();
    for (std::size_t d = 0; d < t0.n_dims; ++d) {
      std::string csv;
      for (const auto& [lo, hi] : cfg_.trf.topo_windows) {
        std::vector<double> mean(t0.n_channels, 0.0);
        for (const auto& t : tensors) {
          const auto v = trf::trf_window_average(t, d, lo, hi);
          for (std::size_t ch = 0; ch < mean.size(); ++ch) mean[ch] += v[ch] / static_cast<double>(tensors.size());
        }
        const auto part = trf::topo_csv(t0.channel_names, mean, lo, hi);
        csv += csv.empty() ? part : part.substr(part.find('\n') + 1);
      }
      st.write_text(out() / "trf" / "topo" / (scheme_name(scheme) + "_" + t0.dim_names[d] + "_trf.csv"), csv);
    }
  }
  st.commit();
}

// ---------------------------------------------------------------------------

namespace {

std::map<std::string, mm::SplitExamples> load_examples(const synth::Corpus& c, const fs::path& out, Scheme scheme,
                                                       const mm::SegmentationConfig& seg) {
  std::map<std::string, mm::SplitExamples> by_subject;
  for (const auto& s : c.subjects) {
    const auto eeg = signal::read_timeseries(out / "preprocessed" / s.id / "eeg.bin");
    const auto feat = features::read_features(out / "features" / s.id / (std::string(features::to_string(scheme)) + ".bin"));
    auto ex = mm::extract_split_examples(eeg, feat, seg, s.id);
    if (ex.train.empty() || ex.validation.empty() || ex.test.empty())
      throw ValidationError(s.id + ": recording too short for match-mismatch partitions (each of train, validation and "
                                   "test needs at least window + gap + window)");
    by_subject.emplace(s.id, std::move(ex));
  }
  return by_subject;
}

nn::ModelConfig model_for(const config::RunConfig& cfg, const std::map<std::string, mm::SplitExamples>& ex) {
  const auto& first = ex.begin()->second.train.front();
  return mm::model_config_for(cfg.mm.model, first.eeg->cols(), first.speech->cols(), first.window);
}

std::size_t scheme_index(const config::RunConfig& cfg, Scheme s) {
  return static_cast<std::size_t>(std::find(cfg.mm.schemes.begin(), cfg.mm.schemes.end(), s) - cfg.mm.schemes.begin());
}

}  // namespace

void Pipeline::mm_build() {
  StageScope st(*this, "mm_build");
  if (cfg_.mm.enabled) {
    const auto c = corpus();
    for (auto scheme : cfg_.mm.schemes) {
      const auto ex = load_examples(c, out(), scheme, cfg_.mm.segmentation);
      std::string jsonl;
      for (const auto& [id, e] : ex) {
        jsonl += mm::example_manifest(e.train);
        jsonl += mm::example_manifest(e.validation);
        jsonl += mm::example_manifest(e.test);
      }
      st.write_text(mm_dir(scheme) / "examples.jsonl", jsonl);
    }
  }
  st.commit();
}

void Pipeline::mm_train() {
  StageScope st(*this, "mm_train");
  if (cfg_.mm.enabled) {
    const auto c = corpus();
    for (auto scheme : cfg_.mm.schemes) {
      const auto ex = load_examples(c, out(), scheme, cfg_.mm.segmentation);
      const auto model = model_for(cfg_, ex);
      const std::size_t k = scheme_index(cfg_, scheme);
      nn::TrainConfig tc = cfg_.mm.train;
      tc.seed = io::derive_seed(cfg_.seed, "mm.train", k);
      const std::uint64_t init_seed = io::derive_seed(cfg_.seed, "mm.init", k);
      log("  mm train " + scheme_name(scheme) + " (" + std::to_string(model.parameter_count()) + " parameters)");
      const auto res = mm::train_subject_independent(ex, model, tc, init_seed);
      const auto path = mm_dir(scheme) / "si.bin";
      nn::save_checkpoint(path, res.params, {res.history.best_epoch, res.history.best_val_loss, init_seed});
      st.add(path);
      st.add(io::sidecar_path(path));
      st.write_text(mm_dir(scheme) / "si_history.csv", nn::history_csv(res.history));
    }
  }
  st.commit();
}

void Pipeline::mm_finetune() {
  StageScope st(*this, "mm_finetune");
  if (cfg_.mm.enabled) {
    const auto c = corpus();
    for (auto scheme : cfg_.mm.schemes) {
      const auto ex = load_examples(c, out(), scheme, cfg_.mm.segmentation);
      const auto si = nn::load_checkpoint(mm_dir(scheme) / "si.bin");
      std::size_t i = 0;
      for (const auto& [id, e] : ex) {
        nn::TrainConfig tc = cfg_.mm.finetune;
        tc.seed = io::derive_seed(cfg_.seed, "mm.finetune." + scheme_name(scheme), i++);
        log("  mm finetune " + scheme_name(scheme) + " " + id);
        const auto res = mm::finetune(si, e, tc);
        const auto path = mm_dir(scheme) / "finetuned" / (id + ".bin");
        nn::save_checkpoint(path, res.params, {res.history.best_epoch, res.history.best_val_loss, tc.seed});
        st.add(path);
        st.add(io::sidecar_path(path));
        st.write_text(mm_dir(scheme) / "finetuned" / (id + "_history.csv"), nn::history_csv(res.history));
      }
    }
  }
  st.commit();
}

void Pipeline::mm_eval() {
  StageScope st(*this, "mm_eval");
  if (cfg_.mm.enabled) {
    const auto c = corpus();
    std::vector<mm::AccuracyRow> rows;
    json summary = json::object();
    for (auto scheme : cfg_.mm.schemes) {
      const auto ex = load_examples(c, out(), scheme, cfg_.mm.segmentation);
      const auto si = nn::load_checkpoint(mm_dir(scheme) / "si.bin");
      for (const auto& [id, e] : ex) {
        const double a_si = mm::evaluate_accuracy(si, e.test);
        const auto ft_path = mm_dir(scheme) / "finetuned" / (id + ".bin");
        rows.push_back({id, scheme_name(scheme), "SI", cfg_.mm.segmentation.window_s, a_si, e.test.size()});
        summary[scheme_name(scheme) + ":SI"][id] = a_si;
        if (fs::exists(ft_path)) {
          const double a_ft = mm::evaluate_accuracy(nn::load_checkpoint(ft_path), e.test);
          rows.push_back({id, scheme_name(scheme), "finetuned", cfg_.mm.segmentation.window_s, a_ft, e.test.size()});
          summary[scheme_name(scheme) + ":finetuned"][id] = a_ft;
        }
      }
    }
    st.write_text(out() / "mm" / "accuracy.csv", mm::accuracy_csv(rows));
    io::write_json(out() / "mm" / "accuracy.json", summary);
    st.add(out() / "mm" / "accuracy.json");
  }
  st.commit();
}

void Pipeline::stats_compare() {
  StageScope st(*this, "stats_compare");
  auto load = [](const fs::path& p) {
    std::map<std::string, std::map<std::string, double>> m;
    const json doc = io::read_json(p);
    for (const auto& [cond, subjects] : doc.items())
      for (const auto& [sub, v] : subjects.items()) m[cond][sub] = v.get<double>();
    return m;
  };
  const auto trf_summary = out() / "trf" / "summary.json";
  if (!cfg_.stats_pairs.empty()) {
    if (!fs::exists(trf_summary)) throw ValidationError("missing " + trf_summary.string() + " (run trf eval first)");
    const auto table = stats::compare_schemes(load(trf_summary), cfg_.stats_pairs);
    st.write_text(out() / "stats" / "trf_comparisons.csv", stats::comparison_csv(table));
  }
  const auto mm_summary = out() / "mm" / "accuracy.json";
  if (cfg_.mm.enabled && fs::exists(mm_summary)) {
    const auto metrics = load(mm_summary);
    std::vector<std::pair<std::string, std::string>> pairs;
    for (auto s : cfg_.mm.schemes) {
      const std::string a = scheme_name(s) + ":finetuned", b = scheme_name(s) + ":SI";
      if (metrics.count(a) && metrics.count(b)) pairs.emplace_back(a, b);
    }
    if (!pairs.empty())
      st.write_text(out() / "stats" / "mm_comparisons.csv", stats::comparison_csv(stats::compare_schemes(metrics, pairs)));
  }
  st.commit();
}

void Pipeline::run_all() {
  if (cfg_.synth) synth();
  preprocess();
  encode();
  trf_fit();
  trf_eval();
  trf_export();
  mm_build();
  mm_train();
  mm_finetune();
  mm_eval();
  stats_compare();
}

}  // namespace phonotrack::pipeline
