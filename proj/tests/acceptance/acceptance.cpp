// End-to-end acceptance checks. Prints one line per criterion and exits
// nonzero when any fails. Criteria can be selected by number on the command
// line, e.g. `acceptance 1 5 6`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <json.hpp>

#include "oracles.hpp"
#include "phonotrack/config.hpp"
#include "phonotrack/features.hpp"
#include "phonotrack/io.hpp"
#include "phonotrack/mm.hpp"
#include "phonotrack/nn.hpp"
#include "phonotrack/pipeline.hpp"
#include "phonotrack/signal.hpp"
#include "phonotrack/stats.hpp"
#include "phonotrack/synth.hpp"
#include "phonotrack/trf.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace phonotrack;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

fs::path work_dir() {
  static const fs::path p = [] {
    auto d = fs::temp_directory_path() / "phonotrack_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return p;
}

features::PhoneInventory inventory() {
  return features::load_inventory(fs::path(PHONOTRACK_TEST_DATA_DIR) / "default_inventory.json");
}

void log(const std::string& m) { std::cerr << "  " << m << '\n'; }

pipeline::Pipeline make_pipeline(const json& doc) {
  pipeline::Pipeline p(config::parse_config(doc, work_dir()));
  p.log = log;
  return p;
}

std::vector<std::map<std::string, std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    return cells;
  };
  std::string line;
  std::getline(in, line);
  const auto header = split(line);
  std::vector<std::map<std::string, std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) row[header[i]] = cells[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

struct Pooled {
  double accuracy = 0.0;
  std::size_t n = 0;
  std::map<std::string, double> by_subject;
};

Pooled pooled_accuracy(const fs::path& csv, const std::string& stage) {
  Pooled p;
  double hits = 0;
  for (const auto& r : read_csv(csv)) {
    if (r.at("model_stage") != stage) continue;
    const double acc = std::stod(r.at("accuracy"));
    const std::size_t n = std::stoul(r.at("n_examples"));
    hits += acc * static_cast<double>(n);
    p.n += n;
    p.by_subject[r.at("subject")] = acc;
  }
  p.accuracy = p.n ? hits / static_cast<double>(p.n) : std::nan("");
  return p;
}

double column_correlation(const Matrix<double>& a, const Matrix<double>& b, std::size_t c) {
  std::vector<double> x(a.rows()), y(a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) x[r] = a(r, c), y[r] = b(r, c);
  return oracles::pearson(x, y);
}

// TRF recovery on one synthetic subject, noise-free and at 0 dB.
Outcome criterion_1() {
  const auto t0 = Clock::now();
  const auto inv = inventory();
  synth::SynthConfig cfg;
  cfg.duration_s = 600;
  cfg.fs = 64;
  cfg.scheme = features::Scheme::vc;
  cfg.n_channels = 64;
  const auto track = synth::generate_alignment(cfg, inv, 101);
  const auto f = features::encode_representation(track, inv, cfg.scheme, cfg.fs, synth::sample_count(cfg));
  const auto S = trf::build_lagged_matrix(f, cfg.window_ms);

  cfg.snr_db = std::nullopt;
  const auto clean = synth::generate_eeg(cfg, f, 102);
  const auto exact = trf::ridge_fit(S, clean.eeg, 1e-6);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < exact.weights.values().size(); ++i) {
    const double d = exact.weights.values()[i] - clean.truth.w_true.values()[i];
    num += d * d;
    den += clean.truth.w_true.values()[i] * clean.truth.w_true.values()[i];
  }
  const double rel = std::sqrt(num / den);

  cfg.snr_db = 0.0;
  const auto noisy = synth::generate_eeg(cfg, f, 103);
  const auto b = signal::split_boundaries(f.n_samples());
  const auto S_train = trf::concat(S.rows(b[0], b[1]), S.rows(b[3], b[4]));
  const auto R_train = trf::concat(noisy.eeg.slice(b[0], b[1]), noisy.eeg.slice(b[3], b[4]));
  const auto sel = trf::select_lambda(S_train, R_train, S.rows(b[1], b[2]), noisy.eeg.slice(b[1], b[2]),
                                      trf::default_lambda_grid(), noisy.eeg.channel_names);
  const auto fit = trf::ridge_fit(S_train, R_train, sel.lambda);
  double worst = 1.0;
  for (std::size_t c = 0; c < cfg.n_channels; ++c)
    worst = std::min(worst, column_correlation(fit.weights, noisy.truth.w_true, c));

  const double elapsed = seconds_since(t0);
  return {rel <= 1e-5 && worst >= 0.90 && elapsed <= 10.0,
          "noise-free relative error " + fmt(rel, 3) + " (<= 1e-5); 0 dB min per-channel corr " + fmt(worst) +
              " at lambda " + fmt(sel.lambda, 3) + " (>= 0.90); runtime " + fmt(elapsed, 3) + " s (<= 10 s)"};
}

json synth_doc(const std::string& name, std::uint64_t seed, json synth) {
  return {{"seed", seed}, {"paths", {{"output_dir", (work_dir() / name).string()}}}, {"synth", std::move(synth)}};
}

// VC beats PHONE on a VC-driven corpus at 20 dB.
Outcome criterion_2() {
  auto doc = synth_doc("ordering", 2002,
                       {{"n_subjects", 20}, {"duration_s", 300}, {"fs", 64}, {"scheme", "vc"}, {"noise", "white"},
                        {"snr_db", 20}});
  doc["schemes"] = {"vc", "phone"};
  doc["match_mismatch"] = {{"enabled", false}};
  doc["stats"] = {{"pairs", json::array({json::array({"vc", "phone"})})}};
  auto p = make_pipeline(doc);
  p.synth();
  p.preprocess();
  p.encode();
  p.trf_fit();
  p.trf_eval();
  p.stats_compare();

  const json summary = io::read_json(p.out() / "trf" / "summary.json");
  std::size_t wins = 0, total = 0;
  double mean_vc = 0, mean_phone = 0;
  for (const auto& [sub, rho] : summary.at("vc").items()) {
    const double ph = summary.at("phone").at(sub).get<double>();
    wins += rho.get<double>() > ph;
    mean_vc += rho.get<double>();
    mean_phone += ph;
    ++total;
  }
  mean_vc /= static_cast<double>(total);
  mean_phone /= static_cast<double>(total);
  double adjusted = std::nan("");
  for (const auto& r : read_csv(p.out() / "stats" / "trf_comparisons.csv"))
    if (r.at("pair") == "vc_vs_phone") adjusted = std::stod(r.at("adjusted_p"));
  return {total == 20 && wins >= 18 && adjusted < 0.05,
          "VC > PHONE on " + std::to_string(wins) + "/" + std::to_string(total) + " subjects (>= 18); mean rho " +
              fmt(mean_vc) + " vs " + fmt(mean_phone) + "; adjusted p " + fmt(adjusted, 3) + " (< 0.05)"};
}

// EEG that is pure noise: no tracking, chance-level classification.
Outcome criterion_3() {
  auto doc = synth_doc("null", 3003,
                       {{"n_subjects", 20}, {"duration_s", 1120}, {"fs", 64}, {"scheme", "vc"}, {"noise", "white"},
                        {"kernels", {{"default", json::array()}}}});
  doc["schemes"] = {"vc"};
  doc["match_mismatch"] = {{"schemes", {"vc"}}, {"train", {{"max_epochs", 10}, {"patience", 2}}}};
  doc["stats"] = {{"pairs", json::array()}};
  auto p = make_pipeline(doc);
  p.synth();
  p.preprocess();
  p.encode();
  p.trf_fit();
  p.trf_eval();
  p.mm_build();
  p.mm_train();
  p.mm_eval();

  const json summary = io::read_json(p.out() / "trf" / "summary.json");
  double mean_rho = 0;
  for (const auto& [sub, rho] : summary.at("vc").items()) mean_rho += rho.get<double>();
  mean_rho /= static_cast<double>(summary.at("vc").size());
  const auto acc = pooled_accuracy(p.out() / "mm" / "accuracy.csv", "SI");
  return {std::abs(mean_rho) < 0.05 && acc.accuracy >= 0.47 && acc.accuracy <= 0.53 && acc.n >= 2000,
          "mean rho " + fmt(mean_rho, 3) + " (|.| < 0.05); accuracy " + fmt(acc.accuracy) + " in [0.47, 0.53] over " +
              std::to_string(acc.n) + " test examples (>= 2000)"};
}

// SI model learns a strongly coupled corpus; fine-tuning does not hurt.
Outcome criterion_4() {
  auto doc = synth_doc("learnability", 4004,
                       {{"n_subjects", 20}, {"duration_s", 240}, {"fs", 64}, {"scheme", "vc"}, {"noise", "white"},
                        {"snr_db", 10}});
  doc["schemes"] = {"vc"};
  doc["match_mismatch"] = {{"schemes", {"vc"}},
                           {"train", {{"max_epochs", 30}, {"patience", 5}}},
                           {"finetune", {{"max_epochs", 10}, {"patience", 3}}}};
  doc["stats"] = {{"pairs", json::array()}};
  auto p = make_pipeline(doc);
  p.synth();
  p.preprocess();
  p.encode();
  p.mm_build();
  p.mm_train();
  p.mm_finetune();
  p.mm_eval();

  const auto si = pooled_accuracy(p.out() / "mm" / "accuracy.csv", "SI");
  const auto ft = pooled_accuracy(p.out() / "mm" / "accuracy.csv", "finetuned");
  double worst_drop = -1.0;
  std::string worst_subject;
  for (const auto& [sub, a] : si.by_subject) {
    const double drop = a - ft.by_subject.at(sub);
    if (drop > worst_drop) worst_drop = drop, worst_subject = sub;
  }
  const auto history = read_csv(p.out() / "mm" / "vc" / "si_history.csv");
  return {si.accuracy >= 0.90 && worst_drop <= 0.01 && ft.by_subject.size() == si.by_subject.size(),
          "SI accuracy " + fmt(si.accuracy) + " over " + std::to_string(si.n) + " test examples after " +
              std::to_string(history.size()) + " epochs (>= 0.90); largest fine-tuning drop " + fmt(worst_drop, 3) +
              " (" + worst_subject + ", <= 0.01)"};
}

// Finite differences against backprop on the default architecture.
Outcome criterion_5() {
  nn::ModelConfig cfg;
  const auto inv = inventory();
  synth::SynthConfig sc;
  sc.duration_s = 30;
  sc.n_channels = cfg.eeg_channels;
  sc.snr_db = 10.0;
  const auto f = features::encode_representation(synth::generate_alignment(sc, inv, 501), inv, sc.scheme, sc.fs,
                                                 synth::sample_count(sc));
  const auto eeg = synth::generate_eeg(sc, f, 502).eeg;
  if (f.n_dims() != cfg.feature_dims) throw std::runtime_error("unexpected feature width");

  const std::size_t W = cfg.window_samples, gap = 64;
  std::vector<nn::Sample<double>> batch;
  for (std::size_t i = 0; i < 2; ++i) {
    const std::size_t t = 200 + 700 * i, mis = t + W + gap;
    const auto matched = MatrixView<double>::of(f.data, t, W), other = MatrixView<double>::of(f.data, mis, W);
    batch.push_back({MatrixView<double>::of(eeg.data, t, W), i ? other : matched, i ? matched : other,
                     i ? nn::Label::B : nn::Label::A});
  }

  auto params = nn::init_params<double>(cfg, 503);
  std::mt19937_64 rng(504);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& v : params.tensor("head.w2")) v = u(rng);
  for (auto& v : params.tensor("head.b1")) v = 0.2 * u(rng);

  const auto res = nn::gradient_check(params, batch, 1e-4, 48, 505);
  bool pass = !res.empty();
  std::string detail = std::to_string(cfg.parameter_count()) + " parameters;";
  for (const auto& g : res) {
    pass = pass && g.checked > 0 && g.max_rel_error < 1e-5;
    detail += " " + g.group + " " + fmt(g.max_rel_error, 2) + " (" + std::to_string(g.checked) + ")";
  }
  return {pass, detail + "; all < 1e-5"};
}

std::vector<double> holm_closed_form(const std::vector<double>& p) {
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] < p[b]; });
  std::vector<double> out(m);
  for (std::size_t k = 0; k < m; ++k) {
    double v = 0;
    for (std::size_t j = 0; j <= k; ++j) v = std::max(v, static_cast<double>(m - j) * p[order[j]]);
    out[order[k]] = std::min(1.0, v);
  }
  return out;
}

// Spearman, exact Wilcoxon and Holm against independent references.
Outcome criterion_6() {
  std::mt19937_64 rng(606);
  double spearman_err = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 5 + rng() % 300;
    const int levels = 2 + static_cast<int>(rng() % 12);
    std::uniform_int_distribution<int> level(0, levels - 1);
    std::vector<double> a(n), b(n);
    for (std::size_t k = 0; k < n; ++k) a[k] = level(rng), b[k] = level(rng) + 0.5 * a[k];
    if (std::all_of(a.begin(), a.end(), [&](double v) { return v == a[0]; })) a[0] += 1;
    if (std::all_of(b.begin(), b.end(), [&](double v) { return v == b[0]; })) b[0] += 1;
    spearman_err = std::max(spearman_err, std::abs(trf::spearman(a, b) - oracles::spearman(a, b)));
  }

  double wilcoxon_err = 0;
  std::size_t cases = 0;
  for (std::size_t n = 1; n <= 12; ++n)
    for (int rep = 0; rep < 25; ++rep) {
      std::uniform_int_distribution<int> level(-4, 4);
      std::vector<double> d(n);
      for (auto& v : d) v = rep % 2 ? level(rng) : std::normal_distribution<double>(0.3, 1.0)(rng);
      if (std::all_of(d.begin(), d.end(), [](double v) { return v == 0; })) d[0] = 1;
      wilcoxon_err = std::max(wilcoxon_err, std::abs(stats::wilcoxon_signed_rank(d).p - oracles::wilcoxon_p(d)));
      ++cases;
    }

  const std::vector<std::pair<std::vector<double>, std::vector<double>>> worked{
      {{0.01, 0.04, 0.03, 0.005}, {0.03, 0.06, 0.06, 0.02}},
      {{0.01, 0.02, 0.03}, {0.03, 0.04, 0.04}},
      {{0.5, 0.5}, {1.0, 1.0}},
      {{0.04}, {0.04}},
  };
  double holm_err = 0;
  for (const auto& [p, expected] : worked) {
    const auto got = stats::holm_bonferroni(p);
    const auto closed = holm_closed_form(p);
    for (std::size_t i = 0; i < p.size(); ++i)
      holm_err = std::max({holm_err, std::abs(got[i] - expected[i]), std::abs(closed[i] - expected[i])});
  }
  for (int i = 0; i < 200; ++i) {
    std::vector<double> p(1 + rng() % 10);
    for (auto& v : p) v = std::uniform_real_distribution<double>(0, 0.2)(rng);
    const auto got = stats::holm_bonferroni(p);
    const auto closed = holm_closed_form(p);
    for (std::size_t k = 0; k < p.size(); ++k) holm_err = std::max(holm_err, std::abs(got[k] - closed[k]));
  }

  return {spearman_err <= 1e-12 && wilcoxon_err <= 1e-12 && holm_err <= 1e-12,
          "spearman max diff " + fmt(spearman_err, 2) + " over 1000 tied pairs; wilcoxon max diff " +
              fmt(wilcoxon_err, 2) + " over " + std::to_string(cases) + " cases n <= 12; holm max diff " +
              fmt(holm_err, 2) + " (all <= 1e-12)"};
}

// Column-sum identities between schemes, and example counts by enumeration.
Outcome criterion_7() {
  using features::Scheme;
  const auto inv = inventory();
  std::vector<std::size_t> bpc_of_npc(37);
  for (const auto& [label, pc] : inv.entries()) bpc_of_npc[pc.npc_index] = static_cast<std::size_t>(pc.bpc);
  const std::vector<std::size_t> vc_of_bpc{0, 0, 1, 1, 1};

  std::size_t failures = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    synth::SynthConfig cfg;
    cfg.duration_s = 20 + static_cast<double>(seed % 7) * 5;
    const auto track = synth::generate_alignment(cfg, inv, 7000 + seed);
    const std::size_t n = synth::sample_count(cfg);
    const auto npc = features::encode_onsets(track, inv, Scheme::npc, cfg.fs, n);
    const auto bpc = features::encode_onsets(track, inv, Scheme::bpc, cfg.fs, n);
    const auto vc = features::encode_onsets(track, inv, Scheme::vc, cfg.fs, n);
    const auto ph = features::encode_onsets(track, inv, Scheme::phone, cfg.fs, n);
    bool ok = npc.collisions == 0;
    for (std::size_t t = 0; t < n && ok; ++t) {
      std::vector<double> b(5, 0.0), v(2, 0.0);
      for (std::size_t k = 0; k < 37; ++k) b[bpc_of_npc[k]] += npc.data(t, k);
      for (std::size_t k = 0; k < 5; ++k) {
        ok = ok && b[k] == bpc.data(t, k);
        v[vc_of_bpc[k]] += bpc.data(t, k);
      }
      ok = ok && v[0] == vc.data(t, 0) && v[1] == vc.data(t, 1) && v[0] + v[1] == ph.data(t, 0);
    }
    failures += !ok;
  }

  const mm::SegmentationConfig seg;
  const auto g = mm::geometry(seg, 64.0);
  std::mt19937_64 rng(707);
  std::size_t count_failures = 0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t n = i == 0 ? g.span() : g.span() + rng() % (64 * 240);
    std::size_t brute = 0;
    for (std::size_t t = 0; t < n; ++t)
      if (t % g.hop == 0 && t + g.span() <= n) ++brute;
    signal::TimeSeries eeg;
    eeg.fs = 64;
    eeg.data = Matrix<double>(n, 2, 0.0);
    eeg.channel_names = {"a", "b"};
    features::FeatureMatrix speech;
    speech.fs = 64;
    speech.data = Matrix<double>(n, 3, 0.0);
    speech.dim_names = {"vad", "vowel", "consonant"};
    speech.scheme = Scheme::vc;
    count_failures += mm::extract_examples(eeg, speech, seg).size() != brute;
  }
  return {failures == 0 && count_failures == 0,
          std::to_string(100 - failures) + "/100 alignments satisfy NPC->BPC->VC->PHONE sums; " +
              std::to_string(50 - count_failures) + "/50 lengths match enumerated example counts"};
}

// Documented constants from a minimal configuration.
Outcome criterion_8() {
  const auto cfg = config::parse_config(json{{"seed", 0}, {"synth", json::object()}}, work_dir());
  const auto g = mm::geometry(cfg.mm.segmentation, cfg.preprocessing.target_fs);
  const auto model = mm::model_config_for(cfg.mm.model, 64, 3, g.window);
  const double count = static_cast<double>(model.parameter_count());
  const bool pass = cfg.trf.window_ms == 400.0 && cfg.mm.segmentation.window_s == 5.0 &&
                    cfg.mm.segmentation.overlap_fraction == 0.8 && cfg.mm.segmentation.mismatch_gap_s == 1.0 &&
                    g.window == 320 && g.hop == 64 && g.gap == 64 && model.frames() == 104 &&
                    std::abs(count - 94000.0) <= 0.15 * 94000.0;
  return {pass, "window " + fmt(cfg.trf.window_ms) + " ms; decision window " + fmt(cfg.mm.segmentation.window_s) +
                    " s; overlap " + fmt(cfg.mm.segmentation.overlap_fraction) + "; gap " +
                    fmt(cfg.mm.segmentation.mismatch_gap_s) + " s; frames " + std::to_string(model.frames()) +
                    "; parameters " + std::to_string(model.parameter_count()) + " (94000 +- 15%)"};
}

std::map<std::string, std::string> csv_files(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().extension() == ".csv")
      out[fs::relative(e.path(), root).string()] = io::read_text(e.path());
  return out;
}

// The demo run twice under one seed gives byte-identical CSVs.
Outcome criterion_9() {
  const fs::path config = fs::path(PHONOTRACK_TEST_CONFIG_DIR) / "demo.json";
  std::vector<double> runtimes;
  std::vector<std::map<std::string, std::string>> outputs;
  for (const char* name : {"demo_a", "demo_b"}) {
    const auto out = work_dir() / name;
    const std::string cmd = std::string("\"") + PHONOTRACK_CLI + "\" pipeline run -q --config \"" + config.string() +
                            "\" --out \"" + out.string() + "\"";
    const auto t0 = Clock::now();
    const int status = std::system(cmd.c_str());
    runtimes.push_back(seconds_since(t0));
    if (status == -1 || WEXITSTATUS(status) != 0) return {false, "demo run exited with status " + std::to_string(status)};
    outputs.push_back(csv_files(out));
  }
  std::size_t differing = 0;
  std::set<std::string> names;
  for (const auto& o : outputs)
    for (const auto& [k, v] : o) names.insert(k);
  for (const auto& k : names)
    differing += !outputs[0].count(k) || !outputs[1].count(k) || outputs[0].at(k) != outputs[1].at(k);
  const double slowest = *std::max_element(runtimes.begin(), runtimes.end());
  return {differing == 0 && !names.empty() && slowest <= 600.0,
          std::to_string(names.size() - differing) + "/" + std::to_string(names.size()) +
              " CSV files byte-identical; runtimes " + fmt(runtimes[0], 3) + " s and " + fmt(runtimes[1], 3) +
              " s (<= 600 s)"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::function<Outcome()>> criteria{criterion_1, criterion_2, criterion_3,
                                                       criterion_4, criterion_5, criterion_6,
                                                       criterion_7, criterion_8, criterion_9};
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoul(argv[i]));

  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.count(i + 1)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i]();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << "criterion " << i + 1 << ": " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail << " ["
              << fmt(seconds_since(t0), 3) << " s]" << std::endl;
  }
  return all ? 0 : 1;
}
