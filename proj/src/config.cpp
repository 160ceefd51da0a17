#include "phonotrack/config.hpp"

#include <cmath>
#include <set>

#include "phonotrack/io.hpp"
#include "phonotrack/trf.hpp"

#ifndef PHONOTRACK_DATA_DIR
#define PHONOTRACK_DATA_DIR "data"
#endif

namespace phonotrack::config {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string join_errors(const std::vector<std::string>& errors) {
  std::string out = errors.size() == 1 ? "invalid configuration:" : std::to_string(errors.size()) + " configuration errors:";
  for (const auto& e : errors) out += "\n  " + e;
  return out;
}

// Reads one JSON object, tracking which keys were consumed so leftovers can be
// reported, and collecting type errors instead of throwing.
class Section {
 public:
  Section(const json* j, std::string path, std::vector<std::string>& errors)
      : j_(j), path_(std::move(path)), errors_(errors) {
    if (j_ && !j_->is_object()) {
      error("", "expected an object");
      j_ = nullptr;
    }
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  void error(const std::string& key, const std::string& msg) const {
    const std::string p = key.empty() ? path_ : key_path(key);
    errors_.push_back((p.empty() ? std::string("<root>") : p) + ": " + msg);
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_ && j_->contains(key);
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    try {
      return j_->at(key).get<T>();
    } catch (const json::exception&) {
      error(key, std::string("expected ") + type_name<T>());
      return fallback;
    }
  }

  const json* raw(const std::string& key) {
    if (!has(key)) return nullptr;
    return &j_->at(key);
  }

  Section child(const std::string& key) {
    has(key);
    return Section(j_ && j_->contains(key) ? &j_->at(key) : nullptr, key_path(key), errors_);
  }

  void finish() const {
    if (!j_) return;
    for (const auto& [k, v] : j_->items())
      if (!seen_.count(k)) error(k, "unknown key");
  }

  bool present() const { return j_ != nullptr; }

 private:
  template <class T>
  static const char* type_name() {
    if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_integral_v<T>) return "an integer";
    else if constexpr (std::is_floating_point_v<T>) return "a number";
    else if constexpr (std::is_same_v<T, std::string>) return "a string";
    else return "an array";
  }

  const json* j_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

std::vector<features::Scheme> read_schemes(Section& s, const std::string& key, std::vector<features::Scheme> fallback) {
  const auto names = s.get<std::vector<std::string>>(key, {});
  if (!s.has(key)) return fallback;
  std::vector<features::Scheme> out;
  for (const auto& n : names) {
    try {
      out.push_back(features::scheme_from_string(n));
    } catch (const std::exception&) {
      s.error(key, "unknown scheme \"" + n + "\"");
    }
  }
  if (out.empty() && names.empty()) s.error(key, "must list at least one scheme");
  return out;
}

nn::TrainConfig read_train(Section s, const nn::TrainConfig& d) {
  nn::TrainConfig c;
  c.max_epochs = s.get<int>("max_epochs", d.max_epochs);
  c.patience = s.get<int>("patience", d.patience);
  c.learning_rate = s.get<double>("learning_rate", d.learning_rate);
  c.batch_size = s.get<std::size_t>("batch_size", d.batch_size);
  c.seed = d.seed;
  c.beta1 = s.get<double>("beta1", d.beta1);
  c.beta2 = s.get<double>("beta2", d.beta2);
  c.epsilon = s.get<double>("epsilon", d.epsilon);
  s.finish();
  if (c.max_epochs < 0) s.error("max_epochs", "must be >= 0 (TrainConfig)");
  if (c.patience < 1) s.error("patience", "must be >= 1 (TrainConfig)");
  if (c.max_epochs > 0 && c.patience >= c.max_epochs) s.error("patience", "must be < max_epochs (TrainConfig)");
  if (!(c.learning_rate >= 0.0)) s.error("learning_rate", "must be >= 0 (TrainConfig)");
  if (c.batch_size == 0) s.error("batch_size", "must be > 0 (TrainConfig)");
  if (!(c.beta1 >= 0 && c.beta1 < 1)) s.error("beta1", "must be in [0, 1) (TrainConfig)");
  if (!(c.beta2 >= 0 && c.beta2 < 1)) s.error("beta2", "must be in [0, 1) (TrainConfig)");
  if (!(c.epsilon > 0)) s.error("epsilon", "must be > 0 (TrainConfig)");
  return c;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> errors) : ValidationError(join_errors(errors)), errors_(std::move(errors)) {}

fs::path default_inventory_path() { return fs::path(PHONOTRACK_DATA_DIR) / "default_inventory.json"; }

RunConfig parse_config(const json& doc, const fs::path& base_dir) {
  std::vector<std::string> errors;
  RunConfig cfg;
  if (!doc.is_object()) throw ConfigError({"<root>: expected a JSON object with at least the key \"seed\""});
  Section root(&doc, "", errors);

  if (!root.has("seed")) {
    root.error("seed", "required key missing");
  } else if (!doc.at("seed").is_number_integer() || doc.at("seed").get<std::int64_t>() < 0) {
    root.error("seed", "expected a non-negative integer");
  } else {
    cfg.seed = doc.at("seed").get<std::uint64_t>();
  }

  // paths
  {
    Section s = root.child("paths");
    const auto dataset = s.get<std::string>("dataset", "");
    const auto out = s.get<std::string>("output_dir", "out");
    const auto inventory = s.get<std::string>("inventory", "");
    s.finish();
    cfg.output_dir = resolve(base_dir, out);
    if (!dataset.empty()) {
      cfg.dataset = resolve(base_dir, dataset);
      if (fs::is_directory(cfg.dataset)) cfg.dataset /= "manifest.json";
    }
    if (!inventory.empty()) {
      cfg.inventory = resolve(base_dir, inventory);
      if (!fs::exists(cfg.inventory)) s.error("inventory", "file not found: " + cfg.inventory.string());
    }
  }

  // synth
  if (root.has("synth")) {
    Section s = root.child("synth");
    CorpusSettings cs;
    cs.n_subjects = s.get<std::size_t>("n_subjects", cs.n_subjects);
    json sub = doc.at("synth");
    if (sub.is_object()) {
      sub.erase("n_subjects");
      static const std::set<std::string> known{"duration_s", "fs", "window_ms", "scheme", "kernels", "mixing",
                                               "mixing_matrix", "mixing_perturbation", "n_channels", "noise", "snr_db",
                                               "phone_mean_s", "phone_sd_s", "phone_min_s", "speech_run_mean_s",
                                               "silence_mean_s", "silence_min_s"};
      bool ok = true;
      for (const auto& [k, v] : sub.items()) {
        if (!known.count(k)) {
          s.error(k, "unknown key");
          ok = false;
        }
      }
      if (ok) {
        try {
          cs.synth = synth::SynthConfig::from_json(sub);
          cs.synth.validate();
        } catch (const std::exception& e) {
          s.error("", e.what());
        }
      }
    }
    cfg.synth = cs;
  }

  if (cfg.dataset.empty()) {
    if (cfg.synth)
      cfg.dataset = cfg.output_dir / "dataset" / "manifest.json";
    else
      errors.push_back("paths.dataset: required unless a synth section generates the corpus");
  } else if (!cfg.synth && !fs::exists(cfg.dataset)) {
    errors.push_back("paths.dataset: file not found: " + cfg.dataset.string());
  }
  if (cfg.inventory.empty() && cfg.synth) {
    cfg.inventory = default_inventory_path();
    if (!fs::exists(cfg.inventory)) errors.push_back("paths.inventory: default inventory not found at " + cfg.inventory.string());
  }

  // preprocessing
  {
    Section s = root.child("preprocessing");
    auto& p = cfg.preprocessing;
    p.highpass_hz = s.get<double>("highpass_hz", p.highpass_hz);
    p.filter_order = s.get<int>("filter_order", p.filter_order);
    p.target_fs = s.get<double>("target_fs", p.target_fs);
    s.finish();
    if (!(p.highpass_hz > 0)) s.error("highpass_hz", "must be > 0");
    if (p.filter_order < 1) s.error("filter_order", "must be >= 1");
    if (!(p.target_fs > 0)) s.error("target_fs", "must be > 0");
    else if (!(p.highpass_hz < p.target_fs / 2)) s.error("highpass_hz", "must be below the Nyquist rate of target_fs");
  }

  cfg.schemes = read_schemes(root, "schemes", features::all_schemes());

  // trf
  {
    Section s = root.child("trf");
    cfg.trf.window_ms = s.get<double>("window_ms", cfg.trf.window_ms);
    cfg.trf.lambda_grid = s.get<std::vector<double>>("lambda_grid", trf::default_lambda_grid());
    cfg.trf.channels = s.get<std::vector<std::string>>("channels", trf::default_channel_subset());
    const json* w = s.raw("topo_windows");
    if (!w) {
      // Defaults that do not fit a shorter window are dropped.
      std::erase_if(cfg.trf.topo_windows, [&](const auto& lh) { return lh.second > cfg.trf.window_ms; });
    } else {
      cfg.trf.topo_windows.clear();
      try {
        for (const auto& pr : *w) {
          const auto v = pr.get<std::vector<double>>();
          if (v.size() != 2 || !(v[0] <= v[1])) throw std::invalid_argument("bad window");
          cfg.trf.topo_windows.emplace_back(v[0], v[1]);
        }
      } catch (const std::exception&) {
        s.error("topo_windows", "expected a list of [lo_ms, hi_ms] pairs with lo <= hi");
      }
    }
    s.finish();
    if (!(cfg.trf.window_ms >= 0)) s.error("window_ms", "must be >= 0");
    if (cfg.trf.lambda_grid.empty()) s.error("lambda_grid", "must not be empty");
    for (double l : cfg.trf.lambda_grid)
      if (!(l >= 0) || !std::isfinite(l)) s.error("lambda_grid", "values must be finite and >= 0");
    if (cfg.trf.channels.empty()) s.error("channels", "must not be empty");
    for (const auto& [lo, hi] : cfg.trf.topo_windows)
      if (lo < 0 || hi > cfg.trf.window_ms)
        s.error("topo_windows", "[" + io::fmt_double(lo) + ", " + io::fmt_double(hi) + "] lies outside [0, window_ms]");
  }

  // match_mismatch
  {
    Section s = root.child("match_mismatch");
    auto& m = cfg.mm;
    m.enabled = s.get<bool>("enabled", m.enabled);
    m.schemes = read_schemes(s, "schemes", m.schemes);
    {
      Section g = s.child("segmentation");
      auto& seg = m.segmentation;
      seg.window_s = g.get<double>("window_s", seg.window_s);
      seg.overlap_fraction = g.get<double>("overlap_fraction", seg.overlap_fraction);
      seg.mismatch_gap_s = g.get<double>("mismatch_gap_s", seg.mismatch_gap_s);
      g.finish();
      if (!(seg.window_s > 0)) g.error("window_s", "must be > 0 (SegmentationConfig bound window_s > 0)");
      if (!(seg.overlap_fraction >= 0 && seg.overlap_fraction < 1))
        g.error("overlap_fraction", io::fmt_double(seg.overlap_fraction) +
                                        " violates the SegmentationConfig bound 0 <= overlap_fraction < 1");
      if (!(seg.mismatch_gap_s >= 0)) g.error("mismatch_gap_s", "must be >= 0 (SegmentationConfig bound gap >= 0)");
    }
    {
      Section g = s.child("model");
      auto& mc = m.model;
      for (const char* fixed : {"eeg_channels", "feature_dims"})
        if (g.has(fixed)) g.error(fixed, "is derived from the data and cannot be set");
      mc.window_samples = g.get<std::size_t>("window_samples", 0);
      mc.time_kernel = g.get<std::size_t>("time_kernel", mc.time_kernel);
      mc.time_stride = g.get<std::size_t>("time_stride", mc.time_stride);
      mc.eeg_filters = g.get<std::size_t>("eeg_filters", mc.eeg_filters);
      mc.speech_filters = g.get<std::size_t>("speech_filters", mc.speech_filters);
      mc.lstm_units = g.get<std::size_t>("lstm_units", mc.lstm_units);
      mc.head_hidden = g.get<std::size_t>("head_hidden", mc.head_hidden);
      g.finish();
      const auto expect = static_cast<std::size_t>(std::llround(m.segmentation.window_s * cfg.preprocessing.target_fs));
      if (mc.window_samples != 0 && mc.window_samples != expect)
        g.error("window_samples", "must equal window_s * target_fs = " + std::to_string(expect));
      mc.window_samples = expect;
      for (auto [k, v] : {std::pair{"time_kernel", mc.time_kernel}, {"time_stride", mc.time_stride},
                          {"eeg_filters", mc.eeg_filters}, {"speech_filters", mc.speech_filters},
                          {"lstm_units", mc.lstm_units}, {"head_hidden", mc.head_hidden}})
        if (v == 0) g.error(k, "must be > 0");
      if (mc.time_kernel > mc.window_samples) g.error("time_kernel", "exceeds the window length in samples");
    }
    m.train = read_train(s.child("train"), nn::TrainConfig{});
    nn::TrainConfig ft_defaults = m.train;
    m.finetune = read_train(s.child("finetune"), ft_defaults);
    s.finish();
  }

  // stats
  {
    Section s = root.child("stats");
    if (const json* pairs = s.raw("pairs")) {
      try {
        for (const auto& p : *pairs) {
          const auto v = p.get<std::vector<std::string>>();
          if (v.size() != 2) throw std::invalid_argument("pair");
          cfg.stats_pairs.emplace_back(v[0], v[1]);
        }
      } catch (const std::exception&) {
        s.error("pairs", "expected a list of [scheme_a, scheme_b] pairs");
      }
      std::set<std::string> names;
      for (auto sc : cfg.schemes) names.insert(std::string(features::to_string(sc)));
      for (const auto& [a, b] : cfg.stats_pairs)
        for (const auto& n : {a, b})
          if (!names.count(n)) s.error("pairs", "scheme \"" + n + "\" is not among the configured schemes");
    } else {
      const bool has_vad = std::count(cfg.schemes.begin(), cfg.schemes.end(), features::Scheme::vad) > 0;
      for (auto sc : cfg.schemes)
        if (sc != features::Scheme::vad && has_vad) cfg.stats_pairs.emplace_back(features::to_string(sc), "vad");
    }
    s.finish();
  }

  root.finish();
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return cfg;
}

RunConfig validate_config(const fs::path& path) { return validate_config(path, {}); }

void apply_override(json& doc, const Override& o) {
  if (o.first.empty()) throw ConfigError({"override with an empty key"});
  json* node = &doc;
  std::size_t a = 0;
  while (true) {
    const std::size_t b = o.first.find('.', a);
    const std::string key = o.first.substr(a, b == std::string::npos ? std::string::npos : b - a);
    if (key.empty()) throw ConfigError({o.first + ": malformed key path"});
    if (!node->is_object()) throw ConfigError({o.first + ": cannot descend into a non-object"});
    if (b == std::string::npos) {
      (*node)[key] = o.second;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    a = b + 1;
  }
}

RunConfig validate_config(const fs::path& path, const std::vector<Override>& overrides) {
  if (!fs::exists(path)) throw ConfigError({path.string() + ": file not found"});
  const std::string text = io::read_text(path);
  json doc;
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
    doc = json::object();
  } else {
    try {
      doc = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError({path.string() + ": " + e.what()});
    }
  }
  if (!doc.is_object()) throw ConfigError({"<root>: expected a JSON object"});
  for (const auto& o : overrides) apply_override(doc, o);
  RunConfig cfg = parse_config(doc, fs::absolute(path).parent_path());
  cfg.config_path = fs::absolute(path);
  return cfg;
}

json RunConfig::to_json() const {
  auto names = [](const std::vector<features::Scheme>& v) {
    std::vector<std::string> out;
    for (auto s : v) out.emplace_back(features::to_string(s));
    return out;
  };
  json topo = json::array();
  for (const auto& [lo, hi] : trf.topo_windows) topo.push_back({lo, hi});
  json pairs = json::array();
  for (const auto& [a, b] : stats_pairs) pairs.push_back({a, b});
  auto model = mm.model.to_json();
  model.erase("eeg_channels");
  model.erase("feature_dims");
  auto train = mm.train.to_json();
  train.erase("seed");
  auto ft = mm.finetune.to_json();
  ft.erase("seed");
  json j{{"seed", seed},
         {"paths",
          {{"dataset", dataset.generic_string()},
           {"output_dir", output_dir.generic_string()},
           {"inventory", inventory.generic_string()}}},
         {"preprocessing",
          {{"highpass_hz", preprocessing.highpass_hz},
           {"filter_order", preprocessing.filter_order},
           {"target_fs", preprocessing.target_fs}}},
         {"schemes", names(schemes)},
         {"trf",
          {{"window_ms", trf.window_ms}, {"lambda_grid", trf.lambda_grid}, {"channels", trf.channels}, {"topo_windows", topo}}},
         {"match_mismatch",
          {{"enabled", mm.enabled},
           {"schemes", names(mm.schemes)},
           {"segmentation", mm.segmentation.to_json()},
           {"model", model},
           {"train", train},
           {"finetune", ft}}},
         {"stats", {{"pairs", pairs}}}};
  if (synth) {
    auto s = synth->synth.to_json();
    s["n_subjects"] = synth->n_subjects;
    j["synth"] = s;
  }
  return j;
}

}  // namespace phonotrack::config
