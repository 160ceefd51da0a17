#include "phonotrack/features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "phonotrack/error.hpp"
#include "phonotrack/io.hpp"
#include "phonotrack/signal.hpp"

namespace phonotrack::features {

namespace {

std::string_view tier_name(Tier t) { return t == Tier::phone ? "phone" : "syllable"; }

Tier tier_from_string(std::string_view s) {
  if (s == "phone") return Tier::phone;
  if (s == "syllable") return Tier::syllable;
  throw ValidationError("unknown tier '" + std::string(s) + "'");
}

double parse_double(std::string_view s, std::string_view what) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || !std::isfinite(v))
    throw ValidationError("malformed " + std::string(what) + " '" + std::string(s) + "'");
  return v;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto tab = line.find('\t', pos);
    out.push_back(line.substr(pos, tab == std::string_view::npos ? std::string_view::npos : tab - pos));
    if (tab == std::string_view::npos) break;
    pos = tab + 1;
  }
  return out;
}

}  // namespace

std::vector<Interval> AlignmentTrack::tier(Tier t) const {
  std::vector<Interval> out;
  for (const auto& iv : intervals)
    if (iv.tier == t) out.push_back(iv);
  return out;
}

bool AlignmentTrack::has_tier(Tier t) const {
  return std::any_of(intervals.begin(), intervals.end(), [t](const Interval& iv) { return iv.tier == t; });
}

double AlignmentTrack::end_time() const {
  double end = 0.0;
  for (const auto& iv : intervals) end = std::max(end, iv.end_s);
  return end;
}

void normalize_track(AlignmentTrack& track) {
  for (const auto& iv : track.intervals) {
    if (!(iv.end_s > iv.start_s))
      throw ValidationError("interval '" + iv.label + "' at " + io::fmt_double(iv.start_s) + " s has end <= start");
    if (iv.start_s < 0.0) throw ValidationError("interval '" + iv.label + "' starts before 0");
  }
  auto less = [](const Interval& a, const Interval& b) {
    if (a.tier != b.tier) return a.tier < b.tier;
    return a.start_s < b.start_s;
  };
  if (!std::is_sorted(track.intervals.begin(), track.intervals.end(), less)) {
    track.warnings.push_back("intervals were not sorted by start time; reordered");
    std::stable_sort(track.intervals.begin(), track.intervals.end(), less);
  }
  for (std::size_t i = 1; i < track.intervals.size(); ++i) {
    const auto& prev = track.intervals[i - 1];
    const auto& cur = track.intervals[i];
    if (prev.tier == cur.tier && cur.start_s < prev.end_s)
      throw ValidationError("overlapping " + std::string(tier_name(cur.tier)) + " intervals '" + prev.label + "' and '" +
                            cur.label + "' at " + io::fmt_double(cur.start_s) + " s");
  }
}

AlignmentTrack parse_alignment(std::string_view tsv, std::string_view source) {
  AlignmentTrack track;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::size_t pos = 0;
  while (pos <= tsv.size()) {
    auto nl = tsv.find('\n', pos);
    std::string_view line = tsv.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? tsv.size() + 1 : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto where = std::string(source) + ":" + std::to_string(line_no) + ": ";
    const auto fields = split_tabs(line);
    if (!header_seen) {
      if (fields.size() != 4 || fields[0] != "tier" || fields[1] != "label" || fields[2] != "start_s" ||
          fields[3] != "end_s")
        throw ValidationError(where + "expected header 'tier\\tlabel\\tstart_s\\tend_s'");
      header_seen = true;
      continue;
    }
    if (fields.size() != 4) throw ValidationError(where + "expected 4 tab-separated fields");
    try {
      Interval iv;
      iv.tier = tier_from_string(fields[0]);
      if (fields[1].empty()) throw ValidationError("empty label");
      iv.label = std::string(fields[1]);
      iv.start_s = parse_double(fields[2], "start_s");
      iv.end_s = parse_double(fields[3], "end_s");
      track.intervals.push_back(std::move(iv));
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
  }
  if (!header_seen) throw ValidationError(std::string(source) + ": missing header");
  normalize_track(track);
  return track;
}

AlignmentTrack load_alignment(const std::filesystem::path& path) {
  return parse_alignment(io::read_text(path), path.string());
}

std::string format_alignment(const AlignmentTrack& track) {
  std::string out = "tier\tlabel\tstart_s\tend_s\n";
  for (const auto& iv : track.intervals) {
    out += tier_name(iv.tier);
    out += '\t' + iv.label + '\t' + io::fmt_double(iv.start_s) + '\t' + io::fmt_double(iv.end_s) + '\n';
  }
  return out;
}

void write_alignment(const std::filesystem::path& path, const AlignmentTrack& track) {
  io::write_text(path, format_alignment(track));
}

// ---------------------------------------------------------------------------

std::string_view to_string(BroadClass c) {
  switch (c) {
    case BroadClass::short_vowel: return "short_vowel";
    case BroadClass::long_vowel: return "long_vowel";
    case BroadClass::plosive: return "plosive";
    case BroadClass::fricative: return "fricative";
    case BroadClass::nasal_approximant: return "nasal_approximant";
  }
  return "?";
}

BroadClass broad_class_from_string(std::string_view s) {
  for (auto c : {BroadClass::short_vowel, BroadClass::long_vowel, BroadClass::plosive, BroadClass::fricative,
                 BroadClass::nasal_approximant})
    if (s == to_string(c)) return c;
  throw ValidationError("unknown broad phonetic class '" + std::string(s) + "'");
}

PhoneInventory::PhoneInventory(std::map<std::string, PhoneClass> entries) : entries_(std::move(entries)) {
  std::map<int, std::pair<std::string, BroadClass>> by_index;
  for (const auto& [label, pc] : entries_) {
    if (pc.npc_index < 0 || pc.npc_index >= kNarrowClasses)
      throw ValidationError("phone '" + label + "': npc_index " + std::to_string(pc.npc_index) + " outside [0,36]");
    if (pc.is_vowel != is_vowel_class(pc.bpc))
      throw ValidationError("phone '" + label + "': is_vowel disagrees with bpc_class " + std::string(to_string(pc.bpc)));
    auto [it, fresh] = by_index.emplace(pc.npc_index, std::make_pair(label, pc.bpc));
    if (!fresh && it->second.second != pc.bpc)
      throw ValidationError("phones '" + it->second.first + "' and '" + label + "' share npc_index " +
                            std::to_string(pc.npc_index) + " but have different broad classes");
  }
}

PhoneInventory PhoneInventory::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("phone inventory must be a JSON object");
  std::map<std::string, PhoneClass> entries;
  for (const auto& [label, v] : j.items()) {
    try {
      PhoneClass pc;
      pc.npc_index = v.at("npc_index").get<int>();
      pc.is_vowel = v.at("is_vowel").get<bool>();
      pc.bpc = broad_class_from_string(v.at("bpc_class").get<std::string>());
      entries.emplace(label, pc);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("phone '" + label + "': " + e.what());
    }
  }
  return PhoneInventory(std::move(entries));
}

nlohmann::json PhoneInventory::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [label, pc] : entries_)
    j[label] = {{"npc_index", pc.npc_index}, {"is_vowel", pc.is_vowel}, {"bpc_class", to_string(pc.bpc)}};
  return j;
}

const PhoneClass& PhoneInventory::at(const std::string& label) const {
  auto it = entries_.find(label);
  if (it == entries_.end()) throw ValidationError("phone label '" + label + "' not in inventory");
  return it->second;
}

std::vector<std::string> PhoneInventory::npc_names() const {
  std::vector<std::string> names(kNarrowClasses);
  for (const auto& [label, pc] : entries_)
    if (names[static_cast<std::size_t>(pc.npc_index)].empty()) names[static_cast<std::size_t>(pc.npc_index)] = label;
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i].empty()) names[i] = "npc" + std::to_string(i);
  return names;
}

std::vector<std::string> PhoneInventory::labels_of(BroadClass c) const {
  std::vector<std::string> out;
  for (const auto& [label, pc] : entries_)
    if (pc.bpc == c) out.push_back(label);
  return out;
}

std::vector<std::string> PhoneInventory::vowels() const {
  std::vector<std::string> out;
  for (const auto& [label, pc] : entries_)
    if (pc.is_vowel) out.push_back(label);
  return out;
}

std::vector<std::string> PhoneInventory::consonants() const {
  std::vector<std::string> out;
  for (const auto& [label, pc] : entries_)
    if (!pc.is_vowel) out.push_back(label);
  return out;
}

PhoneInventory load_inventory(const std::filesystem::path& path) {
  try {
    return PhoneInventory::from_json(io::read_json(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

std::string_view to_string(Scheme s) {
  switch (s) {
    case Scheme::vad: return "vad";
    case Scheme::npc: return "npc";
    case Scheme::bpc: return "bpc";
    case Scheme::vc: return "vc";
    case Scheme::phone: return "phone";
    case Scheme::vowel: return "vowel";
    case Scheme::consonant: return "consonant";
    case Scheme::syllable: return "syllable";
  }
  return "?";
}

const std::vector<Scheme>& all_schemes() {
  static const std::vector<Scheme> s{Scheme::vad,   Scheme::npc,   Scheme::bpc,       Scheme::vc,
                                     Scheme::phone, Scheme::vowel, Scheme::consonant, Scheme::syllable};
  return s;
}

Scheme scheme_from_string(std::string_view s) {
  for (Scheme sc : all_schemes())
    if (s == to_string(sc)) return sc;
  throw ValidationError("unknown speech representation '" + std::string(s) + "'");
}

std::size_t scheme_dims(Scheme s) {
  switch (s) {
    case Scheme::npc: return kNarrowClasses;
    case Scheme::bpc: return kBroadClasses;
    case Scheme::vc: return 2;
    default: return 1;
  }
}

std::size_t onset_index(double start_s, double fs, std::size_t n_samples, bool* clipped) {
  const double raw = std::floor(0.5 + start_s * fs);
  bool clip = false;
  std::size_t idx = 0;
  if (raw < 0.0) {
    clip = true;
  } else if (raw > static_cast<double>(n_samples - 1)) {
    clip = true;
    idx = n_samples - 1;
  } else {
    idx = static_cast<std::size_t>(raw);
  }
  if (clipped) *clipped = clip;
  return idx;
}

namespace {

void check_rate(double fs, std::size_t n_samples) {
  if (!(fs > 0.0)) throw ValidationError("feature sampling rate must be positive");
  if (n_samples == 0) throw ValidationError("feature matrix needs at least one sample");
}

std::vector<std::string> scheme_dim_names(Scheme s, const PhoneInventory& inv) {
  switch (s) {
    case Scheme::vad: return {"vad"};
    case Scheme::npc: return inv.npc_names();
    case Scheme::bpc: return {"short_vowel", "long_vowel", "plosive", "fricative", "nasal_approximant"};
    case Scheme::vc: return {"vowel", "consonant"};
    default: return {std::string(to_string(s))};
  }
}

// Target column for a phone under a scheme, or -1 when the scheme drops it.
int phone_column(Scheme s, const PhoneClass& pc) {
  switch (s) {
    case Scheme::npc: return pc.npc_index;
    case Scheme::bpc: return static_cast<int>(pc.bpc);
    case Scheme::vc: return pc.is_vowel ? 0 : 1;
    case Scheme::phone: return 0;
    case Scheme::vowel: return pc.is_vowel ? 0 : -1;
    case Scheme::consonant: return pc.is_vowel ? -1 : 0;
    default: return -1;
  }
}

}  // namespace

FeatureMatrix encode_vad(const AlignmentTrack& track, double fs, std::size_t n_samples, const EncodingOptions& opt) {
  check_rate(fs, n_samples);
  const double needed = std::round(track.end_time() * fs);
  if (needed > static_cast<double>(n_samples))
    throw ValidationError("n_samples " + std::to_string(n_samples) + " does not cover the alignment (" +
                          io::fmt_double(needed) + " samples needed)");
  FeatureMatrix f{Matrix<double>(n_samples, 1, 0.0), fs, {"vad"}, Scheme::vad};
  for (const auto& iv : track.intervals) {
    if (iv.tier != Tier::phone || opt.silence_labels.count(iv.label)) continue;
    // Samples k with start <= k/fs < end.
    long k = static_cast<long>(std::ceil(iv.start_s * fs)) - 1;
    if (k < 0) k = 0;
    for (; k < static_cast<long>(n_samples); ++k) {
      const double t = static_cast<double>(k) / fs;
      if (t >= iv.end_s) break;
      if (t >= iv.start_s) f.data(static_cast<std::size_t>(k), 0) = 1.0;
    }
  }
  return f;
}

FeatureMatrix encode_onsets(const AlignmentTrack& track, const PhoneInventory& inv, Scheme scheme, double fs,
                            std::size_t n_samples, const EncodingOptions& opt) {
  if (scheme == Scheme::vad) throw ValidationError("encode_onsets does not produce VAD; use encode_vad");
  check_rate(fs, n_samples);
  FeatureMatrix f{Matrix<double>(n_samples, scheme_dims(scheme), 0.0), fs, scheme_dim_names(scheme, inv), scheme};

  auto place = [&](double start_s, int column) {
    bool clipped = false;
    const std::size_t idx = onset_index(start_s, fs, n_samples, &clipped);
    if (clipped) ++f.clipped;
    double& cell = f.data(idx, static_cast<std::size_t>(column));
    if (cell != 0.0) ++f.collisions;
    cell = 1.0;
  };

  if (scheme == Scheme::syllable) {
    if (!track.has_tier(Tier::syllable)) throw ValidationError("syllable onsets need a syllable tier in the alignment");
    for (const auto& iv : track.intervals)
      if (iv.tier == Tier::syllable && !opt.silence_labels.count(iv.label)) place(iv.start_s, 0);
    return f;
  }

  for (const auto& iv : track.intervals) {
    if (iv.tier != Tier::phone || opt.silence_labels.count(iv.label)) continue;
    const int col = phone_column(scheme, inv.at(iv.label));
    if (col >= 0) place(iv.start_s, col);
  }
  return f;
}

FeatureMatrix prepend_vad(const FeatureMatrix& features, const FeatureMatrix& vad) {
  if (vad.n_dims() != 1) throw ValidationError("VAD must have exactly one dimension");
  if (features.n_samples() != vad.n_samples() || features.fs != vad.fs)
    throw ValidationError("VAD and features differ in length or sampling rate");
  FeatureMatrix out{Matrix<double>(features.n_samples(), features.n_dims() + 1), features.fs, {}, features.scheme,
                    features.collisions, features.clipped};
  out.dim_names.push_back("vad");
  out.dim_names.insert(out.dim_names.end(), features.dim_names.begin(), features.dim_names.end());
  for (std::size_t t = 0; t < out.n_samples(); ++t) {
    out.data(t, 0) = vad.data(t, 0);
    for (std::size_t d = 0; d < features.n_dims(); ++d) out.data(t, d + 1) = features.data(t, d);
  }
  return out;
}

FeatureMatrix encode_representation(const AlignmentTrack& track, const PhoneInventory& inv, Scheme scheme, double fs,
                                    std::size_t n_samples, const EncodingOptions& opt) {
  FeatureMatrix vad = encode_vad(track, fs, n_samples, opt);
  if (scheme == Scheme::vad) return vad;
  return prepend_vad(encode_onsets(track, inv, scheme, fs, n_samples, opt), vad);
}

void write_features(const std::filesystem::path& bin, const FeatureMatrix& f) {
  signal::TimeSeries ts{f.data, f.fs, f.dim_names};
  nlohmann::json extra = {{"dim_names", f.dim_names},
                          {"scheme", to_string(f.scheme)},
                          {"collisions", f.collisions},
                          {"clipped", f.clipped}};
  signal::write_timeseries(bin, ts, extra);
}

FeatureMatrix read_features(const std::filesystem::path& bin) {
  const auto side = io::read_json(io::sidecar_path(bin));
  FeatureMatrix f;
  try {
    f.fs = side.at("fs").get<double>();
    f.dim_names = side.at("dim_names").get<std::vector<std::string>>();
    f.scheme = scheme_from_string(side.at("scheme").get<std::string>());
    f.collisions = side.value("collisions", std::size_t{0});
    f.clipped = side.value("clipped", std::size_t{0});
    f.data = io::read_f32(bin, side.at("n_samples").get<std::size_t>(), side.at("n_channels").get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(io::sidecar_path(bin).string() + ": " + e.what());
  }
  if (f.dim_names.size() != f.n_dims()) throw ValidationError(bin.string() + ": dim_names do not match n_channels");
  return f;
}

}  // namespace phonotrack::features
