#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "phonotrack/matrix.hpp"

namespace phonotrack::features {

enum class Tier { phone, syllable };

struct Interval {
  Tier tier = Tier::phone;
  std::string label;
  double start_s = 0.0;
  double end_s = 0.0;
};

// Forced-alignment output. Intervals are sorted by (tier, start) and never
// overlap within a tier.
struct AlignmentTrack {
  std::vector<Interval> intervals;
  std::vector<std::string> warnings;

  std::vector<Interval> tier(Tier t) const;
  bool has_tier(Tier t) const;
  double end_time() const;
};

// Sorts each tier, records a warning if the input was out of order, and
// rejects overlaps and empty intervals.
void normalize_track(AlignmentTrack& track);

AlignmentTrack parse_alignment(std::string_view tsv, std::string_view source = "<memory>");
AlignmentTrack load_alignment(const std::filesystem::path& path);
std::string format_alignment(const AlignmentTrack& track);
void write_alignment(const std::filesystem::path& path, const AlignmentTrack& track);

enum class BroadClass { short_vowel, long_vowel, plosive, fricative, nasal_approximant };
inline constexpr int kNarrowClasses = 37;
inline constexpr int kBroadClasses = 5;

std::string_view to_string(BroadClass c);
BroadClass broad_class_from_string(std::string_view s);
inline bool is_vowel_class(BroadClass c) { return c == BroadClass::short_vowel || c == BroadClass::long_vowel; }

struct PhoneClass {
  int npc_index = 0;
  bool is_vowel = false;
  BroadClass bpc = BroadClass::plosive;
};

class PhoneInventory {
 public:
  PhoneInventory() = default;
  explicit PhoneInventory(std::map<std::string, PhoneClass> entries);

  static PhoneInventory from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  const std::map<std::string, PhoneClass>& entries() const { return entries_; }
  bool contains(const std::string& label) const { return entries_.count(label) != 0; }
  const PhoneClass& at(const std::string& label) const;

  // One name per narrow class index: the alphabetically first label using it,
  // or "npc<i>" for unused indices.
  std::vector<std::string> npc_names() const;
  std::vector<std::string> labels_of(BroadClass c) const;
  std::vector<std::string> vowels() const;
  std::vector<std::string> consonants() const;

 private:
  std::map<std::string, PhoneClass> entries_;
};

PhoneInventory load_inventory(const std::filesystem::path& path);

enum class Scheme { vad, npc, bpc, vc, phone, vowel, consonant, syllable };

std::string_view to_string(Scheme s);
Scheme scheme_from_string(std::string_view s);
const std::vector<Scheme>& all_schemes();
// Number of dimensions the scheme itself contributes (without VAD).
std::size_t scheme_dims(Scheme s);

// Sampled speech representation, samples x dims, values in {0, 1}.
struct FeatureMatrix {
  Matrix<double> data;
  double fs = 0.0;
  std::vector<std::string> dim_names;
  Scheme scheme = Scheme::vad;
  // Onsets that landed on an already-set cell of the same dimension.
  std::size_t collisions = 0;
  // Onsets whose index had to be clipped into [0, n_samples).
  std::size_t clipped = 0;

  std::size_t n_samples() const { return data.rows(); }
  std::size_t n_dims() const { return data.cols(); }
};

struct EncodingOptions {
  std::set<std::string> silence_labels{"sil"};
};

// floor(0.5 + start_s * fs) clipped to [0, n_samples - 1].
std::size_t onset_index(double start_s, double fs, std::size_t n_samples, bool* clipped = nullptr);

FeatureMatrix encode_vad(const AlignmentTrack& track, double fs, std::size_t n_samples,
                         const EncodingOptions& opt = {});
FeatureMatrix encode_onsets(const AlignmentTrack& track, const PhoneInventory& inv, Scheme scheme, double fs,
                            std::size_t n_samples, const EncodingOptions& opt = {});
FeatureMatrix prepend_vad(const FeatureMatrix& features, const FeatureMatrix& vad);

// The representation used downstream: VAD alone for Scheme::vad, otherwise the
// onset scheme with VAD as its first column.
FeatureMatrix encode_representation(const AlignmentTrack& track, const PhoneInventory& inv, Scheme scheme, double fs,
                                    std::size_t n_samples, const EncodingOptions& opt = {});

void write_features(const std::filesystem::path& bin, const FeatureMatrix& f);
FeatureMatrix read_features(const std::filesystem::path& bin);

}  // namespace phonotrack::features
