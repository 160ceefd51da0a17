#include <doctest.h>

#include <random>

#include "phonotrack/error.hpp"
#include "phonotrack/mm.hpp"
#include "phonotrack/synth.hpp"
#include "support.hpp"

using namespace phonotrack;
using namespace phonotrack::mm;

namespace {

features::FeatureMatrix random_features(std::size_t n, std::size_t d, double fs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution on(0.1);
  features::FeatureMatrix f;
  f.data = Matrix<double>(n, d);
  for (auto& v : f.data.values()) v = on(rng) ? 1.0 : 0.0;
  f.fs = fs;
  f.scheme = features::Scheme::vc;
  for (std::size_t i = 0; i < d; ++i) f.dim_names.push_back("d" + std::to_string(i));
  return f;
}

// Starts t with t + 2W + gap <= n, by scanning every sample.
std::size_t brute_force_count(std::size_t n, const Geometry& g) {
  std::size_t count = 0;
  for (std::size_t t = 0; t + g.span() <= n; t += g.hop) ++count;
  return count;
}

}  // namespace

TEST_CASE("segmentation defaults and validation") {
  const SegmentationConfig c;
  CHECK(c.window_s == 5.0);
  CHECK(c.overlap_fraction == 0.8);
  CHECK(c.mismatch_gap_s == 1.0);
  SegmentationConfig bad;
  bad.overlap_fraction = 1.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = {};
  bad.window_s = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = {};
  bad.mismatch_gap_s = -1;
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  const auto g = geometry(c, 64);
  CHECK(g.window == 320);
  CHECK(g.hop == 64);
  CHECK(g.gap == 64);
}

TEST_CASE("worked example counts") {
  const double fs = 64;
  const SegmentationConfig cfg;
  const auto eeg15 = testing::random_series(15 * 64, 4, fs, 1);
  const auto ex = extract_examples(eeg15, random_features(15 * 64, 2, fs, 2), cfg, "r");
  REQUIRE(ex.size() == 5);
  for (std::size_t k = 0; k < 5; ++k) {
    CHECK(ex[k].provenance.start_sample == k * 64);
    CHECK(ex[k].matched_offset == k * 64);
    CHECK(ex[k].mismatched_offset == k * 64 + 320 + 64);
    CHECK(ex[k].label == (k % 2 ? nn::Label::B : nn::Label::A));
  }

  const auto ex11 = extract_examples(testing::random_series(11 * 64, 4, fs, 3), random_features(11 * 64, 2, fs, 4), cfg);
  REQUIRE(ex11.size() == 1);
  CHECK(ex11[0].matched_offset == 0);

  SegmentationConfig no_overlap = cfg;
  no_overlap.overlap_fraction = 0.0;
  CHECK(extract_examples(eeg15, random_features(15 * 64, 2, fs, 2), no_overlap).size() == 1);
  const auto ex0 = extract_examples(testing::random_series(20 * 64, 4, fs, 20), random_features(20 * 64, 2, fs, 21),
                                    no_overlap);
  REQUIRE(ex0.size() == 2);
  CHECK(ex0[1].matched_offset == 320);

  CHECK_THROWS_AS(extract_examples(testing::random_series(10 * 64, 4, fs, 5), random_features(10 * 64, 2, fs, 6), cfg),
                  ValidationError);
  CHECK_THROWS_AS(extract_examples(eeg15, random_features(14 * 64, 2, fs, 7), cfg), ValidationError);
}

TEST_CASE("example contents") {
  const double fs = 64;
  const auto eeg = testing::random_series(15 * 64, 3, fs, 8);
  const auto sp = random_features(15 * 64, 2, fs, 9);
  const auto ex = extract_examples(eeg, sp, SegmentationConfig{}, "r");
  for (const auto& e : ex) {
    const auto s = e.sample();
    CHECK(s.eeg.rows == 320);
    CHECK(s.eeg(0, 1) == static_cast<float>(eeg.data(e.matched_offset, 1)));
    const auto& matched = e.label == nn::Label::A ? s.speech_a : s.speech_b;
    const auto& other = e.label == nn::Label::A ? s.speech_b : s.speech_a;
    for (std::size_t t = 0; t < 320; ++t) {
      CHECK(matched(t, 0) == static_cast<float>(sp.data(e.matched_offset + t, 0)));
      CHECK(other(t, 1) == static_cast<float>(sp.data(e.mismatched_offset + t, 1)));
    }
    const auto w = e.swapped();
    CHECK(w.label != e.label);
    CHECK(w.offset_a() == e.offset_b());
  }
}

TEST_CASE("identical candidates are flagged") {
  const double fs = 64;
  features::FeatureMatrix silent;
  silent.data = Matrix<double>(15 * 64, 2, 0.0);
  silent.fs = fs;
  silent.dim_names = {"a", "b"};
  const auto ex = extract_examples(testing::random_series(15 * 64, 2, fs, 10), silent, SegmentationConfig{});
  for (const auto& e : ex) CHECK(e.identical_candidates);
}

TEST_CASE("example count matches the closed form and brute force") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> len(640, 64 * 120);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = len(rng);
    SegmentationConfig cfg;
    cfg.window_s = 1.0 + rep % 4;
    cfg.overlap_fraction = 0.1 * (rep % 9);
    const auto g = geometry(cfg, 64);
    CAPTURE(n);
    CHECK(expected_count(n, g) == brute_force_count(n, g));
    if (n >= g.span()) {
      const auto ex = extract_examples(testing::series(n, 1, 64), random_features(n, 1, 64, rep), cfg);
      CHECK(ex.size() == brute_force_count(n, g));
      std::size_t a = 0;
      for (const auto& e : ex) a += e.label == nn::Label::A;
      CHECK(std::abs(static_cast<long>(2 * a) - static_cast<long>(ex.size())) <= 1);
    }
  }
}

TEST_CASE("split examples: no leakage, balanced labels, train normalization") {
  const double fs = 64;
  const std::size_t n = 64 * 200;
  auto eeg = testing::random_series(n, 3, fs, 12);
  for (auto& v : eeg.data.values()) v = 5 + 2 * v;
  const auto sp = random_features(n, 2, fs, 13);
  const auto s = extract_split_examples(eeg, sp, SegmentationConfig{}, "rec");
  const auto b = signal::split_boundaries(n);
  const auto g = geometry(SegmentationConfig{}, fs);

  CHECK(s.train.size() == expected_count(b[1] - b[0], g) + expected_count(b[4] - b[3], g));
  CHECK(s.validation.size() == expected_count(b[2] - b[1], g));
  CHECK(s.test.size() == expected_count(b[3] - b[2], g));

  for (const auto* part : {&s.train, &s.validation, &s.test}) {
    std::size_t a = 0;
    for (const auto& e : *part) {
      const auto& pv = e.provenance;
      CHECK(pv.start_sample >= pv.partition_begin);
      CHECK(pv.start_sample + g.span() <= pv.partition_end);
      const std::size_t lo = pv.split == Split::train ? (pv.partition_begin == 0 ? b[0] : b[3])
                             : pv.split == Split::validation ? b[1] : b[2];
      CHECK(pv.partition_begin == lo);
      a += e.label == nn::Label::A;
    }
    CHECK(std::abs(static_cast<long>(2 * a) - static_cast<long>(part->size())) <= 1);
  }

  // EEG is normalized with training statistics only.
  const auto stats = signal::fit_normalization(signal::split_recording(eeg).train());
  const auto& e0 = s.validation.front();
  const std::size_t row = e0.provenance.start_sample - e0.provenance.partition_begin;
  CHECK((*e0.eeg)(row, 0) == doctest::Approx((eeg.data(e0.provenance.start_sample, 0) - stats.mean[0]) / stats.std[0]).epsilon(1e-5));
}

TEST_CASE("prediction rule and accuracy") {
  CHECK(predicted_label(0.5) == nn::Label::B);
  CHECK(predicted_label(0.5000001) == nn::Label::A);
  CHECK(predicted_label(0.2) == nn::Label::B);

  const auto ex = extract_examples(testing::random_series(64 * 30, 2, 64, 14), random_features(64 * 30, 2, 64, 15),
                                   SegmentationConfig{});
  REQUIRE(ex.size() >= 10);
  const std::vector<Example> ten(ex.begin(), ex.begin() + 10);

  std::vector<double> oracle, half(10, 0.5), hand(10);
  for (const auto& e : ten) oracle.push_back(e.label == nn::Label::A ? 0.9 : 0.1);
  CHECK(accuracy_of(oracle, ten) == 1.0);
  CHECK(accuracy_of(half, ten) == 0.5);
  // Hand-scored: correct on examples 0, 3, 4, 7.
  int correct = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    const bool right = i == 0 || i == 3 || i == 4 || i == 7;
    const bool says_a = (ten[i].label == nn::Label::A) == right;
    hand[i] = says_a ? 0.7 : 0.3;
    correct += right;
  }
  CHECK(accuracy_of(hand, ten) == doctest::Approx(correct / 10.0));
  CHECK_THROWS_AS(accuracy_of(std::vector<double>{}, std::vector<Example>{}), ValidationError);
}

TEST_CASE("slot swap leaves accuracy unchanged") {
  nn::ModelConfig base;
  base.head_hidden = 16;
  const auto cfg = model_config_for(base, 2, 2, 320);
  auto p = nn::init_params<float>(cfg, 1);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(-1, 1);
  for (auto& v : p.tensor("head.w2")) v = u(rng);
  const auto ex = extract_examples(testing::random_series(64 * 40, 2, 64, 16), random_features(64 * 40, 2, 64, 17),
                                   SegmentationConfig{});
  std::vector<Example> sw;
  for (const auto& e : ex) sw.push_back(e.swapped());
  CHECK(evaluate_accuracy(p, ex) == evaluate_accuracy(p, sw));
  const auto pa = predict(p, ex), pb = predict(p, sw);
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] + pb[i] == doctest::Approx(1.0).epsilon(1e-6));

  // The untrained model predicts exactly 0.5, which the tie rule scores as B.
  const auto fresh = nn::init_params<float>(cfg, 1);
  for (double v : predict(fresh, ex)) CHECK(v == 0.5);
  CHECK(evaluate_accuracy(fresh, ex) == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("training protocols on a small synthetic corpus") {
  synth::SynthConfig sc;
  sc.duration_s = 120;
  sc.n_channels = 8;
  sc.snr_db = 10.0;
  const auto inv = testing::default_inventory();
  std::map<std::string, SplitExamples> by_subject;
  SegmentationConfig seg;
  seg.window_s = 2.0;
  for (int s = 0; s < 2; ++s) {
    const auto track = synth::generate_alignment(sc, inv, 100 + s);
    const auto feat = features::encode_representation(track, inv, features::Scheme::vc, 64, synth::sample_count(sc));
    const auto eeg = synth::generate_eeg(sc, feat, 200 + s).eeg;
    by_subject["s" + std::to_string(s)] = extract_split_examples(eeg, feat, seg, "s" + std::to_string(s));
  }
  nn::ModelConfig base;
  base.eeg_filters = 8, base.speech_filters = 8, base.lstm_units = 8, base.head_hidden = 16;
  const auto cfg = model_config_for(base, 8, 3, 128);
  nn::TrainConfig tc;
  tc.max_epochs = 0;
  const auto zero = train_subject_independent(by_subject, cfg, tc, 5);
  CHECK(zero.params.flat == nn::init_params<float>(cfg, 5).flat);

  tc.max_epochs = 3, tc.patience = 2, tc.batch_size = 16, tc.learning_rate = 3e-3;
  const auto si = train_subject_independent(by_subject, cfg, tc, 5);
  CHECK(si.history.epochs.size() >= 1);

  nn::TrainConfig frozen = tc;
  frozen.learning_rate = 0.0;
  const auto same = finetune(si.params, by_subject.at("s0"), frozen);
  CHECK(same.params.flat == si.params.flat);

  const auto ft = finetune(si.params, by_subject.at("s0"), tc);
  const auto vs = samples_of(by_subject.at("s0").validation);
  CHECK(nn::mean_loss(ft.params, std::span<const nn::Sample<float>>(vs)) <=
        nn::mean_loss(si.params, std::span<const nn::Sample<float>>(vs)) + 1e-6);

  const auto wrong = model_config_for(base, 8, 3, 192);
  CHECK_THROWS_AS(train_subject_independent(by_subject, wrong, tc, 5), ValidationError);
  CHECK_THROWS_AS(train_subject_independent({}, cfg, tc, 5), ValidationError);
}

TEST_CASE("manifest and accuracy CSV") {
  const auto ex = extract_examples(testing::random_series(15 * 64, 2, 64, 18), random_features(15 * 64, 2, 64, 19),
                                   SegmentationConfig{}, "sub-01", Split::test);
  const auto text = example_manifest(ex);
  std::size_t lines = 0, pos = 0;
  while ((pos = text.find('\n', pos)) != std::string::npos) ++lines, ++pos;
  CHECK(lines == ex.size());
  const auto first = nlohmann::json::parse(text.substr(0, text.find('\n')));
  CHECK(first.at("recording_id") == "sub-01");
  CHECK(first.at("t_start") == 0.0);
  CHECK(first.at("label") == "A");
  CHECK(first.at("split") == "test");

  const std::vector<AccuracyRow> rows{{"s1", "vc", "SI", 5, 0.75, 8}};
  CHECK(accuracy_csv(rows) == "subject,scheme,model_stage,window_s,accuracy,n_examples\ns1,vc,SI,5,0.75,8\n");
}
