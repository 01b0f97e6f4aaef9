#include <gtest/gtest.h>

#include "support/oracles.hpp"
#include "support/synthetic.hpp"
#include "vea/formats.hpp"
#include "vea/profiling.hpp"

namespace {

std::vector<vea::DiagnosticSample> make_samples(std::size_t count, std::size_t layers,
                                                const std::vector<std::size_t>& grounding, std::uint64_t seed) {
  vea::SeededRng rng(seed);
  synth::DumpShape s;
  s.num_layers = layers;
  std::vector<vea::DiagnosticSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    const auto [box, labels] = synth::make_evidence(rng, s);
    auto dump = synth::make_dump(rng, "d" + std::to_string(i), s, labels, grounding);
    const vea::EvidenceAnnotation ann{dump.manifest.sample_id, "q", {"a"}, {box}};
    out.push_back({dump, vea::evidence_labels(ann, dump.manifest)});
  }
  return out;
}

/// Dump where one layer's patch attention is perfect and all others uniform.
vea::DiagnosticSample perfect_layer_sample(vea::SeededRng& rng, std::size_t layers, std::size_t good) {
  vea::Manifest m = synth::make_manifest("x", synth::DumpShape{.num_layers = layers, .kind = vea::PayloadKind::PerLayerPatch});
  vea::EvidenceLabels labels{std::vector<std::uint8_t>(m.image_token_count, 0), 0};
  for (auto& y : labels.values) y = rng.below(3) == 0;
  labels.values[0] = 1;
  labels.values[1] = 0;
  labels.positives = std::count(labels.values.begin(), labels.values.end(), 1);
  vea::AttentionDump d{m, {}};
  for (std::size_t l = 0; l < layers; ++l)
    for (std::size_t i = 0; i < m.image_token_count; ++i)
      d.values.push_back(l == good ? (labels.values[i] ? 0.5f + 0.1f * static_cast<float>(rng.uniform()) : 0.1f * static_cast<float>(rng.uniform()))
                                   : 1.0f);
  return {d, labels};
}

TEST(Profiling, PerfectLayerSelected) {
  vea::SeededRng rng(31);
  std::vector<vea::DiagnosticSample> samples;
  for (int i = 0; i < 20; ++i) samples.push_back(perfect_layer_sample(rng, 5, 3));
  // pair-enumeration oracle per layer: the perfect layer scores 1, uniform layers 0
  for (const auto& s : samples) {
    for (std::size_t l = 0; l < 5; ++l) {
      const auto pv = vea::patch_vector(s.dump, l);
      ASSERT_EQ(oracle::auroc_pairs(s.labels.values, pv.values), l == 3 ? 1.0 : 0.0);
    }
  }
  const auto r = vea::profile_layers(samples);
  EXPECT_EQ(r.profile.selected_layers, (std::vector<std::size_t>{3}));
  EXPECT_EQ(r.profile.per_layer_auroc[3], 1.0);
  EXPECT_EQ(r.profile.diagnostic_count, 20u);
}

TEST(Profiling, ThirtyTwoLayersSelectFour) {
  const auto samples = make_samples(12, 32, {14, 15, 17, 19}, 32);
  const auto r = vea::profile_layers(samples);
  EXPECT_EQ(r.profile.selected_layers.size(), 4u);
  EXPECT_EQ(r.profile.selected_layers, (std::vector<std::size_t>{14, 15, 17, 19}));
  EXPECT_GT(r.mean_auroc_selected(), r.mean_auroc_all());
  EXPECT_NO_THROW(vea::validate_profile(r.profile));
}

TEST(Profiling, SingleLayer) {
  const auto samples = make_samples(3, 1, {}, 1);
  EXPECT_EQ(vea::profile_layers(samples).profile.selected_layers, (std::vector<std::size_t>{0}));
}

TEST(Profiling, FractionOneSelectsAll) {
  const auto samples = make_samples(3, 6, {2}, 2);
  EXPECT_EQ(vea::profile_layers(samples, 1.0).profile.selected_layers.size(), 6u);
}

TEST(Profiling, Errors) {
  EXPECT_THROW(vea::profile_layers({}), vea::Error);
  auto samples = make_samples(3, 6, {2}, 3);
  samples[1].dump.manifest.model_id = "other";
  try {
    vea::profile_layers(samples);
    FAIL();
  } catch (const vea::Error& e) {
    EXPECT_EQ(e.code(), vea::ErrorCode::MixedModels);
  }
}

TEST(Profiling, DegenerateSamplesSkipped) {
  auto samples = make_samples(4, 6, {2}, 4);
  auto& bad = samples[2].labels;
  std::fill(bad.values.begin(), bad.values.end(), 1);
  bad.positives = bad.values.size();
  const auto r = vea::profile_layers(samples);
  EXPECT_EQ(r.skipped, (std::vector<std::string>{"d2"}));
  EXPECT_EQ(r.profile.diagnostic_count, 3u);

  for (auto& s : samples) {
    std::fill(s.labels.values.begin(), s.labels.values.end(), 0);
    s.labels.positives = 0;
  }
  EXPECT_THROW(vea::profile_layers(samples), vea::Error);
}

TEST(Profiling, TiesBreakTowardLowerLayer) {
  vea::SeededRng rng(33);
  std::vector<vea::DiagnosticSample> samples;
  for (int i = 0; i < 5; ++i) samples.push_back(perfect_layer_sample(rng, 10, 99));  // every layer uniform
  EXPECT_EQ(vea::profile_layers(samples).profile.selected_layers, (std::vector<std::size_t>{0}));
}

TEST(Profiling, FlatSampleDoesNotChangeSelection) {
  auto samples = make_samples(8, 20, {11, 16}, 34);
  const auto before = vea::profile_layers(samples).profile.selected_layers;
  vea::SeededRng rng(35);
  samples.push_back(perfect_layer_sample(rng, 20, 99));
  samples.back().dump.manifest.model_id = samples.front().dump.manifest.model_id;
  EXPECT_EQ(vea::profile_layers(samples).profile.selected_layers, before);
}

TEST(Profiling, DeterministicAcrossJobs) {
  const auto samples = make_samples(16, 12, {7}, 36);
  const auto a = vea::encode_profile(vea::profile_layers(samples, 0.1, 1).profile);
  const auto b = vea::encode_profile(vea::profile_layers(samples, 0.1, 4).profile);
  const auto c = vea::encode_profile(vea::profile_layers(samples, 0.1, 1).profile);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
}

}  // namespace
