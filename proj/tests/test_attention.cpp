#include <gtest/gtest.h>

#include <numeric>

#include "support/oracles.hpp"
#include "support/synthetic.hpp"
#include "vea/attention.hpp"

namespace {

using vea::ErrorCode;

vea::AttentionDump full_dump(std::size_t n, std::size_t start, std::size_t rows, std::size_t cols,
                             std::vector<float> values, std::size_t W = 100, std::size_t H = 100) {
  vea::Manifest m;
  m.sample_id = "t";
  m.model_id = "toy";
  m.num_heads = 1;
  m.seq_len = n;
  m.image_token_start = start;
  m.image_token_count = rows * cols;
  m.grid_rows = rows;
  m.grid_cols = cols;
  m.image_width_px = W;
  m.image_height_px = H;
  m.num_layers = values.size() / n;
  return {m, std::move(values)};
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const vea::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected vea::Error";
  return ErrorCode::Io;
}

TEST(PatchVector, SliceAndNormalize) {
  const auto d = full_dump(4, 1, 1, 3, {0.5f, 0.1f, 0.3f, 0.1f});
  const auto pv = vea::patch_vector(d, 0);
  ASSERT_EQ(pv.values.size(), 3u);
  EXPECT_NEAR(pv.values[0], 0.2, 1e-6);
  EXPECT_NEAR(pv.values[1], 0.6, 1e-6);
  EXPECT_NEAR(pv.values[2], 0.2, 1e-6);
}

TEST(PatchVector, PatchPayloadAlreadyNormalized) {
  auto d = full_dump(4, 0, 1, 4, {0.25f, 0.25f, 0.25f, 0.25f});
  d.manifest.payload_kind = vea::PayloadKind::PerLayerPatch;
  const auto pv = vea::patch_vector(d, 0);
  for (double v : pv.values) EXPECT_EQ(v, 0.25);
}

TEST(PatchVector, ZeroMassAndRange) {
  const auto d = full_dump(4, 2, 1, 2, {0.5f, 0.5f, 0.0f, 0.0f});
  EXPECT_EQ(code_of([&] { vea::patch_vector(d, 0); }), ErrorCode::ZeroMass);
  EXPECT_EQ(code_of([&] { vea::patch_vector(d, 1); }), ErrorCode::LayerOutOfRange);
}

TEST(PatchVector, SumsToOneAndScaleInvariant) {
  vea::SeededRng rng(11);
  for (int t = 0; t < 200; ++t) {
    std::vector<float> row(6);
    for (auto& v : row) v = static_cast<float>(0.01 + rng.uniform());
    auto d = full_dump(6, 0, 2, 3, row);
    d.manifest.payload_kind = vea::PayloadKind::PerLayerPatch;
    const auto a = vea::patch_vector(d, 0);
    ASSERT_NEAR(std::accumulate(a.values.begin(), a.values.end(), 0.0), 1.0, 1e-6);
    for (auto& v : d.values) v *= 4.0f;  // power of two keeps float scaling exact
    const auto b = vea::patch_vector(d, 0);
    for (std::size_t i = 0; i < a.values.size(); ++i) ASSERT_NEAR(a.values[i], b.values[i], 1e-12);
  }
}

TEST(Rapt, UniformRowIsOne) {
  const auto d = full_dump(4, 0, 2, 2, {0.25f, 0.25f, 0.25f, 0.25f});
  const std::vector<std::size_t> s{1, 3};
  EXPECT_DOUBLE_EQ(vea::rapt(d, 0, s), 1.0);
}

TEST(Rapt, DirectArithmetic) {
  const auto d = full_dump(4, 0, 2, 2, {0.4f, 0.4f, 0.1f, 0.1f});
  const std::vector<std::size_t> s{0, 1};
  EXPECT_NEAR(vea::rapt(d, 0, s), 1.6, 1e-6);
}

TEST(Rapt, AllTokensIsOne) {
  vea::SeededRng rng(12);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> w(10);
    for (auto& v : w) v = rng.uniform();
    const auto d = full_dump(10, 0, 1, 1, synth::to_row(w, true));
    std::vector<std::size_t> all(10);
    std::iota(all.begin(), all.end(), std::size_t{0});
    ASSERT_NEAR(vea::rapt(d, 0, all), 1.0, 1e-9);
  }
}

TEST(Rapt, WeightedMeanIdentity) {
  vea::SeededRng rng(13);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 3 + rng.below(20);
    std::vector<double> w(n);
    for (auto& v : w) v = rng.uniform();
    const auto row = synth::to_row(w, true);
    const auto d = full_dump(n, 0, 1, 1, row);
    std::vector<std::size_t> s, rest;
    for (std::size_t i = 0; i < n; ++i) (rng.below(2) ? s : rest).push_back(i);
    if (s.empty() || rest.empty()) continue;
    const double total = (s.size() * vea::rapt(d, 0, s) + rest.size() * vea::rapt(d, 0, rest)) / n;
    ASSERT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(Rapt, Errors) {
  const auto d = full_dump(4, 0, 2, 2, {0.25f, 0.25f, 0.25f, 0.25f});
  EXPECT_EQ(code_of([&] { vea::rapt(d, 0, {}); }), ErrorCode::EmptySection);
  auto p = d;
  p.manifest.payload_kind = vea::PayloadKind::PerLayerPatch;
  const std::vector<std::size_t> s{0};
  EXPECT_EQ(code_of([&] { vea::rapt(p, 0, s); }), ErrorCode::RequiresFullPayload);
}

vea::Manifest grid_manifest(std::size_t rows, std::size_t cols, std::size_t W, std::size_t H) {
  return full_dump(rows * cols, 0, rows, cols, std::vector<float>(rows * cols, 1.0f / (rows * cols)), W, H).manifest;
}

TEST(EvidenceLabels, ExactTopLeftPatch) {
  const auto m = grid_manifest(2, 2, 100, 100);
  const vea::EvidenceAnnotation a{"t", "q", {"x"}, {{0, 0, 50, 50}}};
  EXPECT_EQ(vea::evidence_labels(a, m).values, (std::vector<std::uint8_t>{1, 0, 0, 0}));
}

TEST(EvidenceLabels, StraddlingBoxHitsAllFour) {
  const auto m = grid_manifest(2, 2, 100, 100);
  const vea::EvidenceAnnotation a{"t", "q", {"x"}, {{49, 49, 2, 2}}};
  const auto expected = oracle::labels_per_pixel(m, a.evidence_boxes);
  EXPECT_EQ(expected, (std::vector<std::uint8_t>{1, 1, 1, 1}));
  EXPECT_EQ(vea::evidence_labels(a, m).values, expected);
}

TEST(EvidenceLabels, NoBoxes) {
  const auto m = grid_manifest(2, 2, 100, 100);
  const auto labels = vea::evidence_labels({"t", "q", {"x"}, {}}, m);
  EXPECT_EQ(labels.values, (std::vector<std::uint8_t>{0, 0, 0, 0}));
  EXPECT_EQ(labels.positives, 0u);
}

TEST(EvidenceLabels, MatchesPixelOracleOnNonDivisibleGrids) {
  vea::SeededRng rng(14);
  for (int t = 0; t < 300; ++t) {
    const std::size_t rows = 1 + rng.below(7), cols = 1 + rng.below(7);
    const std::size_t W = cols + rng.below(60), H = rows + rng.below(60);
    const auto m = grid_manifest(rows, cols, W, H);
    vea::EvidenceAnnotation a{"t", "q", {"x"}, {}};
    for (std::size_t k = 0; k < rng.below(4); ++k)
      a.evidence_boxes.push_back({static_cast<std::int64_t>(rng.below(W)), static_cast<std::int64_t>(rng.below(H)),
                                  static_cast<std::int64_t>(1 + rng.below(W)),
                                  static_cast<std::int64_t>(1 + rng.below(H))});
    a = vea::clamp_boxes(a, W, H);
    ASSERT_EQ(vea::evidence_labels(a, m).values, oracle::labels_per_pixel(m, a.evidence_boxes));
  }
}

TEST(EvidenceCurves, UniformRowsGiveOne) {
  const auto d = full_dump(4, 0, 2, 2, {0.25f, 0.25f, 0.25f, 0.25f, 0.25f, 0.25f, 0.25f, 0.25f});
  vea::EvidenceLabels labels{{1, 0, 0, 1}, 2};
  for (const auto& p : vea::evidence_curves(d, labels)) {
    EXPECT_DOUBLE_EQ(p.rapt_evidence, 1.0);
    EXPECT_DOUBLE_EQ(p.rapt_non_evidence, 1.0);
  }
}

TEST(EvidenceCurves, AllMassOnEvidencePatch) {
  const auto d = full_dump(4, 2, 1, 2, {0.0f, 0.0f, 1.0f, 0.0f});
  vea::EvidenceLabels labels{{1, 0}, 1};
  const auto curve = vea::evidence_curves(d, labels);
  ASSERT_EQ(curve.size(), 1u);
  // (1 / 1) / (1 / 4) and (0 / 1) / (1 / 4)
  EXPECT_DOUBLE_EQ(curve[0].rapt_evidence, 4.0);
  EXPECT_DOUBLE_EQ(curve[0].rapt_non_evidence, 0.0);
}

TEST(EvidenceCurves, DegenerateLabels) {
  const auto d = full_dump(4, 2, 1, 2, {0.0f, 0.0f, 1.0f, 0.0f});
  vea::EvidenceLabels labels{{1, 1}, 2};
  EXPECT_EQ(code_of([&] { vea::evidence_curves(d, labels); }), ErrorCode::DegenerateLabels);
}

TEST(LayerScores, PerfectUniformAndReversed) {
  // layer 0 ranks the evidence patch first, layer 1 is uniform, layer 2 reverses
  auto d = full_dump(4, 0, 2, 2,
                     {0.7f, 0.1f, 0.1f, 0.1f,  //
                      0.25f, 0.25f, 0.25f, 0.25f,  //
                      0.1f, 0.3f, 0.3f, 0.3f});
  vea::EvidenceLabels labels{{1, 0, 0, 0}, 1};
  const auto s = vea::layer_attribution_scores(d, labels);
  EXPECT_EQ(s[0].auroc, 1.0);
  EXPECT_EQ(s[0].ndcg, 1.0);
  EXPECT_EQ(s[1].auroc, 0.0);  // every pair ties
  EXPECT_EQ(s[2].auroc, 0.0);

  auto two = full_dump(2, 0, 1, 2, {0.1f, 0.9f});
  vea::EvidenceLabels one_of_two{{1, 0}, 1};
  EXPECT_EQ(vea::layer_attribution_scores(two, one_of_two)[0].auroc, 0.0);
}

TEST(LayerScores, PermutationEquivariant) {
  vea::SeededRng rng(15);
  for (int t = 0; t < 100; ++t) {
    synth::DumpShape s;
    s.kind = vea::PayloadKind::PerLayerPatch;
    s.num_layers = 3;
    std::vector<std::uint8_t> ev(16, 0);
    for (auto& e : ev) e = rng.below(3) == 0;
    ev[0] = 1;
    ev[1] = 0;
    const auto d = synth::make_dump(rng, "p", s, ev, {1});
    std::vector<std::size_t> perm(16);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = 15; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    auto pd = d;
    vea::EvidenceLabels pl{std::vector<std::uint8_t>(16), 0};
    for (std::size_t l = 0; l < 3; ++l)
      for (std::size_t i = 0; i < 16; ++i) pd.values[l * 16 + i] = d.values[l * 16 + perm[i]];
    for (std::size_t i = 0; i < 16; ++i) pl.values[i] = ev[perm[i]];
    pl.positives = std::count(ev.begin(), ev.end(), 1);
    vea::EvidenceLabels labels{ev, pl.positives};
    const auto a = vea::layer_attribution_scores(d, labels);
    const auto b = vea::layer_attribution_scores(pd, pl);
    for (std::size_t l = 0; l < 3; ++l) {
      ASSERT_EQ(a[l].auroc, b[l].auroc);
      // distinct continuous scores, so the ranking has no ties to break
      ASSERT_NEAR(a[l].ndcg, b[l].ndcg, 1e-12);
    }
  }
}

}  // namespace
