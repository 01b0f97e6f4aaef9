#pragma once

// Per-layer analytics over attention dumps: normalized patch vectors, relative
// attention per token, patch evidence labels and per-layer attribution scores.

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vea/error.hpp"
#include "vea/formats.hpp"
#include "vea/grid.hpp"
#include "vea/metrics.hpp"

namespace vea {

/// Image-patch attention of one layer, rescaled onto the probability simplex.
struct PatchAttention {
  std::size_t layer = 0;
  std::vector<double> values;
};

struct EvidenceLabels {
  std::vector<std::uint8_t> values;
  std::size_t positives = 0;

  bool degenerate() const { return positives == 0 || positives == values.size(); }
};

inline void check_layer(const AttentionDump& dump, std::size_t layer) {
  if (layer >= dump.manifest.num_layers)
    throw Error(ErrorCode::LayerOutOfRange,
                std::to_string(layer) + " of " + std::to_string(dump.manifest.num_layers));
}

inline std::span<const float> raw_patch_slice(const AttentionDump& dump, std::size_t layer) {
  check_layer(dump, layer);
  const auto row = dump.row(layer);
  if (dump.manifest.payload_kind == PayloadKind::PerLayerPatch) return row;
  return row.subspan(dump.manifest.image_token_start, dump.manifest.image_token_count);
}

inline PatchAttention patch_vector(const AttentionDump& dump, std::size_t layer) {
  const auto slice = raw_patch_slice(dump, layer);
  double sum = 0.0;
  for (float v : slice) sum += v;
  if (!(sum > 0.0))
    throw Error(ErrorCode::ZeroMass, dump.manifest.sample_id + " layer " + std::to_string(layer));
  PatchAttention out{layer, std::vector<double>(slice.size())};
  for (std::size_t i = 0; i < slice.size(); ++i) out.values[i] = slice[i] / sum;
  return out;
}

/// Relative attention per token: mean attention over `section` divided by the
/// mean over the whole input. Duplicate indices count once.
inline double rapt(const AttentionDump& dump, std::size_t layer, std::span<const std::size_t> section) {
  if (dump.manifest.payload_kind != PayloadKind::PerLayerFull)
    throw Error(ErrorCode::RequiresFullPayload, dump.manifest.sample_id);
  check_layer(dump, layer);
  if (section.empty()) throw Error(ErrorCode::EmptySection, dump.manifest.sample_id);
  std::vector<std::size_t> idx(section.begin(), section.end());
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  const auto row = dump.row(layer);
  if (idx.back() >= row.size())
    throw Error(ErrorCode::InvariantViolation, "section index " + std::to_string(idx.back()) +
                                                   " outside sequence of " + std::to_string(row.size()));
  double total = 0.0;
  for (float v : row) total += v;
  if (!(total > 0.0))
    throw Error(ErrorCode::ZeroMass, dump.manifest.sample_id + " layer " + std::to_string(layer));
  double part = 0.0;
  for (std::size_t i : idx) part += row[i];
  const double section_mean = part / static_cast<double>(idx.size());
  const double input_mean = total / static_cast<double>(row.size());
  return section_mean / input_mean;
}

/// Token indices covered by the manifest's text spans.
inline std::vector<std::size_t> text_tokens(const Manifest& m) {
  std::vector<std::size_t> out;
  for (const auto& s : m.text_spans)
    for (std::size_t i = s.begin; i < s.end; ++i) out.push_back(i);
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<std::size_t> image_tokens(const Manifest& m) {
  std::vector<std::size_t> out(m.image_token_count);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = m.image_token_start + i;
  return out;
}

/// A patch is evidence iff its floor-partition pixel rectangle shares at least
/// one pixel with any box. Boxes must already be clamped to the image.
inline EvidenceLabels evidence_labels(const EvidenceAnnotation& annotation, const Manifest& m) {
  EvidenceLabels labels;
  labels.values.assign(m.image_token_count, 0);
  for (std::size_t r = 0; r < m.grid_rows; ++r) {
    for (std::size_t c = 0; c < m.grid_cols; ++c) {
      const PixelRect rect =
          patch_rect(r, c, m.grid_rows, m.grid_cols, m.image_height_px, m.image_width_px);
      if (rect.empty()) continue;
      const auto y0 = static_cast<std::int64_t>(rect.row_begin);
      const auto y1 = static_cast<std::int64_t>(rect.row_end);
      const auto x0 = static_cast<std::int64_t>(rect.col_begin);
      const auto x1 = static_cast<std::int64_t>(rect.col_end);
      for (const Box& b : annotation.evidence_boxes) {
        const bool rows = std::max(y0, b.y) < std::min(y1, b.y + b.h);
        const bool cols = std::max(x0, b.x) < std::min(x1, b.x + b.w);
        if (rows && cols) {
          labels.values[r * m.grid_cols + c] = 1;
          ++labels.positives;
          break;
        }
      }
    }
  }
  return labels;
}

inline void require_mixed_labels(const EvidenceLabels& labels, const Manifest& m) {
  if (labels.values.size() != m.image_token_count)
    throw Error(ErrorCode::DimensionMismatch, m.sample_id + ": labels " +
                                                  std::to_string(labels.values.size()) + " vs patches " +
                                                  std::to_string(m.image_token_count));
  if (labels.degenerate())
    throw Error(ErrorCode::DegenerateLabels, m.sample_id + ": " + std::to_string(labels.positives) +
                                                 " positives of " + std::to_string(labels.values.size()));
}

struct EvidenceCurvePoint {
  double rapt_evidence = 0.0;
  double rapt_non_evidence = 0.0;
};

inline std::vector<EvidenceCurvePoint> evidence_curves(const AttentionDump& dump,
                                                       const EvidenceLabels& labels) {
  const Manifest& m = dump.manifest;
  if (m.payload_kind != PayloadKind::PerLayerFull)
    throw Error(ErrorCode::RequiresFullPayload, m.sample_id);
  require_mixed_labels(labels, m);
  std::vector<std::size_t> evidence;
  std::vector<std::size_t> other;
  for (std::size_t i = 0; i < labels.values.size(); ++i)
    (labels.values[i] ? evidence : other).push_back(m.image_token_start + i);
  std::vector<EvidenceCurvePoint> out(m.num_layers);
  for (std::size_t layer = 0; layer < m.num_layers; ++layer)
    out[layer] = {rapt(dump, layer, evidence), rapt(dump, layer, other)};
  return out;
}

struct LayerScore {
  double auroc = 0.0;
  double ndcg = 0.0;
};

inline std::vector<LayerScore> layer_attribution_scores(
    const AttentionDump& dump, const EvidenceLabels& labels,
    metrics::TieMode ties = metrics::TieMode::Strict) {
  require_mixed_labels(labels, dump.manifest);
  std::vector<LayerScore> out(dump.manifest.num_layers);
  for (std::size_t layer = 0; layer < out.size(); ++layer) {
    const PatchAttention pv = patch_vector(dump, layer);
    const metrics::ScoredLabels data{labels.values, pv.values};
    out[layer] = {metrics::auroc(data, ties), metrics::ndcg_all(data)};
  }
  return out;
}

}  // namespace vea
