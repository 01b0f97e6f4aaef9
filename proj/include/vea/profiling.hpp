#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vea/attention.hpp"
#include "vea/error.hpp"
#include "vea/formats.hpp"
#include "vea/parallel.hpp"
#include "vea/selection.hpp"

namespace vea {

struct DiagnosticSample {
  AttentionDump dump;
  EvidenceLabels labels;
};

struct ProfileResult {
  LayerProfile profile;
  /// Mean NDCG@all per layer over the same samples; diagnostic only.
  std::vector<double> per_layer_ndcg;
  /// Samples dropped because every patch (or none) was evidence.
  std::vector<std::string> skipped;

  double mean_auroc_all() const {
    double s = 0.0;
    for (double a : profile.per_layer_auroc) s += a;
    return s / static_cast<double>(profile.per_layer_auroc.size());
  }
  double mean_auroc_selected() const {
    double s = 0.0;
    for (auto l : profile.selected_layers) s += profile.per_layer_auroc[l];
    return s / static_cast<double>(profile.selected_layers.size());
  }
};

/// Identifies the visual-grounding layers of one model: per-layer AUROC of
/// the normalized patch attention against evidence labels, averaged over the
/// diagnostic samples, then the top ceil(fraction * L) layers.
///
/// Samples with degenerate labels are skipped and listed in the result.
/// Reduction runs in input order, so the result does not depend on `jobs`.
inline ProfileResult profile_layers(std::span<const DiagnosticSample> samples,
                                    double fraction = kDefaultLayerFraction,
                                    std::size_t jobs = 1) {
  if (samples.empty()) throw Error(ErrorCode::EmptyDiagnosticSet, "no samples");
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw Error(ErrorCode::InvariantViolation, "fraction must be in (0, 1]");

  const Manifest& first = samples.front().dump.manifest;
  for (const auto& s : samples) {
    const Manifest& m = s.dump.manifest;
    if (m.num_layers != first.num_layers || m.model_id != first.model_id)
      throw Error(ErrorCode::MixedModels, m.sample_id + ": " + m.model_id + "/" +
                                              std::to_string(m.num_layers) + " vs " + first.model_id +
                                              "/" + std::to_string(first.num_layers));
  }

  const std::size_t L = first.num_layers;
  std::vector<std::optional<std::vector<LayerScore>>> per_sample(samples.size());
  parallel_for(samples.size(), jobs, [&](std::size_t i) {
    if (samples[i].labels.degenerate()) return;
    per_sample[i] = layer_attribution_scores(samples[i].dump, samples[i].labels);
  });

  ProfileResult result;
  std::vector<double> auroc_sum(L, 0.0);
  std::vector<double> ndcg_sum(L, 0.0);
  std::size_t used = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!per_sample[i]) {
      result.skipped.push_back(samples[i].dump.manifest.sample_id);
      continue;
    }
    ++used;
    for (std::size_t l = 0; l < L; ++l) {
      auroc_sum[l] += (*per_sample[i])[l].auroc;
      ndcg_sum[l] += (*per_sample[i])[l].ndcg;
    }
  }
  if (used == 0)
    throw Error(ErrorCode::EmptyDiagnosticSet,
                "all " + std::to_string(samples.size()) + " samples have degenerate labels");

  LayerProfile& p = result.profile;
  p.model_id = first.model_id;
  p.num_layers = L;
  p.fraction = fraction;
  p.diagnostic_count = used;
  p.per_layer_auroc.resize(L);
  result.per_layer_ndcg.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    p.per_layer_auroc[l] = auroc_sum[l] / static_cast<double>(used);
    result.per_layer_ndcg[l] = ndcg_sum[l] / static_cast<double>(used);
  }
  p.selected_layers = select_top_layers(p.per_layer_auroc, fraction);
  return result;
}

}  // namespace vea
