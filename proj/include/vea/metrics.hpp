#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vea/error.hpp"

namespace vea::metrics {

/// Normalized answer tokens: lowercase, no ASCII punctuation, no empties.
using TokenSet = std::set<std::string>;

inline TokenSet normalize_text(std::string_view s) {
  TokenSet tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.insert(std::move(current));
    current.clear();
  };
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      continue;
    } else {
      current.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    }
  }
  flush();
  return tokens;
}

inline double exact_match(const TokenSet& pred, const TokenSet& gold) {
  return pred == gold ? 1.0 : 0.0;
}

inline double token_f1(const TokenSet& pred, const TokenSet& gold) {
  if (pred.empty() && gold.empty()) return 1.0;
  if (pred.empty() || gold.empty()) return 0.0;
  std::size_t common = 0;
  for (const auto& t : pred) common += gold.count(t);
  return 2.0 * static_cast<double>(common) / static_cast<double>(pred.size() + gold.size());
}

enum class QaMetric { ExactMatch, F1 };

/// Best score of `pred` against any of the gold answers.
inline double best_over_answers(std::string_view pred, std::span<const std::string> golds,
                                QaMetric metric) {
  if (golds.empty()) throw Error(ErrorCode::EmptyGoldList, "no gold answers");
  const TokenSet p = normalize_text(pred);
  double best = 0.0;
  for (const auto& g : golds) {
    const TokenSet gt = normalize_text(g);
    best = std::max(best, metric == QaMetric::ExactMatch ? exact_match(p, gt) : token_f1(p, gt));
  }
  return best;
}

// ---------------------------------------------------------------------------
// Ranking metrics over patch scores

struct ScoredLabels {
  std::span<const std::uint8_t> labels;
  std::span<const double> scores;
};

/// How a positive/negative pair with equal scores counts toward AUROC.
/// Strict is the literal indicator I(p_i > p_j); Half is the Mann-Whitney
/// convention.
enum class TieMode { Strict, Half };

namespace detail {
inline void check_scored(const ScoredLabels& d) {
  if (d.labels.size() != d.scores.size())
    throw Error(ErrorCode::DimensionMismatch, "labels " + std::to_string(d.labels.size()) +
                                                  " vs scores " + std::to_string(d.scores.size()));
  for (double s : d.scores)
    if (!std::isfinite(s)) throw Error(ErrorCode::InvariantViolation, "non-finite score");
}
}  // namespace detail

/// Fraction of (positive, negative) pairs in which the positive scores
/// higher. Sort-based, O(m log m).
inline double auroc(const ScoredLabels& d, TieMode ties = TieMode::Strict) {
  detail::check_scored(d);
  std::vector<double> neg;
  std::vector<double> pos;
  for (std::size_t i = 0; i < d.labels.size(); ++i) (d.labels[i] ? pos : neg).push_back(d.scores[i]);
  if (pos.empty() || neg.empty())
    throw Error(ErrorCode::DegenerateLabels,
                std::to_string(pos.size()) + " positives of " + std::to_string(d.labels.size()));
  std::sort(neg.begin(), neg.end());
  double wins = 0.0;
  for (double p : pos) {
    const auto lo = std::lower_bound(neg.begin(), neg.end(), p);
    wins += static_cast<double>(lo - neg.begin());
    if (ties == TieMode::Half) {
      const auto hi = std::upper_bound(lo, neg.end(), p);
      wins += 0.5 * static_cast<double>(hi - lo);
    }
  }
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

/// NDCG over the full ranking (descending score, equal scores keep their
/// original order). Gains are 2^y - 1, discounts 1/log2(rank + 1).
inline double ndcg_all(const ScoredLabels& d) {
  detail::check_scored(d);
  const std::size_t m = d.labels.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return d.scores[a] > d.scores[b]; });
  double dcg = 0.0;
  std::size_t positives = 0;
  for (std::size_t rank = 0; rank < m; ++rank) {
    if (d.labels[order[rank]]) {
      dcg += 1.0 / std::log2(static_cast<double>(rank) + 2.0);
      ++positives;
    }
  }
  if (positives == 0) throw Error(ErrorCode::NoPositives, "ndcg needs at least one positive");
  double idcg = 0.0;
  for (std::size_t rank = 0; rank < positives; ++rank)
    idcg += 1.0 / std::log2(static_cast<double>(rank) + 2.0);
  return dcg / idcg;
}

}  // namespace vea::metrics
