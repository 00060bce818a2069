// Copyright 2026 The updateleak Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "updateleak/attack.hpp"
#include "updateleak/error.hpp"

namespace updateleak {

/// Fraction of positions where the guess matches the truth.
inline double success_rate(const std::vector<std::string>& guesses,
                           const std::vector<std::string>& truths) {
  if (guesses.empty()) throw DataError("success_rate: empty input");
  if (guesses.size() != truths.size()) {
    throw DataError("success_rate: " + std::to_string(guesses.size()) + " guesses vs " +
                    std::to_string(truths.size()) + " truths");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < guesses.size(); ++i) {
    if (guesses[i] == truths[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(guesses.size());
}

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

/// Rank-sweep ROC: point k corresponds to guessing the top k of the ranked
/// candidate list.
struct RocCurve {
  std::vector<RocPoint> points;  // n+1 points, k = 0..n
  std::size_t positives = 0;
  std::size_t negatives = 0;

  /// Trapezoid-rule area under the curve.
  double auc() const {
    double area = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) {
      area += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) * 0.5;
    }
    return area;
  }
};

/// Builds the ROC curve by sweeping the guess count k from 0 to n over an
/// already ranked score list. `truth_ids` is the set of genuinely updated
/// records; it must be a nonempty proper subset of the scored ids.
inline RocCurve roc_from_scores(const std::vector<RecordScore>& scores,
                                const std::vector<std::int64_t>& truth_ids) {
  if (scores.empty()) throw DataError("roc_from_scores: empty score list");
  std::unordered_set<std::int64_t> scored;
  for (const auto& s : scores) scored.insert(s.record_id);
  if (scored.size() != scores.size()) throw DataError("roc_from_scores: duplicate record ids");
  std::unordered_set<std::int64_t> truth(truth_ids.begin(), truth_ids.end());
  for (const auto id : truth) {
    if (!scored.count(id)) {
      throw DataError("roc_from_scores: truth id " + std::to_string(id) + " was not scored");
    }
  }
  if (truth.empty() || truth.size() == scores.size()) {
    throw DataError("roc_from_scores: truth set must be a nonempty proper subset");
  }

  const auto n_pos = truth.size();
  const auto n_neg = scores.size() - n_pos;
  RocCurve curve;
  curve.positives = n_pos;
  curve.negatives = n_neg;
  curve.points.reserve(scores.size() + 1);
  curve.points.push_back(RocPoint{0.0, 0.0});
  std::size_t hits = 0;
  for (std::size_t k = 1; k <= scores.size(); ++k) {
    if (truth.count(scores[k - 1].record_id)) ++hits;
    curve.points.push_back(RocPoint{static_cast<double>(k - hits) / static_cast<double>(n_neg),
                                    static_cast<double>(hits) / static_cast<double>(n_pos)});
  }
  return curve;
}

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  double tpr() const {
    const auto p = tp + fn;
    return p ? static_cast<double>(tp) / static_cast<double>(p) : 0.0;
  }
  double fpr() const {
    const auto n = fp + tn;
    return n ? static_cast<double>(fp) / static_cast<double>(n) : 0.0;
  }
};

/// Confusion counts of a guess set against the truth set over n candidates.
inline ConfusionCounts confusion_at(const std::vector<std::int64_t>& guess_ids,
                                    const std::vector<std::int64_t>& truth_ids, std::size_t n) {
  std::unordered_set<std::int64_t> guess(guess_ids.begin(), guess_ids.end());
  std::unordered_set<std::int64_t> truth(truth_ids.begin(), truth_ids.end());
  if (guess.size() > n || truth.size() > n) {
    throw DataError("confusion_at: guess or truth set larger than candidate count");
  }
  ConfusionCounts c;
  for (const auto id : guess) {
    if (truth.count(id)) ++c.tp;
    else ++c.fp;
  }
  c.fn = truth.size() - c.tp;
  const std::size_t covered = c.tp + c.fp + c.fn;
  if (covered > n) throw DataError("confusion_at: sets exceed candidate count");
  c.tn = n - covered;
  return c;
}

/// Expected number of true positives when guessing k of n candidates
/// uniformly at random (hypergeometric mean).
inline double random_baseline_hits(std::size_t k, std::size_t positives, std::size_t n) {
  if (n == 0) throw DataError("random_baseline_hits: n must be positive");
  if (k > n || positives > n) {
    throw DataError("random_baseline_hits: k and positives must not exceed n");
  }
  return static_cast<double>(k) * static_cast<double>(positives) / static_cast<double>(n);
}

/// Counts guesses per candidate value, aligned with T (zero-filled). Useful
/// for spotting attacks that concentrate their predictions on few values.
inline std::vector<std::size_t> prediction_histogram(const std::vector<std::string>& guesses,
                                                     const std::vector<std::string>& values) {
  std::vector<std::size_t> counts(values.size(), 0);
  for (const auto& g : guesses) {
    bool found = false;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i] == g) {
        ++counts[i];
        found = true;
        break;
      }
    }
    if (!found) throw DataError("prediction_histogram: guess '" + g + "' not in value list");
  }
  return counts;
}

}  // namespace updateleak
