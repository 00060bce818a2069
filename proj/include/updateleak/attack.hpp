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

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "updateleak/error.hpp"
#include "updateleak/learn.hpp"
#include "updateleak/tabular.hpp"

namespace updateleak {

// The attacks in this header only ever see models, records, and the candidate
// value list. Ground-truth update receipts live in the harness and are never
// passed in.

/// Audit trail of one attribute-inference attack: the confidence the
/// model(s) assigned to the record's true label for every candidate value.
struct ConfidenceTable {
  std::vector<std::string> values;          // the candidate list T
  std::optional<std::vector<double>> conf_old;
  std::vector<double> conf_new;
};

struct AttackGuess {
  std::string guess;
  double score = 0.0;
  ConfidenceTable table;
};

struct RecordScore {
  std::int64_t record_id = 0;
  double score = 0.0;
};

namespace detail {

/// Queries the model once per candidate value: the target cell of `record` is
/// replaced by the candidate, the probe is encoded, and the model's
/// confidence on the record's own label is recorded.
inline std::vector<double> probe_confidences(const Model& model, const Record& record,
                                             const Schema& schema, const FeatureStats& stats,
                                             const std::vector<std::string>& candidates) {
  const auto& target = schema.target();
  const std::string& label = schema.label().domain.at(
      static_cast<std::size_t>(record.category_index(schema.label_index())));
  Record probe = record;
  std::vector<double> conf;
  conf.reserve(candidates.size());
  for (const auto& value : candidates) {
    const int idx = target.domain_index(value);
    if (idx < 0) {
      throw DataError("attack: candidate '" + value + "' not in target domain");
    }
    probe.cells[schema.target_index()] = static_cast<std::int32_t>(idx);
    conf.push_back(model.confidence_on_label(encode(probe, schema, stats), label));
  }
  return conf;
}

inline std::size_t argmax_first(const std::vector<double>& xs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (xs[i] > xs[best]) best = i;
  }
  return best;
}

inline double record_confidence(const Model& model, const Record& record,
                                const Schema& schema, const FeatureStats& stats) {
  const std::string& label = schema.label().domain.at(
      static_cast<std::size_t>(record.category_index(schema.label_index())));
  return model.confidence_on_label(encode(record, schema, stats), label);
}

inline void sort_scores(std::vector<RecordScore>& scores) {
  std::sort(scores.begin(), scores.end(), [](const RecordScore& a, const RecordScore& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.record_id < b.record_id;
  });
}

}  // namespace detail

/// Attribute inference with access to the updated model only. For each
/// candidate value t the attacker probes z = (t, v) and records the model's
/// confidence on the record's true label; the guess is the candidate with the
/// highest confidence (ties: first in canonical order).
inline AttackGuess single_model_attack(const Model& model_new, const Record& record,
                                       const Schema& schema, const FeatureStats& stats,
                                       const std::vector<std::string>& candidates) {
  if (candidates.empty()) throw DataError("attack: empty candidate list");
  ConfidenceTable table;
  table.values = candidates;
  table.conf_new = detail::probe_confidences(model_new, record, schema, stats, candidates);
  const std::size_t best = detail::argmax_first(table.conf_new);
  return AttackGuess{candidates[best], table.conf_new[best], std::move(table)};
}

/// Attribute inference with access to both models. The guess is the candidate
/// maximizing conf_new[t] - conf_old[t]: the value whose presence the update
/// strengthened the most.
inline AttackGuess two_model_attack(const Model& model_old, const Model& model_new,
                                    const Record& record, const Schema& schema,
                                    const FeatureStats& stats,
                                    const std::vector<std::string>& candidates) {
  if (candidates.empty()) throw DataError("attack: empty candidate list");
  if (model_old.input_dim() != model_new.input_dim() ||
      model_old.label_values() != model_new.label_values()) {
    throw DataError("attack: models disagree on feature space or labels");
  }
  ConfidenceTable table;
  table.values = candidates;
  table.conf_old = detail::probe_confidences(model_old, record, schema, stats, candidates);
  table.conf_new = detail::probe_confidences(model_new, record, schema, stats, candidates);
  std::vector<double> diff(candidates.size());
  for (std::size_t i = 0; i < diff.size(); ++i) {
    diff[i] = table.conf_new[i] - (*table.conf_old)[i];
  }
  const std::size_t best = detail::argmax_first(diff);
  return AttackGuess{candidates[best], diff[best], std::move(table)};
}

/// Updated-record inference with both models. Each candidate record (still
/// carrying its pre-update target value) is scored by the confidence
/// difference on its true label, original minus updated: an updated record
/// no longer supports its old value, so the retrained model loses confidence
/// there, and the bigger the drop the more likely the record was changed.
/// Sorted descending, ties by ascending id.
inline std::vector<RecordScore> record_inference_scores(const Model& model_old,
                                                        const Model& model_new,
                                                        const std::vector<Record>& candidates,
                                                        const Schema& schema,
                                                        const FeatureStats& stats) {
  if (candidates.empty()) throw DataError("attack: empty candidate list");
  if (model_old.input_dim() != model_new.input_dim() ||
      model_old.label_values() != model_new.label_values()) {
    throw DataError("attack: models disagree on feature space or labels");
  }
  std::vector<RecordScore> scores;
  scores.reserve(candidates.size());
  for (const auto& rec : candidates) {
    const double c_old = detail::record_confidence(model_old, rec, schema, stats);
    const double c_new = detail::record_confidence(model_new, rec, schema, stats);
    scores.push_back(RecordScore{rec.id, c_old - c_new});
  }
  detail::sort_scores(scores);
  return scores;
}

/// Updated-record inference with the new model only: records the new model is
/// least confident about (at their old value) rank first. A stand-in
/// baseline; weaker than the two-model scorer by construction.
inline std::vector<RecordScore> single_model_record_scores(const Model& model_new,
                                                           const std::vector<Record>& candidates,
                                                           const Schema& schema,
                                                           const FeatureStats& stats) {
  if (candidates.empty()) throw DataError("attack: empty candidate list");
  std::vector<RecordScore> scores;
  scores.reserve(candidates.size());
  for (const auto& rec : candidates) {
    scores.push_back(RecordScore{rec.id, -detail::record_confidence(model_new, rec, schema, stats)});
  }
  detail::sort_scores(scores);
  return scores;
}

/// How a ranked score list is turned into a concrete guess set.
struct GuessPolicy {
  enum class Kind { top_k, positive_score };
  Kind kind = Kind::positive_score;
  std::size_t k = 0;

  static GuessPolicy top_k(std::size_t k) { return GuessPolicy{Kind::top_k, k}; }
  static GuessPolicy positive_score() { return GuessPolicy{Kind::positive_score, 0}; }
};

/// Applies a guess policy to a ranked score list (as produced by the scorers:
/// descending scores). Returns the guessed ids, ascending.
inline std::vector<std::int64_t> threshold_guess(const std::vector<RecordScore>& scores,
                                                 const GuessPolicy& policy) {
  std::vector<std::int64_t> ids;
  if (policy.kind == GuessPolicy::Kind::top_k) {
    if (policy.k > scores.size()) {
      throw DataError("threshold_guess: k = " + std::to_string(policy.k) +
                      " exceeds " + std::to_string(scores.size()) + " scores");
    }
    for (std::size_t i = 0; i < policy.k; ++i) ids.push_back(scores[i].record_id);
  } else {
    for (const auto& s : scores) {
      if (s.score > 0.0) ids.push_back(s.record_id);
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace updateleak
