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

#include "updateleak/attack.hpp"

#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "test_support.hpp"
#include "updateleak/error.hpp"
#include "updateleak/learn.hpp"
#include "updateleak/rng.hpp"
#include "updateleak/tabular.hpp"

using namespace updateleak;

namespace {

struct Fixture {
  Dataset data;
  FeatureStats stats;
  Model orig;
  Model updated;

  static Fixture make(std::uint64_t seed) {
    SyntheticSpec spec = updateleak::testing::small_synthetic();
    spec.n = 400;
    Dataset data = generate_synthetic(spec, seed);
    auto stats = compute_feature_stats(data);
    const auto enc = encode_dataset(data, stats);

    TrainConfig cfg;
    Model orig = train_logistic(enc, cfg);

    const auto upd =
        apply_update_batch(data, {UpdateRule{"t", "a", "c", 20}}, derive_seed(seed, 1));
    const auto upd_enc = encode_dataset(upd.dataset, stats);
    Model updated = train_logistic(upd_enc, cfg);
    return Fixture{std::move(data), std::move(stats), std::move(orig), std::move(updated)};
  }
};

// Re-derives a single-model guess the slow way: rebuild the probe record for
// every candidate, query the model directly, scan for the max.
std::string oracle_single(const Model& m, const Record& rec, const Dataset& data,
                          const FeatureStats& stats, const std::vector<std::string>& cand) {
  const auto& schema = data.schema();
  const std::string label = data.label_value(rec);
  std::string best;
  double best_conf = -1.0;
  for (const auto& t : cand) {
    Record probe = rec;
    probe.cells[schema.target_index()] =
        static_cast<std::int32_t>(schema.target().domain_index(t));
    const double c = m.confidence_on_label(encode(probe, schema, stats), label);
    if (c > best_conf) {
      best_conf = c;
      best = t;
    }
  }
  return best;
}

std::string oracle_two(const Model& old_m, const Model& new_m, const Record& rec,
                       const Dataset& data, const FeatureStats& stats,
                       const std::vector<std::string>& cand) {
  const auto& schema = data.schema();
  const std::string label = data.label_value(rec);
  std::string best;
  double best_diff = -std::numeric_limits<double>::infinity();
  for (const auto& t : cand) {
    Record probe = rec;
    probe.cells[schema.target_index()] =
        static_cast<std::int32_t>(schema.target().domain_index(t));
    const auto x = encode(probe, schema, stats);
    const double d = new_m.confidence_on_label(x, label) - old_m.confidence_on_label(x, label);
    if (d > best_diff) {
      best_diff = d;
      best = t;
    }
  }
  return best;
}

Model zero_logistic(std::size_t input_dim) {
  Layer layer;
  layer.W = Eigen::MatrixXd::Zero(1, static_cast<Eigen::Index>(input_dim));
  layer.b = Eigen::VectorXd::Zero(1);
  return Model(ModelFamily::logistic, input_dim, {"no", "yes"}, {layer}, TrainingMeta{});
}

}  // namespace

TEST_CASE("attribute attacks agree with a brute-force re-query oracle") {
  for (std::uint64_t seed : {10ull, 11ull, 12ull}) {
    const auto fx = Fixture::make(seed);
    const auto cand = candidate_values(fx.data.schema());
    for (std::size_t i = 0; i < fx.data.size(); i += 17) {
      const auto& rec = fx.data.records()[i];
      const auto single =
          single_model_attack(fx.updated, rec, fx.data.schema(), fx.stats, cand);
      CHECK(single.guess == oracle_single(fx.updated, rec, fx.data, fx.stats, cand));
      const auto two =
          two_model_attack(fx.orig, fx.updated, rec, fx.data.schema(), fx.stats, cand);
      CHECK(two.guess == oracle_two(fx.orig, fx.updated, rec, fx.data, fx.stats, cand));
    }
  }
}

TEST_CASE("attack confidence tables expose the per-candidate scores") {
  const auto fx = Fixture::make(20);
  const auto cand = candidate_values(fx.data.schema());
  const auto& rec = fx.data.records()[3];

  const auto single = single_model_attack(fx.updated, rec, fx.data.schema(), fx.stats, cand);
  CHECK(single.table.values == cand);
  CHECK_FALSE(single.table.conf_old.has_value());
  REQUIRE(single.table.conf_new.size() == cand.size());
  // The reported score is the winning confidence.
  double best = single.table.conf_new[0];
  for (double c : single.table.conf_new) best = std::max(best, c);
  CHECK(single.score == best);

  const auto two = two_model_attack(fx.orig, fx.updated, rec, fx.data.schema(), fx.stats, cand);
  REQUIRE(two.table.conf_old.has_value());
  REQUIRE(two.table.conf_old->size() == cand.size());
  REQUIRE(two.table.conf_new.size() == cand.size());
  double best_diff = -1.0;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    best_diff = std::max(best_diff, two.table.conf_new[i] - (*two.table.conf_old)[i]);
  }
  CHECK(two.score == best_diff);
}

TEST_CASE("attacks probe with the record's true label") {
  // A model whose positive confidence rises with the 'blue' one-hot. For a
  // positive-labeled record the single-model attack must pick blue; for a
  // negative-labeled record it must avoid it.
  const Schema schema = updateleak::testing::tiny_schema();
  FeatureStats stats;
  stats.mean.assign(schema.size(), 0.0);
  stats.stddev.assign(schema.size(), 1.0);

  Layer layer;
  layer.W = Eigen::MatrixXd::Zero(1, 6);
  layer.W(0, 2) = 3.0;  // blue slot
  layer.b = Eigen::VectorXd::Zero(1);
  const Model model(ModelFamily::logistic, 6, {"no", "yes"}, {layer}, TrainingMeta{});

  const auto cand = candidate_values(schema);
  const Record pos = updateleak::testing::tiny_record(0, 0, 0, 0.0, 1);
  const Record neg = updateleak::testing::tiny_record(1, 0, 0, 0.0, 0);
  CHECK(single_model_attack(model, pos, schema, stats, cand).guess == "blue");
  CHECK(single_model_attack(model, neg, schema, stats, cand).guess == "red");
}

TEST_CASE("ties resolve to the first candidate in canonical order") {
  const Schema schema = updateleak::testing::tiny_schema();
  FeatureStats stats;
  stats.mean.assign(schema.size(), 0.0);
  stats.stddev.assign(schema.size(), 1.0);
  const Model flat = zero_logistic(6);
  const auto cand = candidate_values(schema);
  const Record rec = updateleak::testing::tiny_record(0, 1, 0, 0.0, 1);

  const auto single = single_model_attack(flat, rec, schema, stats, cand);
  CHECK(single.guess == "red");
  const auto two = two_model_attack(flat, flat, rec, schema, stats, cand);
  CHECK(two.guess == "red");
  CHECK(two.score == 0.0);
}

TEST_CASE("attack input validation") {
  const auto fx = Fixture::make(30);
  const auto& rec = fx.data.records()[0];
  const auto& schema = fx.data.schema();

  CHECK_THROWS_AS(single_model_attack(fx.updated, rec, schema, fx.stats, {}), DataError);
  CHECK_THROWS_AS(
      single_model_attack(fx.updated, rec, schema, fx.stats, {"a", "nonsense"}), DataError);

  const Model mismatched = zero_logistic(3);
  CHECK_THROWS_AS(two_model_attack(mismatched, fx.updated, rec, schema, fx.stats,
                                   candidate_values(schema)),
                  DataError);
}

TEST_CASE("record scores rank confidence drops first") {
  // Hand-built pair: the updated model lost confidence on record 5's label
  // and gained on record 6's; record 5 must outrank everything.
  const Schema schema = updateleak::testing::tiny_schema();
  FeatureStats stats;
  stats.mean.assign(schema.size(), 0.0);
  stats.stddev.assign(schema.size(), 1.0);

  Layer old_layer;
  old_layer.W = Eigen::MatrixXd::Zero(1, 6);
  old_layer.W(0, 0) = 2.0;  // red supports 'yes'
  old_layer.b = Eigen::VectorXd::Zero(1);
  const Model old_m(ModelFamily::logistic, 6, {"no", "yes"}, {old_layer}, TrainingMeta{});

  Layer new_layer = old_layer;
  new_layer.W(0, 0) = -2.0;  // red now opposes 'yes'
  const Model new_m(ModelFamily::logistic, 6, {"no", "yes"}, {new_layer}, TrainingMeta{});

  const std::vector<Record> candidates = {
      updateleak::testing::tiny_record(5, 0, 0, 0.0, 1),  // red, yes: big drop
      updateleak::testing::tiny_record(6, 0, 0, 0.0, 0),  // red, no: big gain
      updateleak::testing::tiny_record(7, 1, 0, 0.0, 1),  // green: unaffected
  };
  const auto scores = record_inference_scores(old_m, new_m, candidates, schema, stats);
  REQUIRE(scores.size() == 3);
  CHECK(scores[0].record_id == 5);
  CHECK(scores[0].score > 0.0);
  CHECK(scores[1].record_id == 7);
  CHECK(scores[1].score == 0.0);
  CHECK(scores[2].record_id == 6);
  CHECK(scores[2].score < 0.0);

  // Identical models: every score is exactly zero and order falls back to id.
  const auto null_scores = record_inference_scores(old_m, old_m, candidates, schema, stats);
  for (const auto& s : null_scores) CHECK(s.score == 0.0);
  CHECK(null_scores[0].record_id == 5);
  CHECK(null_scores[1].record_id == 6);
  CHECK(null_scores[2].record_id == 7);
}

TEST_CASE("single-model record scores rank low confidence first") {
  const Schema schema = updateleak::testing::tiny_schema();
  FeatureStats stats;
  stats.mean.assign(schema.size(), 0.0);
  stats.stddev.assign(schema.size(), 1.0);

  Layer layer;
  layer.W = Eigen::MatrixXd::Zero(1, 6);
  layer.W(0, 0) = 2.0;
  layer.b = Eigen::VectorXd::Zero(1);
  const Model m(ModelFamily::logistic, 6, {"no", "yes"}, {layer}, TrainingMeta{});

  const std::vector<Record> candidates = {
      updateleak::testing::tiny_record(1, 0, 0, 0.0, 1),  // well supported
      updateleak::testing::tiny_record(2, 0, 0, 0.0, 0),  // contradicted
  };
  const auto scores = single_model_record_scores(m, candidates, schema, stats);
  REQUIRE(scores.size() == 2);
  CHECK(scores[0].record_id == 2);
  // Scores are negated confidences, so they can never be positive.
  for (const auto& s : scores) CHECK(s.score <= 0.0);
}

TEST_CASE("threshold_guess applies both policies") {
  const std::vector<RecordScore> ranked = {
      {9, 2.0}, {4, 1.0}, {7, 0.5}, {2, 0.0}, {5, -1.0},
  };
  CHECK(threshold_guess(ranked, GuessPolicy::top_k(2)) == std::vector<std::int64_t>{4, 9});
  CHECK(threshold_guess(ranked, GuessPolicy::top_k(5)) ==
        std::vector<std::int64_t>{2, 4, 5, 7, 9});
  CHECK(threshold_guess(ranked, GuessPolicy::top_k(0)).empty());
  CHECK_THROWS_AS(threshold_guess(ranked, GuessPolicy::top_k(6)), DataError);
  // Exactly zero is excluded: the policy wants evidence of a change.
  CHECK(threshold_guess(ranked, GuessPolicy::positive_score()) ==
        std::vector<std::int64_t>{4, 7, 9});
}
