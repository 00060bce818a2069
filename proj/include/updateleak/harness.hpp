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

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "updateleak/attack.hpp"
#include "updateleak/error.hpp"
#include "updateleak/learn.hpp"
#include "updateleak/metrics.hpp"
#include "updateleak/rng.hpp"
#include "updateleak/tabular.hpp"

namespace updateleak {

enum class ExperimentKind { attribute_inference, record_inference };
enum class SeedPolicy { same_seed, fresh_seed };

inline std::string to_string(ExperimentKind k) {
  return k == ExperimentKind::attribute_inference ? "attribute_inference" : "record_inference";
}
inline std::string to_string(SeedPolicy p) {
  return p == SeedPolicy::same_seed ? "same_seed" : "fresh_seed";
}

// Fixed tags for deriving sub-stream seeds from the per-repetition seed.
inline constexpr std::uint64_t kSeedTagData = 0x64617461;        // dataset generation
inline constexpr std::uint64_t kSeedTagSplit = 0x73706c6974;     // train/test split
inline constexpr std::uint64_t kSeedTagOrig = 0x6f726967;        // original model training
inline constexpr std::uint64_t kSeedTagNew = 0x6e6577;           // fresh-seed updated training
inline constexpr std::uint64_t kSeedTagUpdate = 0x757064;        // update record sampling
inline constexpr std::uint64_t kSeedTagCandidates = 0x63616e64;  // candidate sampling
inline constexpr std::uint64_t kSeedTagChosen = 0x63686f73;      // updated-subset sampling
inline constexpr std::uint64_t kSeedTagProbe = 0x70726f62;       // null-world probe sampling

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct DataSource {
  std::optional<SyntheticSpec> synthetic;
  std::optional<std::string> csv_path;
  std::optional<std::string> schema_path;
};

struct RecordInferenceSpec {
  std::size_t candidates = 0;
  std::size_t updated = 0;
  GuessPolicy policy = GuessPolicy::positive_score();
};

/// Full description of one experiment. Everything that affects results lives
/// here; `workers` only controls execution and is not persisted.
struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::attribute_inference;
  std::uint64_t base_seed = 0;
  std::size_t repetitions = 1;
  SeedPolicy seed_policy = SeedPolicy::same_seed;
  bool share_original_model = true;
  std::size_t workers = 0;  // 0 = unset; resolved at run time
  DataSource data;
  std::size_t split_train = 0;
  std::size_t split_test = 0;
  TrainConfig train;
  std::vector<UpdateRule> rules;     // counts are filled from update_size
  std::size_t update_size = 1;       // attribute inference only
  std::size_t probe_count = 0;       // attribute inference with no rules (null world)
  RecordInferenceSpec record_inference;

  void validate() const {
    if (repetitions == 0) throw ConfigError("config: repetitions must be >= 1");
    if (split_train == 0) throw ConfigError("config: split.train must be >= 1");
    const bool has_synth = data.synthetic.has_value();
    const bool has_csv = data.csv_path.has_value();
    if (has_synth == has_csv) {
      throw ConfigError("config: data must name exactly one of 'synthetic' or 'csv'");
    }
    if (has_synth) data.synthetic->validate();
    if (has_csv && !data.schema_path) {
      throw ConfigError("config: csv data source needs a 'schema' path");
    }
    train.validate();
    for (const auto& rule : rules) {
      if (rule.before.empty() || rule.after.empty()) {
        throw ConfigError("config: update rule needs nonempty before/after");
      }
      if (rule.before == rule.after) {
        throw ConfigError("config: update rule before and after are both '" + rule.before + "'");
      }
    }
    if (kind == ExperimentKind::attribute_inference) {
      if (rules.empty() && probe_count == 0) {
        throw ConfigError(
            "config: attribute inference needs update rules, or probe_count for the "
            "no-update control");
      }
      if (!rules.empty() && update_size == 0) {
        throw ConfigError("config: update.size must be >= 1");
      }
    } else {
      if (rules.size() != 1) {
        throw ConfigError("config: record inference needs exactly one update rule");
      }
      if (probe_count != 0) {
        throw ConfigError("config: probe_count applies to attribute inference only");
      }
      const auto& ri = record_inference;
      if (ri.candidates < 2) throw ConfigError("config: record_inference.candidates must be >= 2");
      if (ri.updated == 0) {
        throw ConfigError("config: record_inference.updated must be >= 1 (degenerate truth)");
      }
      if (ri.updated >= ri.candidates) {
        throw ConfigError("config: record_inference.updated must be < candidates");
      }
      if (ri.policy.kind == GuessPolicy::Kind::top_k &&
          (ri.policy.k == 0 || ri.policy.k > ri.candidates)) {
        throw ConfigError("config: record_inference.k must be in [1, candidates]");
      }
    }
  }

  static ExperimentConfig from_json(const json& j) {
    detail::require_keys(j, "config",
                         {"kind", "base_seed", "repetitions", "seed_policy",
                          "share_original_model", "workers", "data", "split", "train", "update",
                          "record_inference", "probe_count"});
    ExperimentConfig cfg;
    const auto kind = detail::get_required<std::string>(j, "config", "kind");
    if (kind == "attribute_inference") {
      cfg.kind = ExperimentKind::attribute_inference;
    } else if (kind == "record_inference") {
      cfg.kind = ExperimentKind::record_inference;
    } else {
      throw ConfigError("config.kind: expected 'attribute_inference' or 'record_inference'");
    }
    cfg.base_seed = detail::get_required<std::uint64_t>(j, "config", "base_seed");
    cfg.repetitions = detail::get_required<std::size_t>(j, "config", "repetitions");
    const auto policy = detail::get_or<std::string>(j, "config", "seed_policy", "same_seed");
    if (policy == "same_seed") {
      cfg.seed_policy = SeedPolicy::same_seed;
    } else if (policy == "fresh_seed") {
      cfg.seed_policy = SeedPolicy::fresh_seed;
    } else {
      throw ConfigError("config.seed_policy: expected 'same_seed' or 'fresh_seed'");
    }
    cfg.share_original_model = detail::get_or<bool>(j, "config", "share_original_model", true);
    cfg.workers = detail::get_or<std::size_t>(j, "config", "workers", 0);
    cfg.probe_count = detail::get_or<std::size_t>(j, "config", "probe_count", 0);

    const auto& dj = j.contains("data") ? j.at("data") : json::object();
    detail::require_keys(dj, "config.data", {"synthetic", "csv"});
    if (dj.contains("synthetic")) cfg.data.synthetic = SyntheticSpec::from_json(dj.at("synthetic"));
    if (dj.contains("csv")) {
      const auto& cj = dj.at("csv");
      detail::require_keys(cj, "config.data.csv", {"path", "schema"});
      cfg.data.csv_path = detail::get_required<std::string>(cj, "config.data.csv", "path");
      cfg.data.schema_path = detail::get_required<std::string>(cj, "config.data.csv", "schema");
    }

    const auto& sj = j.contains("split") ? j.at("split") : json::object();
    detail::require_keys(sj, "config.split", {"train", "test"});
    cfg.split_train = detail::get_required<std::size_t>(sj, "config.split", "train");
    cfg.split_test = detail::get_or<std::size_t>(sj, "config.split", "test", 0);

    if (j.contains("train")) {
      const auto& tj = j.at("train");
      detail::require_keys(tj, "config.train",
                           {"family", "hidden_layers", "l2_strength", "max_epochs", "tolerance",
                            "learning_rate", "batch_size", "momentum"});
      cfg.train.family = model_family_from_string(
          detail::get_or<std::string>(tj, "config.train", "family", "logistic"));
      cfg.train.hidden_layers = detail::get_or<std::vector<std::size_t>>(
          tj, "config.train", "hidden_layers", {256, 256});
      cfg.train.l2_strength = detail::get_or<double>(tj, "config.train", "l2_strength", 1e-4);
      cfg.train.max_epochs = detail::get_or<std::size_t>(tj, "config.train", "max_epochs", 200);
      cfg.train.tolerance = detail::get_or<double>(tj, "config.train", "tolerance", 1e-6);
      cfg.train.learning_rate =
          detail::get_or<double>(tj, "config.train", "learning_rate", 0.05);
      cfg.train.batch_size = detail::get_or<std::size_t>(tj, "config.train", "batch_size", 32);
      cfg.train.momentum = detail::get_or<double>(tj, "config.train", "momentum", 0.0);
    }

    if (j.contains("update")) {
      const auto& uj = j.at("update");
      detail::require_keys(uj, "config.update", {"rules", "size"});
      if (uj.contains("rules")) {
        std::size_t idx = 0;
        for (const auto& rj : uj.at("rules")) {
          const std::string where = "config.update.rules[" + std::to_string(idx++) + "]";
          detail::require_keys(rj, where, {"attribute", "before", "after"});
          UpdateRule rule;
          rule.attribute = detail::get_or<std::string>(rj, where, "attribute", "");
          rule.before = detail::get_required<std::string>(rj, where, "before");
          rule.after = detail::get_required<std::string>(rj, where, "after");
          cfg.rules.push_back(std::move(rule));
        }
      }
      if (uj.contains("size")) {
        if (cfg.kind == ExperimentKind::record_inference) {
          throw ConfigError(
              "config.update.size is not used by record inference; set "
              "record_inference.updated instead");
        }
        cfg.update_size = detail::get_required<std::size_t>(uj, "config.update", "size");
      }
    }

    if (j.contains("record_inference")) {
      if (cfg.kind != ExperimentKind::record_inference) {
        throw ConfigError("config.record_inference applies to record inference only");
      }
      const auto& rj = j.at("record_inference");
      detail::require_keys(rj, "config.record_inference", {"candidates", "updated", "policy", "k"});
      cfg.record_inference.candidates =
          detail::get_required<std::size_t>(rj, "config.record_inference", "candidates");
      cfg.record_inference.updated =
          detail::get_required<std::size_t>(rj, "config.record_inference", "updated");
      const auto p =
          detail::get_or<std::string>(rj, "config.record_inference", "policy", "positive_score");
      if (p == "positive_score") {
        cfg.record_inference.policy = GuessPolicy::positive_score();
        if (rj.contains("k")) {
          throw ConfigError("config.record_inference.k only applies to the top_k policy");
        }
      } else if (p == "top_k") {
        cfg.record_inference.policy = GuessPolicy::top_k(
            detail::get_required<std::size_t>(rj, "config.record_inference", "k"));
      } else {
        throw ConfigError("config.record_inference.policy: expected 'positive_score' or 'top_k'");
      }
    } else if (cfg.kind == ExperimentKind::record_inference) {
      throw ConfigError("config: record inference needs a record_inference block");
    }

    cfg.validate();
    return cfg;
  }

  json to_json() const {
    json j;
    j["kind"] = to_string(kind);
    j["base_seed"] = base_seed;
    j["repetitions"] = repetitions;
    j["seed_policy"] = to_string(seed_policy);
    j["share_original_model"] = share_original_model;
    if (data.synthetic) {
      j["data"] = {{"synthetic", data.synthetic->to_json()}};
    } else {
      j["data"] = {{"csv", {{"path", *data.csv_path}, {"schema", *data.schema_path}}}};
    }
    j["split"] = {{"train", split_train}, {"test", split_test}};
    json tj;
    tj["family"] = to_string(train.family);
    tj["hidden_layers"] = train.hidden_layers;
    tj["l2_strength"] = train.l2_strength;
    tj["max_epochs"] = train.max_epochs;
    tj["tolerance"] = train.tolerance;
    tj["learning_rate"] = train.learning_rate;
    tj["batch_size"] = train.batch_size;
    tj["momentum"] = train.momentum;
    j["train"] = tj;
    json rules_json = json::array();
    for (const auto& rule : rules) {
      json rj;
      if (!rule.attribute.empty()) rj["attribute"] = rule.attribute;
      rj["before"] = rule.before;
      rj["after"] = rule.after;
      rules_json.push_back(rj);
    }
    json uj;
    uj["rules"] = rules_json;
    if (kind == ExperimentKind::attribute_inference) uj["size"] = update_size;
    j["update"] = uj;
    if (probe_count > 0) j["probe_count"] = probe_count;
    if (kind == ExperimentKind::record_inference) {
      json rj;
      rj["candidates"] = record_inference.candidates;
      rj["updated"] = record_inference.updated;
      if (record_inference.policy.kind == GuessPolicy::Kind::top_k) {
        rj["policy"] = "top_k";
        rj["k"] = record_inference.policy.k;
      } else {
        rj["policy"] = "positive_score";
      }
      j["record_inference"] = rj;
    }
    return j;
  }

  static ExperimentConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("config file not found: " + path.string());
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ConfigError("config file " + path.string() + ": " + e.what());
    }
    return from_json(j);
  }
};

/// Effective worker count: explicit override, then config, then the
/// UPDATELEAK_WORKERS environment variable, then 1.
inline std::size_t resolve_workers(std::size_t override_value, std::size_t config_value) {
  if (override_value > 0) return override_value;
  if (config_value > 0) return config_value;
  if (const char* env = std::getenv("UPDATELEAK_WORKERS")) {
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(env, &pos);
      if (pos == std::string(env).size() && v >= 1) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("UPDATELEAK_WORKERS is not a positive integer: ") + env);
  }
  return 1;
}

// ---------------------------------------------------------------------------
// Experiment results
// ---------------------------------------------------------------------------

/// One attacked record in an attribute-inference repetition. rule_index is
/// -1 for null-world probes (no rule applied; truth is the unchanged value).
struct AttackOutcome {
  int rule_index = -1;
  std::int64_t record_id = 0;
  std::string truth;
  std::string single_guess;
  double single_score = 0.0;
  std::string two_guess;
  double two_score = 0.0;
};

struct RepSeeds {
  std::size_t rep = 0;
  std::uint64_t rep_seed = 0;
  std::uint64_t orig_seed = 0;
  std::uint64_t new_seed = 0;
};

struct AttributeRep {
  RepSeeds seeds;
  std::uint64_t update_seed = 0;
  double orig_train_accuracy = 0.0;
  std::optional<double> orig_test_accuracy;
  double updated_train_accuracy = 0.0;
  std::vector<UpdateReceipt> receipts;
  std::vector<AttackOutcome> outcomes;
};

struct RecordRep {
  RepSeeds seeds;
  double orig_train_accuracy = 0.0;
  std::optional<double> orig_test_accuracy;
  double updated_train_accuracy = 0.0;
  std::vector<std::int64_t> updated_ids;       // ascending
  std::vector<RecordScore> two_scores;         // ranked
  std::vector<RecordScore> single_scores;      // ranked
};

struct FailedRep {
  std::size_t rep = 0;
  std::string error;
};

struct RuleAggregate {
  std::string before;
  std::string after;
  std::size_t size = 0;
  std::size_t n_guesses = 0;
  double single_success = 0.0;
  double two_success = 0.0;
  std::vector<std::size_t> single_histogram;  // aligned with target domain
  std::vector<std::size_t> two_histogram;
};

struct AttributeAggregate {
  std::size_t n_guesses = 0;
  double single_success = 0.0;
  double two_success = 0.0;
  std::vector<RuleAggregate> per_rule;
  double orig_train_accuracy_mean = 0.0;
  std::optional<double> orig_test_accuracy_mean;
  double updated_train_accuracy_mean = 0.0;
};

struct RecordAggregate {
  std::size_t candidates = 0;
  std::size_t updated = 0;
  double baseline_hits = 0.0;          // hypergeometric mean at k = updated
  double two_top_hits_mean = 0.0;      // hits in the top `updated` ranks
  double single_top_hits_mean = 0.0;
  double two_tpr_mean = 0.0;           // at the configured guess policy
  double two_fpr_mean = 0.0;
  double single_tpr_mean = 0.0;
  double single_fpr_mean = 0.0;
  double two_auc_mean = 0.0;
  double single_auc_mean = 0.0;
  std::vector<RocPoint> two_roc_mean;  // pointwise mean over repetitions, k = 0..candidates
  std::vector<RocPoint> single_roc_mean;
  double orig_train_accuracy_mean = 0.0;
  std::optional<double> orig_test_accuracy_mean;
  double updated_train_accuracy_mean = 0.0;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<std::string> target_domain;
  std::vector<AttributeRep> attribute_reps;
  std::vector<RecordRep> record_reps;
  std::vector<FailedRep> failures;
  AttributeAggregate attribute_aggregate;
  RecordAggregate record_aggregate;
};

// ---------------------------------------------------------------------------
// Aggregation (shared by the runner and the load-time consistency check)
// ---------------------------------------------------------------------------

inline AttributeAggregate compute_attribute_aggregate(const ExperimentConfig& cfg,
                                                      const std::vector<std::string>& domain,
                                                      const std::vector<AttributeRep>& reps) {
  if (reps.empty()) throw DataError("aggregate: no successful repetitions");
  AttributeAggregate agg;
  agg.per_rule.resize(cfg.rules.size());
  for (std::size_t r = 0; r < cfg.rules.size(); ++r) {
    agg.per_rule[r].before = cfg.rules[r].before;
    agg.per_rule[r].after = cfg.rules[r].after;
    agg.per_rule[r].size = cfg.update_size;
    agg.per_rule[r].single_histogram.assign(domain.size(), 0);
    agg.per_rule[r].two_histogram.assign(domain.size(), 0);
  }
  std::size_t single_hits = 0, two_hits = 0;
  std::vector<std::size_t> rule_single_hits(cfg.rules.size(), 0);
  std::vector<std::size_t> rule_two_hits(cfg.rules.size(), 0);
  double orig_acc = 0.0, upd_acc = 0.0, test_acc = 0.0;
  std::size_t test_count = 0;
  auto domain_index = [&](const std::string& v) {
    for (std::size_t i = 0; i < domain.size(); ++i) {
      if (domain[i] == v) return i;
    }
    throw DataError("aggregate: guess '" + v + "' outside target domain");
  };
  for (const auto& rep : reps) {
    orig_acc += rep.orig_train_accuracy;
    upd_acc += rep.updated_train_accuracy;
    if (rep.orig_test_accuracy) {
      test_acc += *rep.orig_test_accuracy;
      ++test_count;
    }
    for (const auto& o : rep.outcomes) {
      ++agg.n_guesses;
      if (o.single_guess == o.truth) ++single_hits;
      if (o.two_guess == o.truth) ++two_hits;
      if (o.rule_index >= 0) {
        auto& pr = agg.per_rule.at(static_cast<std::size_t>(o.rule_index));
        ++pr.n_guesses;
        if (o.single_guess == o.truth) ++rule_single_hits[o.rule_index];
        if (o.two_guess == o.truth) ++rule_two_hits[o.rule_index];
        ++pr.single_histogram[domain_index(o.single_guess)];
        ++pr.two_histogram[domain_index(o.two_guess)];
      }
    }
  }
  if (agg.n_guesses == 0) throw DataError("aggregate: no attack outcomes recorded");
  agg.single_success = static_cast<double>(single_hits) / static_cast<double>(agg.n_guesses);
  agg.two_success = static_cast<double>(two_hits) / static_cast<double>(agg.n_guesses);
  for (std::size_t r = 0; r < cfg.rules.size(); ++r) {
    auto& pr = agg.per_rule[r];
    if (pr.n_guesses > 0) {
      pr.single_success =
          static_cast<double>(rule_single_hits[r]) / static_cast<double>(pr.n_guesses);
      pr.two_success = static_cast<double>(rule_two_hits[r]) / static_cast<double>(pr.n_guesses);
    }
  }
  const auto n = static_cast<double>(reps.size());
  agg.orig_train_accuracy_mean = orig_acc / n;
  agg.updated_train_accuracy_mean = upd_acc / n;
  if (test_count > 0) {
    agg.orig_test_accuracy_mean = test_acc / static_cast<double>(test_count);
  }
  return agg;
}

inline RecordAggregate compute_record_aggregate(const ExperimentConfig& cfg,
                                                const std::vector<RecordRep>& reps) {
  if (reps.empty()) throw DataError("aggregate: no successful repetitions");
  const std::size_t n = cfg.record_inference.candidates;
  const std::size_t k = cfg.record_inference.updated;
  RecordAggregate agg;
  agg.candidates = n;
  agg.updated = k;
  agg.baseline_hits = random_baseline_hits(k, k, n);
  agg.two_roc_mean.assign(n + 1, RocPoint{0.0, 0.0});
  agg.single_roc_mean.assign(n + 1, RocPoint{0.0, 0.0});

  auto top_hits = [&](const std::vector<RecordScore>& scores,
                      const std::vector<std::int64_t>& truth) {
    std::unordered_set<std::int64_t> t(truth.begin(), truth.end());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < k; ++i) {
      if (t.count(scores[i].record_id)) ++hits;
    }
    return static_cast<double>(hits);
  };

  for (const auto& rep : reps) {
    if (rep.two_scores.size() != n || rep.single_scores.size() != n) {
      throw DataError("aggregate: repetition score list has wrong length");
    }
    const auto two_roc = roc_from_scores(rep.two_scores, rep.updated_ids);
    const auto single_roc = roc_from_scores(rep.single_scores, rep.updated_ids);
    for (std::size_t i = 0; i <= n; ++i) {
      agg.two_roc_mean[i].fpr += two_roc.points[i].fpr;
      agg.two_roc_mean[i].tpr += two_roc.points[i].tpr;
      agg.single_roc_mean[i].fpr += single_roc.points[i].fpr;
      agg.single_roc_mean[i].tpr += single_roc.points[i].tpr;
    }
    agg.two_auc_mean += two_roc.auc();
    agg.single_auc_mean += single_roc.auc();
    agg.two_top_hits_mean += top_hits(rep.two_scores, rep.updated_ids);
    agg.single_top_hits_mean += top_hits(rep.single_scores, rep.updated_ids);
    const auto two_conf =
        confusion_at(threshold_guess(rep.two_scores, cfg.record_inference.policy),
                     rep.updated_ids, n);
    const auto single_conf =
        confusion_at(threshold_guess(rep.single_scores, cfg.record_inference.policy),
                     rep.updated_ids, n);
    agg.two_tpr_mean += two_conf.tpr();
    agg.two_fpr_mean += two_conf.fpr();
    agg.single_tpr_mean += single_conf.tpr();
    agg.single_fpr_mean += single_conf.fpr();
    agg.orig_train_accuracy_mean += rep.orig_train_accuracy;
    agg.updated_train_accuracy_mean += rep.updated_train_accuracy;
  }
  const auto m = static_cast<double>(reps.size());
  for (std::size_t i = 0; i <= n; ++i) {
    agg.two_roc_mean[i].fpr /= m;
    agg.two_roc_mean[i].tpr /= m;
    agg.single_roc_mean[i].fpr /= m;
    agg.single_roc_mean[i].tpr /= m;
  }
  agg.two_auc_mean /= m;
  agg.single_auc_mean /= m;
  agg.two_top_hits_mean /= m;
  agg.single_top_hits_mean /= m;
  agg.two_tpr_mean /= m;
  agg.two_fpr_mean /= m;
  agg.single_tpr_mean /= m;
  agg.single_fpr_mean /= m;
  agg.orig_train_accuracy_mean /= m;
  agg.updated_train_accuracy_mean /= m;
  double test_acc = 0.0;
  std::size_t test_count = 0;
  for (const auto& rep : reps) {
    if (rep.orig_test_accuracy) {
      test_acc += *rep.orig_test_accuracy;
      ++test_count;
    }
  }
  if (test_count > 0) agg.orig_test_accuracy_mean = test_acc / static_cast<double>(test_count);
  return agg;
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

namespace detail {

/// Runs fn(0..n-1) on up to `workers` threads. The first exception wins and
/// is rethrown after all threads stop.
template <typename Fn>
void run_parallel(std::size_t n, std::size_t workers, Fn&& fn) {
  if (n == 0) return;
  workers = std::min(workers == 0 ? std::size_t{1} : workers, n);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        if (failed.load()) return;
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          failed.store(true);
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

struct ExperimentContext {
  Dataset train_data;
  Dataset test_data;
  FeatureStats stats;
  EncodedDataset train_enc;
  EncodedDataset test_enc;
  std::vector<std::string> candidates;
  std::optional<Model> shared_orig;
  std::uint64_t shared_orig_seed = 0;
};

inline ExperimentContext build_context(const ExperimentConfig& cfg) {
  ExperimentContext ctx;
  Dataset full;
  if (cfg.data.synthetic) {
    full = generate_synthetic(*cfg.data.synthetic, derive_seed(cfg.base_seed, kSeedTagData));
  } else {
    const Schema schema = Schema::load(*cfg.data.schema_path);
    full = load_csv(*cfg.data.csv_path, schema).dataset;
  }
  auto split = sample_split(full, cfg.split_train, cfg.split_test,
                            derive_seed(cfg.base_seed, kSeedTagSplit));
  ctx.train_data = std::move(split.first);
  ctx.test_data = std::move(split.second);
  ctx.stats = compute_feature_stats(ctx.train_data);
  ctx.train_enc = encode_dataset(ctx.train_data, ctx.stats);
  if (ctx.test_data.size() > 0) ctx.test_enc = encode_dataset(ctx.test_data, ctx.stats);
  ctx.candidates = candidate_values(ctx.train_data.schema());

  if (cfg.share_original_model) {
    ctx.shared_orig_seed = derive_seed(cfg.base_seed, kSeedTagOrig);
    TrainConfig tc = cfg.train;
    tc.seed = ctx.shared_orig_seed;
    const EncodedDataset* test = ctx.test_data.size() > 0 ? &ctx.test_enc : nullptr;
    ctx.shared_orig = tc.family == ModelFamily::logistic
                          ? train_logistic(ctx.train_enc, tc, test)
                          : train_mlp(ctx.train_enc, tc, test);
  }
  return ctx;
}

inline Model train_model(const ExperimentConfig& cfg, const EncodedDataset& data,
                         std::uint64_t seed, const EncodedDataset* test) {
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  return tc.family == ModelFamily::logistic ? train_logistic(data, tc, test)
                                            : train_mlp(data, tc, test);
}

/// The original model for repetition i, plus the seed it was trained with.
inline std::pair<const Model*, std::uint64_t> orig_model_for_rep(
    const ExperimentConfig& cfg, const ExperimentContext& ctx, std::uint64_t rep_seed,
    std::optional<Model>& local_storage) {
  if (cfg.share_original_model) return {&*ctx.shared_orig, ctx.shared_orig_seed};
  const std::uint64_t seed = derive_seed(rep_seed, kSeedTagOrig);
  const EncodedDataset* test = ctx.test_data.size() > 0 ? &ctx.test_enc : nullptr;
  local_storage = train_model(cfg, ctx.train_enc, seed, test);
  return {&*local_storage, seed};
}

inline AttributeRep run_attribute_rep(const ExperimentConfig& cfg, const ExperimentContext& ctx,
                                      std::size_t i) {
  AttributeRep rep;
  rep.seeds.rep = i;
  rep.seeds.rep_seed = cfg.base_seed + i;
  rep.update_seed = derive_seed(rep.seeds.rep_seed, kSeedTagUpdate);

  std::vector<UpdateRule> rules = cfg.rules;
  const auto& schema = ctx.train_data.schema();
  for (auto& rule : rules) {
    if (rule.attribute.empty()) rule.attribute = schema.target().name;
    rule.count = cfg.update_size;
  }
  auto upd = apply_update_batch(ctx.train_data, rules, rep.update_seed);
  rep.receipts = upd.receipts;

  std::optional<Model> local_orig;
  auto [orig, orig_seed] = orig_model_for_rep(cfg, ctx, rep.seeds.rep_seed, local_orig);
  rep.seeds.orig_seed = orig_seed;
  rep.seeds.new_seed = cfg.seed_policy == SeedPolicy::same_seed
                           ? orig_seed
                           : derive_seed(rep.seeds.rep_seed, kSeedTagNew);
  const auto updated_enc = encode_dataset(upd.dataset, ctx.stats);
  const Model updated = train_model(cfg, updated_enc, rep.seeds.new_seed, nullptr);

  rep.orig_train_accuracy = orig->meta().train_accuracy;
  rep.orig_test_accuracy = orig->meta().test_accuracy;
  rep.updated_train_accuracy = updated.meta().train_accuracy;

  auto attack_record = [&](const Record& record, int rule_index, const std::string& truth) {
    AttackOutcome o;
    o.rule_index = rule_index;
    o.record_id = record.id;
    o.truth = truth;
    const auto single = single_model_attack(updated, record, schema, ctx.stats, ctx.candidates);
    o.single_guess = single.guess;
    o.single_score = single.score;
    const auto two = two_model_attack(*orig, updated, record, schema, ctx.stats, ctx.candidates);
    o.two_guess = two.guess;
    o.two_score = two.score;
    rep.outcomes.push_back(std::move(o));
  };

  if (!rules.empty()) {
    for (std::size_t r = 0; r < rep.receipts.size(); ++r) {
      for (const auto id : rep.receipts[r].updated_ids) {
        attack_record(upd.dataset.record_by_id(id), static_cast<int>(r),
                      rep.receipts[r].rule.after);
      }
    }
  } else {
    std::vector<std::size_t> all(upd.dataset.size());
    for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
    auto rng = make_rng(derive_seed(rep.seeds.rep_seed, kSeedTagProbe));
    if (cfg.probe_count > all.size()) {
      throw DataError("probe_count exceeds training set size");
    }
    for (const auto idx : sample_without_replacement(all, cfg.probe_count, rng)) {
      const auto& record = upd.dataset.records()[idx];
      attack_record(record, -1, upd.dataset.target_value(record));
    }
  }
  return rep;
}

inline RecordRep run_record_rep(const ExperimentConfig& cfg, const ExperimentContext& ctx,
                                std::size_t i) {
  RecordRep rep;
  rep.seeds.rep = i;
  rep.seeds.rep_seed = cfg.base_seed + i;

  const auto& schema = ctx.train_data.schema();
  UpdateRule rule = cfg.rules[0];
  if (rule.attribute.empty()) rule.attribute = schema.target().name;
  rule.count = cfg.record_inference.updated;

  const auto before_idx = schema.target().domain_index(rule.before);
  if (before_idx < 0) {
    throw ConfigError("update rule: before value '" + rule.before + "' not in target domain");
  }
  std::vector<std::int64_t> eligible;
  for (const auto& r : ctx.train_data.records()) {
    if (r.category_index(schema.target_index()) == before_idx) eligible.push_back(r.id);
  }
  if (eligible.size() < cfg.record_inference.candidates) {
    throw DataError("record inference: " + std::to_string(cfg.record_inference.candidates) +
                    " candidates requested, only " + std::to_string(eligible.size()) +
                    " records hold '" + rule.before + "'");
  }
  auto cand_rng = make_rng(derive_seed(rep.seeds.rep_seed, kSeedTagCandidates));
  auto candidate_ids =
      sample_without_replacement(eligible, cfg.record_inference.candidates, cand_rng);
  auto chosen_rng = make_rng(derive_seed(rep.seeds.rep_seed, kSeedTagChosen));
  rep.updated_ids =
      sample_without_replacement(candidate_ids, cfg.record_inference.updated, chosen_rng);
  std::sort(rep.updated_ids.begin(), rep.updated_ids.end());

  auto upd = apply_update_to_ids(ctx.train_data, rule, rep.updated_ids);

  std::optional<Model> local_orig;
  auto [orig, orig_seed] = orig_model_for_rep(cfg, ctx, rep.seeds.rep_seed, local_orig);
  rep.seeds.orig_seed = orig_seed;
  rep.seeds.new_seed = cfg.seed_policy == SeedPolicy::same_seed
                           ? orig_seed
                           : derive_seed(rep.seeds.rep_seed, kSeedTagNew);
  const auto updated_enc = encode_dataset(upd.dataset, ctx.stats);
  const Model updated = train_model(cfg, updated_enc, rep.seeds.new_seed, nullptr);

  rep.orig_train_accuracy = orig->meta().train_accuracy;
  rep.orig_test_accuracy = orig->meta().test_accuracy;
  rep.updated_train_accuracy = updated.meta().train_accuracy;

  // Candidates are probed at their original records: the attacker knows the
  // old snapshot, not which rows moved.
  std::vector<Record> candidate_records;
  candidate_records.reserve(candidate_ids.size());
  for (const auto id : candidate_ids) {
    candidate_records.push_back(ctx.train_data.record_by_id(id));
  }
  rep.two_scores =
      record_inference_scores(*orig, updated, candidate_records, schema, ctx.stats);
  rep.single_scores = single_model_record_scores(updated, candidate_records, schema, ctx.stats);
  return rep;
}

}  // namespace detail

/// Runs the configured experiment. Repetition i uses seed base_seed + i for
/// all of its sampling; training divergence marks the repetition failed and
/// excluded from aggregates (with a report) rather than aborting the run.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       std::size_t workers_override = 0) {
  cfg.validate();
  const std::size_t workers = resolve_workers(workers_override, cfg.workers);
  detail::ExperimentContext ctx = detail::build_context(cfg);

  ExperimentResult result;
  result.config = cfg;
  for (auto& rule : result.config.rules) {
    if (rule.attribute.empty()) rule.attribute = ctx.train_data.schema().target().name;
    rule.count = cfg.kind == ExperimentKind::attribute_inference
                     ? cfg.update_size
                     : cfg.record_inference.updated;
  }
  result.config.workers = 0;
  result.target_domain = ctx.candidates;

  std::mutex failures_mutex;
  if (cfg.kind == ExperimentKind::attribute_inference) {
    std::vector<std::optional<AttributeRep>> slots(cfg.repetitions);
    detail::run_parallel(cfg.repetitions, workers, [&](std::size_t i) {
      try {
        slots[i] = detail::run_attribute_rep(result.config, ctx, i);
      } catch (const TrainError& e) {
        std::lock_guard<std::mutex> lock(failures_mutex);
        result.failures.push_back(FailedRep{i, e.what()});
      }
    });
    for (auto& slot : slots) {
      if (slot) result.attribute_reps.push_back(std::move(*slot));
    }
    std::sort(result.failures.begin(), result.failures.end(),
              [](const FailedRep& a, const FailedRep& b) { return a.rep < b.rep; });
    if (result.attribute_reps.empty()) {
      throw TrainError("all repetitions failed; first error: " + result.failures.front().error);
    }
    result.attribute_aggregate =
        compute_attribute_aggregate(result.config, result.target_domain, result.attribute_reps);
  } else {
    std::vector<std::optional<RecordRep>> slots(cfg.repetitions);
    detail::run_parallel(cfg.repetitions, workers, [&](std::size_t i) {
      try {
        slots[i] = detail::run_record_rep(result.config, ctx, i);
      } catch (const TrainError& e) {
        std::lock_guard<std::mutex> lock(failures_mutex);
        result.failures.push_back(FailedRep{i, e.what()});
      }
    });
    for (auto& slot : slots) {
      if (slot) result.record_reps.push_back(std::move(*slot));
    }
    std::sort(result.failures.begin(), result.failures.end(),
              [](const FailedRep& a, const FailedRep& b) { return a.rep < b.rep; });
    if (result.record_reps.empty()) {
      throw TrainError("all repetitions failed; first error: " + result.failures.front().error);
    }
    result.record_aggregate = compute_record_aggregate(result.config, result.record_reps);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace detail {

inline json seeds_to_json(const RepSeeds& s) {
  return json{{"rep", s.rep},
              {"rep_seed", s.rep_seed},
              {"orig_seed", s.orig_seed},
              {"new_seed", s.new_seed}};
}

inline RepSeeds seeds_from_json(const json& j) {
  require_keys(j, "result.rep", {"rep", "rep_seed", "orig_seed", "new_seed"});
  RepSeeds s;
  s.rep = get_required<std::size_t>(j, "result.rep", "rep");
  s.rep_seed = get_required<std::uint64_t>(j, "result.rep", "rep_seed");
  s.orig_seed = get_required<std::uint64_t>(j, "result.rep", "orig_seed");
  s.new_seed = get_required<std::uint64_t>(j, "result.rep", "new_seed");
  return s;
}

inline json scores_to_json(const std::vector<RecordScore>& scores) {
  json arr = json::array();
  for (const auto& s : scores) arr.push_back(json::array({s.record_id, s.score}));
  return arr;
}

inline std::vector<RecordScore> scores_from_json(const json& j, const std::string& where) {
  if (!j.is_array()) throw DataError(where + ": expected an array of [id, score] pairs");
  std::vector<RecordScore> scores;
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 2) {
      throw DataError(where + ": expected [id, score], got " + e.dump());
    }
    scores.push_back(RecordScore{e.at(0).get<std::int64_t>(), e.at(1).get<double>()});
  }
  return scores;
}

inline json attribute_rep_to_json(const AttributeRep& rep) {
  json j = seeds_to_json(rep.seeds);
  j["update_seed"] = rep.update_seed;
  j["orig_train_accuracy"] = rep.orig_train_accuracy;
  j["orig_test_accuracy"] =
      rep.orig_test_accuracy ? json(*rep.orig_test_accuracy) : json(nullptr);
  j["updated_train_accuracy"] = rep.updated_train_accuracy;
  json receipts = json::array();
  for (const auto& r : rep.receipts) {
    receipts.push_back(json{{"attribute", r.rule.attribute},
                            {"before", r.rule.before},
                            {"after", r.rule.after},
                            {"count", r.rule.count},
                            {"updated_ids", r.updated_ids}});
  }
  j["receipts"] = receipts;
  json outcomes = json::array();
  for (const auto& o : rep.outcomes) {
    outcomes.push_back(json{{"rule", o.rule_index},
                            {"id", o.record_id},
                            {"truth", o.truth},
                            {"single_guess", o.single_guess},
                            {"single_score", o.single_score},
                            {"two_guess", o.two_guess},
                            {"two_score", o.two_score}});
  }
  j["outcomes"] = outcomes;
  return j;
}

inline AttributeRep attribute_rep_from_json(const json& j) {
  require_keys(j, "result.rep",
               {"rep", "rep_seed", "orig_seed", "new_seed", "update_seed", "orig_train_accuracy",
                "orig_test_accuracy", "updated_train_accuracy", "receipts", "outcomes"});
  AttributeRep rep;
  rep.seeds = seeds_from_json(json{{"rep", j.at("rep")},
                                   {"rep_seed", j.at("rep_seed")},
                                   {"orig_seed", j.at("orig_seed")},
                                   {"new_seed", j.at("new_seed")}});
  rep.update_seed = get_required<std::uint64_t>(j, "result.rep", "update_seed");
  rep.orig_train_accuracy = get_required<double>(j, "result.rep", "orig_train_accuracy");
  if (!j.at("orig_test_accuracy").is_null()) {
    rep.orig_test_accuracy = j.at("orig_test_accuracy").get<double>();
  }
  rep.updated_train_accuracy = get_required<double>(j, "result.rep", "updated_train_accuracy");
  for (const auto& rj : j.at("receipts")) {
    require_keys(rj, "result.rep.receipt",
                 {"attribute", "before", "after", "count", "updated_ids"});
    UpdateReceipt r;
    r.rule.attribute = get_required<std::string>(rj, "receipt", "attribute");
    r.rule.before = get_required<std::string>(rj, "receipt", "before");
    r.rule.after = get_required<std::string>(rj, "receipt", "after");
    r.rule.count = get_required<std::size_t>(rj, "receipt", "count");
    r.updated_ids = get_required<std::vector<std::int64_t>>(rj, "receipt", "updated_ids");
    rep.receipts.push_back(std::move(r));
  }
  for (const auto& oj : j.at("outcomes")) {
    require_keys(oj, "result.rep.outcome",
                 {"rule", "id", "truth", "single_guess", "single_score", "two_guess",
                  "two_score"});
    AttackOutcome o;
    o.rule_index = get_required<int>(oj, "outcome", "rule");
    o.record_id = get_required<std::int64_t>(oj, "outcome", "id");
    o.truth = get_required<std::string>(oj, "outcome", "truth");
    o.single_guess = get_required<std::string>(oj, "outcome", "single_guess");
    o.single_score = get_required<double>(oj, "outcome", "single_score");
    o.two_guess = get_required<std::string>(oj, "outcome", "two_guess");
    o.two_score = get_required<double>(oj, "outcome", "two_score");
    rep.outcomes.push_back(std::move(o));
  }
  return rep;
}

inline json record_rep_to_json(const RecordRep& rep) {
  json j = seeds_to_json(rep.seeds);
  j["orig_train_accuracy"] = rep.orig_train_accuracy;
  j["orig_test_accuracy"] =
      rep.orig_test_accuracy ? json(*rep.orig_test_accuracy) : json(nullptr);
  j["updated_train_accuracy"] = rep.updated_train_accuracy;
  j["updated_ids"] = rep.updated_ids;
  j["two_scores"] = scores_to_json(rep.two_scores);
  j["single_scores"] = scores_to_json(rep.single_scores);
  return j;
}

inline RecordRep record_rep_from_json(const json& j) {
  require_keys(j, "result.rep",
               {"rep", "rep_seed", "orig_seed", "new_seed", "orig_train_accuracy",
                "orig_test_accuracy", "updated_train_accuracy", "updated_ids", "two_scores",
                "single_scores"});
  RecordRep rep;
  rep.seeds = seeds_from_json(json{{"rep", j.at("rep")},
                                   {"rep_seed", j.at("rep_seed")},
                                   {"orig_seed", j.at("orig_seed")},
                                   {"new_seed", j.at("new_seed")}});
  rep.orig_train_accuracy = get_required<double>(j, "result.rep", "orig_train_accuracy");
  if (!j.at("orig_test_accuracy").is_null()) {
    rep.orig_test_accuracy = j.at("orig_test_accuracy").get<double>();
  }
  rep.updated_train_accuracy = get_required<double>(j, "result.rep", "updated_train_accuracy");
  rep.updated_ids = get_required<std::vector<std::int64_t>>(j, "result.rep", "updated_ids");
  rep.two_scores = scores_from_json(j.at("two_scores"), "result.rep.two_scores");
  rep.single_scores = scores_from_json(j.at("single_scores"), "result.rep.single_scores");
  return rep;
}

inline json attribute_aggregate_to_json(const AttributeAggregate& a) {
  json j;
  j["n_guesses"] = a.n_guesses;
  j["single_success"] = a.single_success;
  j["two_success"] = a.two_success;
  json rules = json::array();
  for (const auto& r : a.per_rule) {
    rules.push_back(json{{"before", r.before},
                         {"after", r.after},
                         {"size", r.size},
                         {"n_guesses", r.n_guesses},
                         {"single_success", r.single_success},
                         {"two_success", r.two_success},
                         {"single_histogram", r.single_histogram},
                         {"two_histogram", r.two_histogram}});
  }
  j["per_rule"] = rules;
  j["orig_train_accuracy_mean"] = a.orig_train_accuracy_mean;
  j["orig_test_accuracy_mean"] =
      a.orig_test_accuracy_mean ? json(*a.orig_test_accuracy_mean) : json(nullptr);
  j["updated_train_accuracy_mean"] = a.updated_train_accuracy_mean;
  return j;
}

inline json roc_to_json(const std::vector<RocPoint>& points) {
  json arr = json::array();
  for (const auto& p : points) arr.push_back(json::array({p.fpr, p.tpr}));
  return arr;
}

inline json record_aggregate_to_json(const RecordAggregate& a) {
  json j;
  j["candidates"] = a.candidates;
  j["updated"] = a.updated;
  j["baseline_hits"] = a.baseline_hits;
  j["two_top_hits_mean"] = a.two_top_hits_mean;
  j["single_top_hits_mean"] = a.single_top_hits_mean;
  j["two_tpr_mean"] = a.two_tpr_mean;
  j["two_fpr_mean"] = a.two_fpr_mean;
  j["single_tpr_mean"] = a.single_tpr_mean;
  j["single_fpr_mean"] = a.single_fpr_mean;
  j["two_auc_mean"] = a.two_auc_mean;
  j["single_auc_mean"] = a.single_auc_mean;
  j["two_roc_mean"] = roc_to_json(a.two_roc_mean);
  j["single_roc_mean"] = roc_to_json(a.single_roc_mean);
  j["orig_train_accuracy_mean"] = a.orig_train_accuracy_mean;
  j["orig_test_accuracy_mean"] =
      a.orig_test_accuracy_mean ? json(*a.orig_test_accuracy_mean) : json(nullptr);
  j["updated_train_accuracy_mean"] = a.updated_train_accuracy_mean;
  return j;
}

}  // namespace detail

inline json result_to_json(const ExperimentResult& result) {
  json j;
  j["format_version"] = 1;
  j["tool"] = "updateleak";
  j["config"] = result.config.to_json();
  j["target_domain"] = result.target_domain;
  json reps = json::array();
  if (result.config.kind == ExperimentKind::attribute_inference) {
    for (const auto& rep : result.attribute_reps) {
      reps.push_back(detail::attribute_rep_to_json(rep));
    }
    j["aggregate"] = detail::attribute_aggregate_to_json(result.attribute_aggregate);
  } else {
    for (const auto& rep : result.record_reps) reps.push_back(detail::record_rep_to_json(rep));
    j["aggregate"] = detail::record_aggregate_to_json(result.record_aggregate);
  }
  j["reps"] = reps;
  json failures = json::array();
  for (const auto& f : result.failures) {
    failures.push_back(json{{"rep", f.rep}, {"error", f.error}});
  }
  j["failed_reps"] = failures;
  return j;
}

inline void persist_result(const ExperimentResult& result, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write result file: " + path.string());
  out << result_to_json(result).dump(2) << "\n";
  if (!out) throw DataError("failed writing result file: " + path.string());
}

/// Loads a result file and recomputes its aggregates from the per-repetition
/// records; any mismatch with the stored aggregate fails the load.
inline ExperimentResult load_result(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("result file not found: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("result file " + path.string() + ": " + e.what());
  }
  detail::require_keys(j, "result",
                       {"format_version", "tool", "config", "target_domain", "reps",
                        "failed_reps", "aggregate"});
  const auto version = detail::get_required<int>(j, "result", "format_version");
  if (version != 1) {
    throw DataError("result file " + path.string() + ": unsupported format_version " +
                    std::to_string(version));
  }
  ExperimentResult result;
  result.config = ExperimentConfig::from_json(j.at("config"));
  result.target_domain =
      detail::get_required<std::vector<std::string>>(j, "result", "target_domain");
  for (const auto& fj : j.at("failed_reps")) {
    detail::require_keys(fj, "result.failed_rep", {"rep", "error"});
    result.failures.push_back(FailedRep{
        detail::get_required<std::size_t>(fj, "failed_rep", "rep"),
        detail::get_required<std::string>(fj, "failed_rep", "error")});
  }
  json recomputed;
  if (result.config.kind == ExperimentKind::attribute_inference) {
    for (const auto& rj : j.at("reps")) {
      result.attribute_reps.push_back(detail::attribute_rep_from_json(rj));
    }
    result.attribute_aggregate = compute_attribute_aggregate(
        result.config, result.target_domain, result.attribute_reps);
    recomputed = detail::attribute_aggregate_to_json(result.attribute_aggregate);
  } else {
    for (const auto& rj : j.at("reps")) {
      result.record_reps.push_back(detail::record_rep_from_json(rj));
    }
    result.record_aggregate = compute_record_aggregate(result.config, result.record_reps);
    recomputed = detail::record_aggregate_to_json(result.record_aggregate);
  }
  if (recomputed != j.at("aggregate")) {
    throw DataError("result file " + path.string() +
                    " failed the self-consistency check: stored aggregates do not match the "
                    "per-repetition records");
  }
  return result;
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

/// Stable-format summary printed by the CLI. Attribute results mirror the
/// "Update Rule | Update Size | Single model | Two model" layout; record
/// results report policy TPR/FPR and top-k hits against the baseline.
inline std::string format_summary_table(const ExperimentResult& result) {
  std::ostringstream out;
  char line[256];
  if (result.config.kind == ExperimentKind::attribute_inference) {
    out << "Update Rule                    Update Size  Single model  Two model\n";
    const auto& agg = result.attribute_aggregate;
    for (const auto& r : agg.per_rule) {
      std::snprintf(line, sizeof(line), "%-30s %11zu  %12.4f  %9.4f\n",
                    (r.before + " -> " + r.after).c_str(), r.size, r.single_success,
                    r.two_success);
      out << line;
    }
    std::snprintf(line, sizeof(line), "%-30s %11zu  %12.4f  %9.4f\n", "(all rules)",
                  result.config.update_size, agg.single_success, agg.two_success);
    out << line;
    std::snprintf(line, sizeof(line), "guesses: %zu  failed reps: %zu\n", agg.n_guesses,
                  result.failures.size());
    out << line;
  } else {
    const auto& agg = result.record_aggregate;
    const char* policy = result.config.record_inference.policy.kind == GuessPolicy::Kind::top_k
                             ? "top_k"
                             : "positive_score";
    out << "Scorer        Policy              TPR     FPR  Top-k hits  Baseline\n";
    std::snprintf(line, sizeof(line), "%-13s %-15s %7.4f %7.4f  %10.2f  %8.2f\n", "two-model",
                  policy, agg.two_tpr_mean, agg.two_fpr_mean, agg.two_top_hits_mean,
                  agg.baseline_hits);
    out << line;
    std::snprintf(line, sizeof(line), "%-13s %-15s %7.4f %7.4f  %10.2f  %8.2f\n", "single-model",
                  policy, agg.single_tpr_mean, agg.single_fpr_mean, agg.single_top_hits_mean,
                  agg.baseline_hits);
    out << line;
    std::snprintf(line, sizeof(line),
                  "candidates: %zu  updated: %zu  auc(two): %.4f  auc(single): %.4f  failed "
                  "reps: %zu\n",
                  agg.candidates, agg.updated, agg.two_auc_mean, agg.single_auc_mean,
                  result.failures.size());
    out << line;
  }
  return out.str();
}

/// Writes the CSV companions of a result file next to `result_path`:
/// attribute runs get <stem>_summary.csv; record runs get mean-ROC CSVs for
/// both scorers plus a policy-level confusion CSV. Returns written paths.
inline std::vector<std::filesystem::path> write_result_tables(
    const ExperimentResult& result, const std::filesystem::path& result_path) {
  std::vector<std::filesystem::path> written;
  const auto stem = result_path.parent_path() / result_path.stem();
  auto open = [&](const std::filesystem::path& p) {
    std::ofstream out(p);
    if (!out) throw DataError("cannot write table file: " + p.string());
    return out;
  };
  if (result.config.kind == ExperimentKind::attribute_inference) {
    const auto path = std::filesystem::path(stem.string() + "_summary.csv");
    auto out = open(path);
    out << "before,after,update_size,n_guesses,single_success,two_success\n";
    const auto& agg = result.attribute_aggregate;
    for (const auto& r : agg.per_rule) {
      out << detail::csv_escape(r.before) << "," << detail::csv_escape(r.after) << "," << r.size
          << "," << r.n_guesses << "," << detail::format_double(r.single_success) << ","
          << detail::format_double(r.two_success) << "\n";
    }
    out << "(all),(all)," << result.config.update_size << "," << agg.n_guesses << ","
        << detail::format_double(agg.single_success) << ","
        << detail::format_double(agg.two_success) << "\n";
    written.push_back(path);
  } else {
    const auto& agg = result.record_aggregate;
    const auto roc_csv = [&](const std::vector<RocPoint>& roc, const std::string& suffix) {
      const auto path = std::filesystem::path(stem.string() + suffix);
      auto out = open(path);
      out << "k,fpr,tpr,baseline_hits\n";
      for (std::size_t k = 0; k < roc.size(); ++k) {
        out << k << "," << detail::format_double(roc[k].fpr) << ","
            << detail::format_double(roc[k].tpr) << ","
            << detail::format_double(random_baseline_hits(k, agg.updated, agg.candidates))
            << "\n";
      }
      written.push_back(path);
    };
    roc_csv(agg.two_roc_mean, "_two_roc.csv");
    roc_csv(agg.single_roc_mean, "_single_roc.csv");
    const auto path = std::filesystem::path(stem.string() + "_policy.csv");
    auto out = open(path);
    out << "scorer,tpr_mean,fpr_mean,top_k_hits_mean,baseline_hits\n";
    out << "two-model," << detail::format_double(agg.two_tpr_mean) << ","
        << detail::format_double(agg.two_fpr_mean) << ","
        << detail::format_double(agg.two_top_hits_mean) << ","
        << detail::format_double(agg.baseline_hits) << "\n";
    out << "single-model," << detail::format_double(agg.single_tpr_mean) << ","
        << detail::format_double(agg.single_fpr_mean) << ","
        << detail::format_double(agg.single_top_hits_mean) << ","
        << detail::format_double(agg.baseline_hits) << "\n";
    written.push_back(path);
  }
  return written;
}

}  // namespace updateleak
