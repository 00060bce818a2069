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

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "updateleak/attack.hpp"
#include "updateleak/error.hpp"
#include "updateleak/harness.hpp"
#include "updateleak/learn.hpp"
#include "updateleak/metrics.hpp"
#include "updateleak/tabular.hpp"

namespace fs = std::filesystem;
using namespace updateleak;

namespace {

json read_json_file(const fs::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw DataError(std::string(what) + " file not found: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string(what) + " file " + path.string() + ": " + e.what());
  }
  return j;
}

void write_stats_sidecar(const FeatureStats& stats, const fs::path& path) {
  json j;
  j["mean"] = stats.mean;
  j["stddev"] = stats.stddev;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write stats file: " + path.string());
  out << j.dump(2) << "\n";
}

FeatureStats load_stats_sidecar(const fs::path& path, const Schema& schema) {
  const json j = read_json_file(path, "stats");
  detail::require_keys(j, "stats", {"mean", "stddev"});
  FeatureStats stats;
  stats.mean = detail::get_required<std::vector<double>>(j, "stats", "mean");
  stats.stddev = detail::get_required<std::vector<double>>(j, "stats", "stddev");
  if (stats.mean.size() != schema.size() || stats.stddev.size() != schema.size()) {
    throw DataError("stats file " + path.string() + " does not match the schema size");
  }
  return stats;
}

struct GenDataOpts {
  std::string spec_path;
  std::string out_path;
  std::string schema_out;
  std::uint64_t seed = 0;
};

void run_gen_data(const GenDataOpts& o) {
  const auto spec = SyntheticSpec::from_json(read_json_file(o.spec_path, "spec"));
  const auto dataset = generate_synthetic(spec, o.seed);
  write_csv(dataset, o.out_path);
  std::cout << "gen-data: wrote " << dataset.size() << " records to " << o.out_path
            << " (seed " << o.seed << ")\n";
  if (!o.schema_out.empty()) {
    dataset.schema().save(o.schema_out);
    std::cout << "gen-data: wrote schema to " << o.schema_out << "\n";
  }
}

struct InspectOpts {
  std::string data_path;
  std::string schema_path;
};

void run_inspect(const InspectOpts& o) {
  const Schema schema = Schema::load(o.schema_path);
  const auto loaded = load_csv(o.data_path, schema);
  const Dataset& d = loaded.dataset;
  std::cout << "inspect: " << o.data_path << "\n";
  std::cout << "rows kept: " << d.size() << "  dropped: " << loaded.dropped_rows << "\n";
  std::cout << "attributes:\n";
  for (std::size_t a = 0; a < schema.size(); ++a) {
    const auto& spec = schema.attribute(a);
    std::cout << "  " << spec.name << "  " << to_string(spec.kind) << "  "
              << to_string(spec.role);
    if (spec.kind == AttributeKind::categorical) {
      std::cout << "  |domain|=" << spec.domain.size();
    }
    std::cout << "\n";
  }
  auto print_counts = [&](std::size_t attr) {
    const auto& spec = schema.attribute(attr);
    std::vector<std::size_t> counts(spec.domain.size(), 0);
    for (const auto& rec : d.records()) {
      ++counts[static_cast<std::size_t>(rec.category_index(attr))];
    }
    for (std::size_t i = 0; i < counts.size(); ++i) {
      std::printf("  %-24s %8zu  (%.2f%%)\n", spec.domain[i].c_str(), counts[i],
                  100.0 * static_cast<double>(counts[i]) / static_cast<double>(d.size()));
    }
  };
  std::cout << "target '" << schema.target().name << "' value counts:\n";
  print_counts(schema.target_index());
  std::cout << "label '" << schema.label().name << "' value counts:\n";
  print_counts(schema.label_index());
}

struct TrainOpts {
  std::string data_path;
  std::string schema_path;
  std::string test_path;
  std::string out_path;
  std::string family = "logistic";
  std::vector<std::size_t> hidden = {256, 256};
  double l2 = 1e-4;
  std::size_t epochs = 200;
  double tolerance = 1e-6;
  double lr = 0.05;
  std::size_t batch = 32;
  double momentum = 0.0;
  std::uint64_t seed = 0;
};

void run_train(const TrainOpts& o) {
  const Schema schema = Schema::load(o.schema_path);
  const Dataset train_data = load_csv(o.data_path, schema).dataset;
  const FeatureStats stats = compute_feature_stats(train_data);
  const EncodedDataset train_enc = encode_dataset(train_data, stats);
  EncodedDataset test_enc;
  const EncodedDataset* test = nullptr;
  if (!o.test_path.empty()) {
    test_enc = encode_dataset(load_csv(o.test_path, schema).dataset, stats);
    test = &test_enc;
  }
  TrainConfig cfg;
  cfg.family = model_family_from_string(o.family);
  cfg.hidden_layers = o.hidden;
  cfg.l2_strength = o.l2;
  cfg.max_epochs = o.epochs;
  cfg.tolerance = o.tolerance;
  cfg.learning_rate = o.lr;
  cfg.batch_size = o.batch;
  cfg.momentum = o.momentum;
  cfg.seed = o.seed;

  const Model model = cfg.family == ModelFamily::logistic
                          ? train_logistic(train_enc, cfg, test)
                          : train_mlp(train_enc, cfg, test);
  model.save(o.out_path);
  write_stats_sidecar(stats, o.out_path + ".stats.json");
  const auto& meta = model.meta();
  std::cout << "train: family=" << to_string(cfg.family) << " n=" << train_data.size()
            << " d=" << model.input_dim() << " seed=" << o.seed << "\n";
  std::printf("epochs=%zu final_loss=%.6f train_accuracy=%.4f", meta.epochs, meta.final_loss,
              meta.train_accuracy);
  if (meta.test_accuracy) std::printf(" test_accuracy=%.4f", *meta.test_accuracy);
  std::printf("\n");
  std::cout << "wrote model to " << o.out_path << " and stats to " << o.out_path
            << ".stats.json\n";
}

struct UpdateOpts {
  std::string data_path;
  std::string schema_path;
  std::string out_path;
  std::string receipt_out;
  std::string attribute;
  std::string before;
  std::string after;
  std::size_t size = 1;
  std::uint64_t seed = 0;
};

void run_update(const UpdateOpts& o) {
  const Schema schema = Schema::load(o.schema_path);
  const Dataset data = load_csv(o.data_path, schema).dataset;
  UpdateRule rule;
  rule.attribute = o.attribute.empty() ? schema.target().name : o.attribute;
  rule.before = o.before;
  rule.after = o.after;
  rule.count = o.size;
  const auto result = apply_update_batch(data, {rule}, o.seed);
  write_csv(result.dataset, o.out_path);
  std::cout << "update: " << rule.before << " -> " << rule.after << " on " << rule.count
            << " records (seed " << o.seed << "), wrote " << o.out_path << "\n";
  if (!o.receipt_out.empty()) {
    const auto& receipt = result.receipts.front();
    json j;
    j["attribute"] = receipt.rule.attribute;
    j["before"] = receipt.rule.before;
    j["after"] = receipt.rule.after;
    j["count"] = receipt.rule.count;
    j["updated_ids"] = receipt.updated_ids;
    std::ofstream out(o.receipt_out);
    if (!out) throw DataError("cannot write receipt file: " + o.receipt_out);
    out << j.dump(2) << "\n";
    std::cout << "update: wrote receipt to " << o.receipt_out << "\n";
  }
}

struct AttackOpts {
  std::string mode = "two-model";
  std::string schema_path;
  std::string data_path;
  std::string model_new_path;
  std::string model_old_path;
  std::string stats_path;
  std::string scores_out;
  std::size_t top = 20;
  bool show_table = false;
};

void run_attack(const AttackOpts& o) {
  const bool needs_old = o.mode == "two-model" || o.mode == "record";
  if (needs_old && o.model_old_path.empty()) {
    throw ConfigError("attack: --model-old is required for mode '" + o.mode + "'");
  }
  const Schema schema = Schema::load(o.schema_path);
  const Model model_new = Model::load(o.model_new_path);
  const FeatureStats stats = load_stats_sidecar(
      o.stats_path.empty() ? o.model_new_path + ".stats.json" : o.stats_path, schema);
  const Dataset data = load_csv(o.data_path, schema).dataset;
  const auto candidates = candidate_values(schema);

  if (o.mode == "single" || o.mode == "two-model") {
    Model model_old;
    if (needs_old) model_old = Model::load(o.model_old_path);
    std::cout << "record_id  current      guess        score\n";
    for (const auto& rec : data.records()) {
      const AttackGuess guess =
          o.mode == "single"
              ? single_model_attack(model_new, rec, schema, stats, candidates)
              : two_model_attack(model_old, model_new, rec, schema, stats, candidates);
      std::printf("%-10lld %-12s %-12s %9.6f\n", static_cast<long long>(rec.id),
                  data.target_value(rec).c_str(), guess.guess.c_str(), guess.score);
      if (o.show_table) {
        for (std::size_t i = 0; i < candidates.size(); ++i) {
          std::printf("    %-12s conf_new=%.6f", candidates[i].c_str(), guess.table.conf_new[i]);
          if (guess.table.conf_old) std::printf(" conf_old=%.6f", (*guess.table.conf_old)[i]);
          std::printf("\n");
        }
      }
    }
    return;
  }
  if (o.mode != "record" && o.mode != "record-single") {
    throw ConfigError("attack: unknown mode '" + o.mode + "'");
  }
  std::vector<RecordScore> scores;
  if (o.mode == "record") {
    const Model model_old = Model::load(o.model_old_path);
    scores = record_inference_scores(model_old, model_new, data.records(), schema, stats);
  } else {
    scores = single_model_record_scores(model_new, data.records(), schema, stats);
  }
  std::cout << "rank  record_id  score\n";
  for (std::size_t i = 0; i < std::min(o.top, scores.size()); ++i) {
    std::printf("%-5zu %-10lld %12.9f\n", i + 1, static_cast<long long>(scores[i].record_id),
                scores[i].score);
  }
  if (!o.scores_out.empty()) {
    std::ofstream out(o.scores_out);
    if (!out) throw DataError("cannot write scores file: " + o.scores_out);
    out << "rank,record_id,score\n";
    for (std::size_t i = 0; i < scores.size(); ++i) {
      out << i + 1 << "," << scores[i].record_id << ","
          << detail::format_double(scores[i].score) << "\n";
    }
    std::cout << "attack: wrote " << scores.size() << " scores to " << o.scores_out << "\n";
  }
}

struct ExperimentOpts {
  std::string config_path;
  std::string out_path;
  std::size_t workers = 0;
  bool fresh_seed = false;
};

void run_experiment_cmd(const ExperimentOpts& o) {
  ExperimentConfig cfg = ExperimentConfig::load(o.config_path);
  if (o.fresh_seed) cfg.seed_policy = SeedPolicy::fresh_seed;
  std::cout << "experiment: " << to_string(cfg.kind) << ", " << cfg.repetitions
            << " repetitions, base_seed=" << cfg.base_seed << " (rep seeds " << cfg.base_seed
            << ".." << cfg.base_seed + cfg.repetitions - 1 << ")\n";
  std::cout << "seed policy: " << to_string(cfg.seed_policy)
            << "  data_seed=" << derive_seed(cfg.base_seed, kSeedTagData)
            << "  split_seed=" << derive_seed(cfg.base_seed, kSeedTagSplit)
            << "  workers=" << resolve_workers(o.workers, cfg.workers) << "\n";
  const ExperimentResult result = run_experiment(cfg, o.workers);
  persist_result(result, o.out_path);
  std::cout << format_summary_table(result);
  std::cout << "wrote result to " << o.out_path << "\n";
  for (const auto& p : write_result_tables(result, o.out_path)) {
    std::cout << "wrote table to " << p.string() << "\n";
  }
}

struct ReportOpts {
  std::string result_path;
  std::string roc_csv;
  double low_fpr = 0.1;
};

void run_report(const ReportOpts& o) {
  const ExperimentResult result = load_result(o.result_path);
  std::cout << format_summary_table(result);
  if (result.config.kind == ExperimentKind::attribute_inference) {
    if (!o.roc_csv.empty()) {
      throw ConfigError("report: attribute-inference results carry no ROC data");
    }
    return;
  }
  const auto& agg = result.record_aggregate;
  std::printf("low-FPR excerpt (two-model mean ROC, fpr <= %.3f):\n", o.low_fpr);
  std::cout << "k      fpr      tpr      baseline_hits\n";
  std::size_t last = 0;
  while (last + 1 < agg.two_roc_mean.size() && agg.two_roc_mean[last + 1].fpr <= o.low_fpr) {
    ++last;
  }
  const std::size_t rows = 20;
  const std::size_t step = last / rows + 1;
  for (std::size_t k = 0; k <= last; k += step) {
    std::printf("%-6zu %.5f  %.5f  %.3f\n", k, agg.two_roc_mean[k].fpr, agg.two_roc_mean[k].tpr,
                random_baseline_hits(k, agg.updated, agg.candidates));
  }
  if (!o.roc_csv.empty()) {
    std::ofstream out(o.roc_csv);
    if (!out) throw DataError("cannot write ROC file: " + o.roc_csv);
    out << "k,fpr,tpr,baseline_hits\n";
    for (std::size_t k = 0; k < agg.two_roc_mean.size(); ++k) {
      out << k << "," << detail::format_double(agg.two_roc_mean[k].fpr) << ","
          << detail::format_double(agg.two_roc_mean[k].tpr) << ","
          << detail::format_double(random_baseline_hits(k, agg.updated, agg.candidates)) << "\n";
    }
    std::cout << "wrote ROC CSV to " << o.roc_csv << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"updateleak: attribute and record inference attacks on model updates"};
  app.require_subcommand(1);

  GenDataOpts gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset from a spec file");
  gen_cmd->add_option("--spec", gen.spec_path, "Synthetic spec JSON")->required();
  gen_cmd->add_option("--seed", gen.seed, "Generation seed");
  gen_cmd->add_option("--out", gen.out_path, "Output CSV path")->required();
  gen_cmd->add_option("--schema-out", gen.schema_out, "Also write the schema JSON here");
  gen_cmd->callback([&] { run_gen_data(gen); });

  InspectOpts ins;
  auto* ins_cmd = app.add_subcommand("inspect", "Summarize a CSV dataset against a schema");
  ins_cmd->add_option("--data", ins.data_path, "CSV dataset")->required();
  ins_cmd->add_option("--schema", ins.schema_path, "Schema JSON")->required();
  ins_cmd->callback([&] { run_inspect(ins); });

  TrainOpts tr;
  auto* tr_cmd = app.add_subcommand("train", "Train a model on a CSV dataset");
  tr_cmd->add_option("--data", tr.data_path, "Training CSV")->required();
  tr_cmd->add_option("--schema", tr.schema_path, "Schema JSON")->required();
  tr_cmd->add_option("--test", tr.test_path, "Optional held-out CSV for test accuracy");
  tr_cmd->add_option("--family", tr.family, "Model family: logistic | mlp")
      ->check(CLI::IsMember({"logistic", "mlp"}));
  tr_cmd->add_option("--hidden", tr.hidden, "MLP hidden layer widths")->delimiter(',');
  tr_cmd->add_option("--l2", tr.l2, "L2 regularization strength");
  tr_cmd->add_option("--epochs", tr.epochs, "Max epochs / iterations");
  tr_cmd->add_option("--tolerance", tr.tolerance, "Logistic gradient stop tolerance");
  tr_cmd->add_option("--lr", tr.lr, "MLP learning rate");
  tr_cmd->add_option("--batch", tr.batch, "MLP batch size");
  tr_cmd->add_option("--momentum", tr.momentum, "MLP momentum");
  tr_cmd->add_option("--seed", tr.seed, "Training seed");
  tr_cmd->add_option("--out", tr.out_path, "Model output path")->required();
  tr_cmd->callback([&] { run_train(tr); });

  UpdateOpts up;
  auto* up_cmd = app.add_subcommand("update", "Apply an update rule to a CSV dataset");
  up_cmd->add_option("--data", up.data_path, "Input CSV")->required();
  up_cmd->add_option("--schema", up.schema_path, "Schema JSON")->required();
  up_cmd->add_option("--attribute", up.attribute, "Attribute (defaults to the target)");
  up_cmd->add_option("--before", up.before, "Value to change from")->required();
  up_cmd->add_option("--after", up.after, "Value to change to")->required();
  up_cmd->add_option("--size", up.size, "How many records to update");
  up_cmd->add_option("--seed", up.seed, "Sampling seed");
  up_cmd->add_option("--out", up.out_path, "Updated CSV path")->required();
  up_cmd->add_option("--receipt-out", up.receipt_out, "Ground-truth receipt JSON path");
  up_cmd->callback([&] { run_update(up); });

  AttackOpts at;
  auto* at_cmd = app.add_subcommand("attack", "Run an attack against saved models");
  at_cmd->add_option("--mode", at.mode, "single | two-model | record | record-single")
      ->check(CLI::IsMember({"single", "two-model", "record", "record-single"}));
  at_cmd->add_option("--schema", at.schema_path, "Schema JSON")->required();
  at_cmd->add_option("--data", at.data_path, "Records to attack (CSV)")->required();
  at_cmd->add_option("--model-new", at.model_new_path, "Updated model path")->required();
  at_cmd->add_option("--model-old", at.model_old_path, "Original model path");
  at_cmd->add_option("--stats", at.stats_path,
                     "Feature stats JSON (default: <model-new>.stats.json)");
  at_cmd->add_option("--scores-out", at.scores_out, "Write full ranked scores CSV here");
  at_cmd->add_option("--top", at.top, "How many ranked records to print");
  at_cmd->add_flag("--table", at.show_table, "Print per-candidate confidence tables");
  at_cmd->callback([&] { run_attack(at); });

  ExperimentOpts ex;
  auto* ex_cmd = app.add_subcommand("experiment", "Run a config-driven experiment");
  ex_cmd->add_option("--config", ex.config_path, "Experiment config JSON")->required();
  ex_cmd->add_option("--out", ex.out_path, "Result JSON path")->required();
  ex_cmd->add_option("--workers", ex.workers, "Parallel repetition workers");
  ex_cmd->add_flag("--fresh-seed", ex.fresh_seed,
                   "Retrain the updated model with a fresh seed instead of the original's");
  ex_cmd->callback([&] { run_experiment_cmd(ex); });

  ReportOpts rp;
  auto* rp_cmd = app.add_subcommand("report", "Summarize a saved result file");
  rp_cmd->add_option("--result", rp.result_path, "Result JSON path")->required();
  rp_cmd->add_option("--roc-csv", rp.roc_csv, "Write the two-model mean ROC CSV here");
  rp_cmd->add_option("--low-fpr", rp.low_fpr, "Low-FPR excerpt threshold");
  rp_cmd->callback([&] { run_report(rp); });

  try {
    app.parse(argc, argv);
    return 0;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const TrainError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
