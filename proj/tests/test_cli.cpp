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

// End-to-end checks of the command line tool. Each test drives the real
// binary (path injected at compile time through UPDATELEAK_CLI_PATH) with
// std::system and inspects exit codes, stdout, and the files it leaves
// behind.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <catch2/catch_amalgamated.hpp>

#include "test_support.hpp"
#include "updateleak/harness.hpp"
#include "updateleak/tabular.hpp"

using namespace updateleak;
using updateleak::testing::scratch_dir;

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;
};

CliResult run_cli(const std::string& args, const fs::path& dir) {
  static int counter = 0;
  const fs::path log = dir / ("cli_log_" + std::to_string(counter++) + ".txt");
  const std::string cmd =
      "\"" UPDATELEAK_CLI_PATH "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int raw = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream in(log);
  std::ostringstream buf;
  buf << in.rdbuf();
  r.output = buf.str();
  return r;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  return n;
}

void write_json(const json& j, const fs::path& p) {
  std::ofstream out(p);
  out << j.dump(2) << "\n";
}

// Shared fixture: a spec file plus a generated dataset and schema.
struct CliFixture {
  fs::path dir = scratch_dir("updateleak-cli");
  fs::path spec = dir / "spec.json";
  fs::path data = dir / "data.csv";
  fs::path schema = dir / "schema.json";

  CliFixture() {
    write_json(updateleak::testing::small_synthetic().to_json(), spec);
    const auto r = run_cli("gen-data --spec \"" + spec.string() + "\" --seed 11 --out \"" +
                               data.string() + "\" --schema-out \"" + schema.string() + "\"",
                           dir);
    REQUIRE(r.exit_code == 0);
  }
  ~CliFixture() { fs::remove_all(dir); }
};

}  // namespace

TEST_CASE("cli gen-data is deterministic in the seed") {
  CliFixture fx;
  const fs::path again = fx.dir / "again.csv";
  auto r = run_cli("gen-data --spec \"" + fx.spec.string() + "\" --seed 11 --out \"" +
                       again.string() + "\"",
                   fx.dir);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("wrote 600 records") != std::string::npos);
  CHECK(read_file(fx.data) == read_file(again));

  const fs::path other = fx.dir / "other.csv";
  r = run_cli("gen-data --spec \"" + fx.spec.string() + "\" --seed 12 --out \"" +
                  other.string() + "\"",
              fx.dir);
  CHECK(r.exit_code == 0);
  CHECK(read_file(fx.data) != read_file(other));

  // The emitted schema is loadable and names the synthetic attributes.
  const Schema loaded = Schema::load(fx.schema);
  CHECK(loaded.target().name == "t");
  CHECK(loaded.label().name == "y");
}

TEST_CASE("cli inspect reports row and value counts") {
  CliFixture fx;
  const auto r = run_cli(
      "inspect --data \"" + fx.data.string() + "\" --schema \"" + fx.schema.string() + "\"",
      fx.dir);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("rows kept: 600  dropped: 0") != std::string::npos);
  CHECK(r.output.find("target 't' value counts:") != std::string::npos);
  CHECK(r.output.find("label 'y' value counts:") != std::string::npos);
}

TEST_CASE("cli train, update, and attack round trip") {
  CliFixture fx;
  const fs::path orig_model = fx.dir / "orig.model";
  const fs::path new_model = fx.dir / "new.model";
  const fs::path upd_csv = fx.dir / "upd.csv";
  const fs::path receipt = fx.dir / "receipt.json";

  auto r = run_cli("train --data \"" + fx.data.string() + "\" --schema \"" +
                       fx.schema.string() + "\" --family logistic --seed 5 --out \"" +
                       orig_model.string() + "\"",
                   fx.dir);
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("train_accuracy=") != std::string::npos);
  CHECK(fs::exists(orig_model));
  CHECK(fs::exists(fs::path(orig_model.string() + ".stats.json")));

  r = run_cli("update --data \"" + fx.data.string() + "\" --schema \"" + fx.schema.string() +
                  "\" --before a --after c --size 10 --seed 9 --out \"" + upd_csv.string() +
                  "\" --receipt-out \"" + receipt.string() + "\"",
              fx.dir);
  REQUIRE(r.exit_code == 0);
  json receipt_json;
  std::ifstream(receipt) >> receipt_json;
  CHECK(receipt_json.at("attribute") == "t");
  CHECK(receipt_json.at("updated_ids").size() == 10);

  r = run_cli("train --data \"" + upd_csv.string() + "\" --schema \"" + fx.schema.string() +
                  "\" --family logistic --seed 5 --out \"" + new_model.string() + "\"",
              fx.dir);
  REQUIRE(r.exit_code == 0);

  // Two-model attack over the updated table; stats sidecar found implicitly.
  r = run_cli("attack --mode two-model --schema \"" + fx.schema.string() + "\" --data \"" +
                  upd_csv.string() + "\" --model-new \"" + new_model.string() +
                  "\" --model-old \"" + orig_model.string() + "\"",
              fx.dir);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("record_id  current      guess        score") != std::string::npos);

  // Record ranking with a scores CSV: one row per record plus a header.
  const fs::path scores = fx.dir / "scores.csv";
  r = run_cli("attack --mode record --schema \"" + fx.schema.string() + "\" --data \"" +
                  fx.data.string() + "\" --model-new \"" + new_model.string() +
                  "\" --model-old \"" + orig_model.string() + "\" --top 5 --scores-out \"" +
                  scores.string() + "\"",
              fx.dir);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("rank  record_id  score") != std::string::npos);
  CHECK(count_lines(scores) == 601);

  // Two-model modes refuse to run without the original model.
  r = run_cli("attack --mode record --schema \"" + fx.schema.string() + "\" --data \"" +
                  fx.data.string() + "\" --model-new \"" + new_model.string() + "\"",
              fx.dir);
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("--model-old is required") != std::string::npos);
}

TEST_CASE("cli experiment and report round trip") {
  CliFixture fx;

  ExperimentConfig attr_cfg;
  attr_cfg.kind = ExperimentKind::attribute_inference;
  attr_cfg.base_seed = 42;
  attr_cfg.repetitions = 2;
  attr_cfg.data.synthetic = updateleak::testing::small_synthetic();
  attr_cfg.split_train = 400;
  attr_cfg.split_test = 100;
  attr_cfg.train.family = ModelFamily::logistic;
  attr_cfg.rules = {UpdateRule{"", "a", "c", 0}};
  attr_cfg.update_size = 5;
  const fs::path attr_cfg_path = fx.dir / "attr.json";
  write_json(attr_cfg.to_json(), attr_cfg_path);

  const fs::path attr_result = fx.dir / "attr_result.json";
  auto r = run_cli("experiment --config \"" + attr_cfg_path.string() + "\" --out \"" +
                       attr_result.string() + "\"",
                   fx.dir);
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("Update Rule") != std::string::npos);
  CHECK(r.output.find("a -> c") != std::string::npos);
  CHECK(fs::exists(attr_result));
  CHECK(fs::exists(fx.dir / "attr_result_summary.csv"));

  r = run_cli("report --result \"" + attr_result.string() + "\"", fx.dir);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("(all rules)") != std::string::npos);

  // Attribute results have no ROC to export.
  r = run_cli("report --result \"" + attr_result.string() + "\" --roc-csv \"" +
                  (fx.dir / "nope.csv").string() + "\"",
              fx.dir);
  CHECK(r.exit_code == 1);

  ExperimentConfig rec_cfg = attr_cfg;
  rec_cfg.kind = ExperimentKind::record_inference;
  rec_cfg.update_size = 1;
  rec_cfg.record_inference.candidates = 60;
  rec_cfg.record_inference.updated = 12;
  rec_cfg.record_inference.policy = GuessPolicy::top_k(12);
  const fs::path rec_cfg_path = fx.dir / "rec.json";
  write_json(rec_cfg.to_json(), rec_cfg_path);

  const fs::path rec_result = fx.dir / "rec_result.json";
  r = run_cli("experiment --config \"" + rec_cfg_path.string() + "\" --out \"" +
                  rec_result.string() + "\"",
              fx.dir);
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("two-model") != std::string::npos);
  CHECK(fs::exists(fx.dir / "rec_result_two_roc.csv"));
  CHECK(fs::exists(fx.dir / "rec_result_single_roc.csv"));
  CHECK(fs::exists(fx.dir / "rec_result_policy.csv"));

  const fs::path roc_csv = fx.dir / "roc.csv";
  r = run_cli("report --result \"" + rec_result.string() + "\" --roc-csv \"" +
                  roc_csv.string() + "\"",
              fx.dir);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("low-FPR excerpt") != std::string::npos);
  CHECK(count_lines(roc_csv) == 62);  // header + k = 0..60

  // Rerunning the experiment reproduces the result file byte for byte.
  const fs::path rec_result2 = fx.dir / "rec_result2.json";
  r = run_cli("experiment --config \"" + rec_cfg_path.string() + "\" --out \"" +
                  rec_result2.string() + "\" --workers 2",
              fx.dir);
  REQUIRE(r.exit_code == 0);
  CHECK(read_file(rec_result) == read_file(rec_result2));

  // --fresh-seed changes the seed policy and therefore the outcome file.
  const fs::path fresh_result = fx.dir / "fresh_result.json";
  r = run_cli("experiment --config \"" + attr_cfg_path.string() + "\" --out \"" +
                  fresh_result.string() + "\" --fresh-seed",
              fx.dir);
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("seed policy: fresh_seed") != std::string::npos);
  CHECK(read_file(fresh_result) != read_file(attr_result));
}

TEST_CASE("cli exit codes distinguish failure classes") {
  CliFixture fx;

  SECTION("missing config file is a data error") {
    const auto r =
        run_cli("experiment --config \"" + (fx.dir / "absent.json").string() + "\" --out \"" +
                    (fx.dir / "out.json").string() + "\"",
                fx.dir);
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("config file not found") != std::string::npos);
  }
  SECTION("malformed config json is a config error") {
    const fs::path bad = fx.dir / "bad.json";
    std::ofstream(bad) << "{ not json";
    const auto r = run_cli("experiment --config \"" + bad.string() + "\" --out \"" +
                               (fx.dir / "out.json").string() + "\"",
                           fx.dir);
    CHECK(r.exit_code == 1);
  }
  SECTION("unknown config key is a config error") {
    ExperimentConfig cfg;
    cfg.kind = ExperimentKind::attribute_inference;
    cfg.base_seed = 1;
    cfg.repetitions = 1;
    cfg.data.synthetic = updateleak::testing::small_synthetic();
    cfg.split_train = 400;
    cfg.rules = {UpdateRule{"", "a", "c", 0}};
    cfg.update_size = 2;
    json j = cfg.to_json();
    j["typo"] = 1;
    const fs::path bad = fx.dir / "typo.json";
    write_json(j, bad);
    const auto r = run_cli("experiment --config \"" + bad.string() + "\" --out \"" +
                               (fx.dir / "out.json").string() + "\"",
                           fx.dir);
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("unknown key") != std::string::npos);
  }
  SECTION("missing data file is a data error") {
    const auto r = run_cli("train --data \"" + (fx.dir / "absent.csv").string() +
                               "\" --schema \"" + fx.schema.string() + "\" --out \"" +
                               (fx.dir / "m.model").string() + "\"",
                           fx.dir);
    CHECK(r.exit_code == 2);
  }
  SECTION("divergent training is a training error") {
    const auto r = run_cli("train --data \"" + fx.data.string() + "\" --schema \"" +
                               fx.schema.string() +
                               "\" --family mlp --hidden 8 --lr 1e9 --epochs 5 --out \"" +
                               (fx.dir / "m.model").string() + "\"",
                           fx.dir);
    CHECK(r.exit_code == 3);
    CHECK(r.output.find("diverged") != std::string::npos);
  }
  SECTION("bad command line is a usage error") {
    const auto r = run_cli("no-such-subcommand", fx.dir);
    CHECK(r.exit_code == 1);
  }
}
