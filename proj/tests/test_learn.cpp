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

#include "updateleak/learn.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "test_support.hpp"
#include "updateleak/error.hpp"
#include "updateleak/rng.hpp"
#include "updateleak/tabular.hpp"

using namespace updateleak;
using updateleak::testing::scratch_dir;

namespace {

EncodedDataset small_encoded(std::size_t n, std::uint64_t seed) {
  SyntheticSpec spec = updateleak::testing::small_synthetic();
  spec.n = n;
  const Dataset data = generate_synthetic(spec, seed);
  return encode_dataset(data, compute_feature_stats(data));
}

bool layers_identical(const std::vector<Layer>& a, const std::vector<Layer>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t l = 0; l < a.size(); ++l) {
    if (a[l].W.rows() != b[l].W.rows() || a[l].W.cols() != b[l].W.cols()) return false;
    if (a[l].b.size() != b[l].b.size()) return false;
    if ((a[l].W.array() != b[l].W.array()).any()) return false;
    if ((a[l].b.array() != b[l].b.array()).any()) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("stable sigmoid and softplus match their asymptotics") {
  CHECK(detail::sigmoid(0.0) == 0.5);
  CHECK(detail::sigmoid(800.0) == 1.0);
  CHECK(detail::sigmoid(-800.0) == Catch::Approx(0.0).margin(1e-300));
  CHECK(std::isfinite(detail::softplus(800.0)));
  CHECK(detail::softplus(800.0) == Catch::Approx(800.0));
  CHECK(detail::softplus(-800.0) == Catch::Approx(0.0).margin(1e-300));
  CHECK(detail::softplus(0.0) == Catch::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  SECTION("defaults pass") { CHECK_NOTHROW(cfg.validate()); }
  SECTION("negative l2") {
    cfg.l2_strength = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SECTION("zero epochs") {
    cfg.max_epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SECTION("mlp needs positive learning rate") {
    cfg.family = ModelFamily::mlp;
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SECTION("mlp needs positive batch size") {
    cfg.family = ModelFamily::mlp;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SECTION("mlp momentum must stay below one") {
    cfg.family = ModelFamily::mlp;
    cfg.momentum = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SECTION("mlp rejects zero-width hidden layer") {
    cfg.family = ModelFamily::mlp;
    cfg.hidden_layers = {8, 0};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
}

TEST_CASE("logistic training matches an independent gradient descent oracle") {
  const auto train = small_encoded(300, 21);

  TrainConfig cfg;
  cfg.family = ModelFamily::logistic;
  cfg.l2_strength = 1e-2;
  cfg.tolerance = 1e-10;
  cfg.max_epochs = 500;
  const Model model = train_logistic(train, cfg);

  // Oracle: plain full-batch gradient descent on the same objective, long
  // enough that it converges on its own. The objective is strictly convex,
  // so both must land on the same unique minimizer.
  const LogisticObjective obj(train.features, train.labels, cfg.l2_strength);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(obj.dim());
  for (int iter = 0; iter < 50000; ++iter) {
    theta -= 0.5 * obj.gradient(theta);
  }
  REQUIRE(obj.gradient(theta).lpNorm<Eigen::Infinity>() < 1e-8);

  const Eigen::RowVectorXd w = model.layers()[0].W.row(0);
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    CHECK(w(i) == Catch::Approx(theta(i)).margin(1e-6));
  }
  CHECK(model.layers()[0].b(0) == Catch::Approx(theta(w.size())).margin(1e-6));
}

TEST_CASE("logistic training converges to a stationary point") {
  const auto train = small_encoded(500, 3);
  TrainConfig cfg;
  cfg.tolerance = 1e-8;
  const Model model = train_logistic(train, cfg);

  const LogisticObjective obj(train.features, train.labels, cfg.l2_strength);
  Eigen::VectorXd theta(obj.dim());
  theta.head(theta.size() - 1) = model.layers()[0].W.row(0).transpose();
  theta(theta.size() - 1) = model.layers()[0].b(0);
  CHECK(obj.gradient(theta).lpNorm<Eigen::Infinity>() < 1e-8);
  CHECK(model.meta().final_loss == Catch::Approx(obj.loss(theta)).epsilon(1e-12));
}

TEST_CASE("logistic training is deterministic and seed-independent") {
  const auto train = small_encoded(400, 8);
  TrainConfig cfg;
  cfg.seed = 1;
  const Model a = train_logistic(train, cfg);
  cfg.seed = 999;  // seed only lands in the metadata
  const Model b = train_logistic(train, cfg);
  CHECK(layers_identical(a.layers(), b.layers()));
  CHECK(a.meta().final_loss == b.meta().final_loss);
}

TEST_CASE("logistic training restarted at the optimum stays put") {
  const auto train = small_encoded(400, 8);
  TrainConfig cfg;
  const Model a = train_logistic(train, cfg);
  Eigen::VectorXd warm(a.layers()[0].W.cols() + 1);
  warm.head(warm.size() - 1) = a.layers()[0].W.row(0).transpose();
  warm(warm.size() - 1) = a.layers()[0].b(0);
  const Model b = train_logistic(train, cfg, nullptr, &warm);
  CHECK(b.meta().epochs == 0);
  CHECK(layers_identical(a.layers(), b.layers()));
}

TEST_CASE("logistic loss history is monotone nonincreasing") {
  const auto train = small_encoded(300, 4);
  TrainConfig cfg;
  std::vector<double> history;
  train_logistic(train, cfg, nullptr, nullptr, &history);
  REQUIRE(history.size() >= 2);
  for (std::size_t i = 1; i < history.size(); ++i) {
    CHECK(history[i] <= history[i - 1] + 1e-15);
  }
}

TEST_CASE("logistic rejects non-binary labels and bad features") {
  EncodedDataset data = small_encoded(50, 2);
  SECTION("three classes") {
    data.label_values = {"a", "b", "c"};
    CHECK_THROWS_AS(train_logistic(data, TrainConfig{}), TrainError);
  }
  SECTION("non-finite feature") {
    data.features(0, 0) = std::nan("");
    CHECK_THROWS_AS(train_logistic(data, TrainConfig{}), TrainError);
  }
  SECTION("empty set") {
    EncodedDataset empty;
    empty.label_values = {"no", "yes"};
    CHECK_THROWS_AS(train_logistic(empty, TrainConfig{}), TrainError);
  }
}

TEST_CASE("predict_proba returns a distribution for both families") {
  const auto train = small_encoded(300, 6);
  TrainConfig cfg;
  const Model logistic = train_logistic(train, cfg);

  cfg.family = ModelFamily::mlp;
  cfg.hidden_layers = {8};
  cfg.max_epochs = 5;
  cfg.seed = 3;
  const Model mlp = train_mlp(train, cfg);

  std::vector<double> row(static_cast<std::size_t>(train.features.cols()));
  for (Eigen::Index c = 0; c < train.features.cols(); ++c) {
    row[static_cast<std::size_t>(c)] = train.features(0, c);
  }
  for (const Model* m : {&logistic, &mlp}) {
    const auto probs = m->predict_proba(row);
    REQUIRE(probs.size() == 2);
    CHECK(probs[0] >= 0.0);
    CHECK(probs[1] >= 0.0);
    CHECK(probs[0] + probs[1] == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(m->confidence_on_label(row, "pos") == Catch::Approx(probs[1]));
    CHECK(m->confidence_on_label(row, "neg") == Catch::Approx(probs[0]));
    CHECK_THROWS_AS(m->confidence_on_label(row, "maybe"), DataError);
  }
  row.pop_back();
  CHECK_THROWS_AS(logistic.predict_proba(row), DataError);
}

TEST_CASE("logistic learns the planted signal") {
  const auto train = small_encoded(2000, 14);
  const auto test = small_encoded(1000, 15);
  TrainConfig cfg;
  const Model model = train_logistic(train, cfg, &test);
  // The planted table separates classes well; far above the 50% coin and the
  // majority-class share (roughly 58%).
  CHECK(model.meta().train_accuracy > 0.7);
  REQUIRE(model.meta().test_accuracy.has_value());
  CHECK(*model.meta().test_accuracy > 0.7);
}

TEST_CASE("mlp analytic gradients agree with central finite differences") {
  auto rng = make_rng(42);
  for (int net = 0; net < 5; ++net) {
    const std::size_t d = 3 + net;
    const std::size_t classes = 2 + net % 2;
    auto layers = init_mlp_layers(d, {4, 3}, classes, 100 + static_cast<std::uint64_t>(net));
    // Fresh layers carry all-zero biases, and a row that dies in layer 0
    // then hits later ReLUs at exactly zero, where central differences
    // straddle the kink. Nudge every bias off zero first.
    for (auto& layer : layers) {
      for (Eigen::Index r = 0; r < layer.b.size(); ++r) {
        layer.b(r) = 0.4 * uniform_real01(rng) - 0.2;
      }
    }

    Eigen::MatrixXd X(6, static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      for (Eigen::Index j = 0; j < X.cols(); ++j) {
        X(i, j) = 2.0 * uniform_real01(rng) - 1.0;
      }
    }
    std::vector<int> y(6);
    for (auto& v : y) v = static_cast<int>(uniform_below(rng, classes));

    const double lambda = 1e-3;
    const auto analytic = mlp_loss_and_grad(layers, X, y, lambda);
    const double h = 1e-6;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      for (Eigen::Index r = 0; r < layers[l].W.rows(); ++r) {
        for (Eigen::Index c = 0; c < layers[l].W.cols(); ++c) {
          const double keep = layers[l].W(r, c);
          layers[l].W(r, c) = keep + h;
          const double up = mlp_loss_and_grad(layers, X, y, lambda).loss;
          layers[l].W(r, c) = keep - h;
          const double dn = mlp_loss_and_grad(layers, X, y, lambda).loss;
          layers[l].W(r, c) = keep;
          const double numeric = (up - dn) / (2 * h);
          CHECK(analytic.grads[l].W(r, c) ==
                Catch::Approx(numeric).margin(1e-5).epsilon(1e-5));
        }
      }
      for (Eigen::Index r = 0; r < layers[l].b.size(); ++r) {
        const double keep = layers[l].b(r);
        layers[l].b(r) = keep + h;
        const double up = mlp_loss_and_grad(layers, X, y, lambda).loss;
        layers[l].b(r) = keep - h;
        const double dn = mlp_loss_and_grad(layers, X, y, lambda).loss;
        layers[l].b(r) = keep;
        const double numeric = (up - dn) / (2 * h);
        CHECK(analytic.grads[l].b(r) == Catch::Approx(numeric).margin(1e-5).epsilon(1e-5));
      }
    }
  }
}

TEST_CASE("mlp initialization is bounded, seeded, and bias-free") {
  const auto layers = init_mlp_layers(5, {7, 4}, 3, 77);
  REQUIRE(layers.size() == 3);
  CHECK(layers[0].W.rows() == 7);
  CHECK(layers[0].W.cols() == 5);
  CHECK(layers[1].W.rows() == 4);
  CHECK(layers[2].W.rows() == 3);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const double limit =
        std::sqrt(6.0 / static_cast<double>(layers[l].W.cols() + layers[l].W.rows()));
    CHECK(layers[l].W.array().abs().maxCoeff() <= limit);
    CHECK(layers[l].b.array().abs().maxCoeff() == 0.0);
  }
  CHECK(layers_identical(layers, init_mlp_layers(5, {7, 4}, 3, 77)));
  CHECK_FALSE(layers_identical(layers, init_mlp_layers(5, {7, 4}, 3, 78)));
}

TEST_CASE("mlp training is bit-reproducible per seed") {
  const auto train = small_encoded(200, 9);
  TrainConfig cfg;
  cfg.family = ModelFamily::mlp;
  cfg.hidden_layers = {8};
  cfg.max_epochs = 10;
  cfg.seed = 5;
  const Model a = train_mlp(train, cfg);
  const Model b = train_mlp(train, cfg);
  CHECK(layers_identical(a.layers(), b.layers()));
  CHECK(a.meta().final_loss == b.meta().final_loss);

  cfg.seed = 6;
  const Model c = train_mlp(train, cfg);
  CHECK_FALSE(layers_identical(a.layers(), c.layers()));
}

TEST_CASE("mlp learns the planted signal") {
  const auto train = small_encoded(2000, 16);
  const auto test = small_encoded(1000, 17);
  TrainConfig cfg;
  cfg.family = ModelFamily::mlp;
  cfg.hidden_layers = {16};
  cfg.learning_rate = 0.1;
  cfg.max_epochs = 30;
  cfg.seed = 2;
  const Model model = train_mlp(train, cfg, &test);
  CHECK(model.meta().train_accuracy > 0.7);
  REQUIRE(model.meta().test_accuracy.has_value());
  CHECK(*model.meta().test_accuracy > 0.7);
}

TEST_CASE("mlp training reports divergence with the epoch") {
  const auto train = small_encoded(100, 10);
  TrainConfig cfg;
  cfg.family = ModelFamily::mlp;
  cfg.hidden_layers = {8};
  cfg.learning_rate = 1e9;
  cfg.max_epochs = 50;
  cfg.seed = 4;
  CHECK_THROWS_MATCHES(train_mlp(train, cfg), TrainError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("diverged at epoch")));
}

TEST_CASE("mlp momentum changes the trajectory but stays deterministic") {
  const auto train = small_encoded(200, 11);
  TrainConfig cfg;
  cfg.family = ModelFamily::mlp;
  cfg.hidden_layers = {8};
  cfg.max_epochs = 10;
  cfg.seed = 5;
  const Model plain = train_mlp(train, cfg);
  cfg.momentum = 0.9;
  const Model a = train_mlp(train, cfg);
  const Model b = train_mlp(train, cfg);
  CHECK(layers_identical(a.layers(), b.layers()));
  CHECK_FALSE(layers_identical(a.layers(), plain.layers()));
}

TEST_CASE("accuracy breaks probability ties toward the first label") {
  // Zero weights make every class equally likely; argmax must pick index 0.
  Layer layer;
  layer.W = Eigen::MatrixXd::Zero(1, 3);
  layer.b = Eigen::VectorXd::Zero(1);
  TrainingMeta meta;
  const Model model(ModelFamily::logistic, 3, {"no", "yes"}, {layer}, meta);

  EncodedDataset data;
  data.features = Eigen::MatrixXd::Zero(4, 3);
  data.labels = {0, 0, 1, 1};
  data.label_values = {"no", "yes"};
  CHECK(accuracy(model, data) == 0.5);
}

TEST_CASE("model save and load round trip is bit exact") {
  const auto train = small_encoded(300, 12);
  const auto test = small_encoded(100, 13);
  auto dir = scratch_dir("updateleak-learn");

  SECTION("logistic") {
    TrainConfig cfg;
    const Model model = train_logistic(train, cfg, &test);
    const auto path = dir / "logistic.model";
    model.save(path);
    const Model back = Model::load(path);
    CHECK(back.family() == model.family());
    CHECK(back.input_dim() == model.input_dim());
    CHECK(back.label_values() == model.label_values());
    CHECK(layers_identical(back.layers(), model.layers()));
    CHECK(back.meta().epochs == model.meta().epochs);
    CHECK(back.meta().final_loss == model.meta().final_loss);
    CHECK(back.meta().train_accuracy == model.meta().train_accuracy);
    REQUIRE(back.meta().test_accuracy.has_value());
    CHECK(*back.meta().test_accuracy == *model.meta().test_accuracy);

    // Saving the loaded model reproduces the file byte for byte.
    const auto path2 = dir / "logistic2.model";
    back.save(path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
  }

  SECTION("mlp without test accuracy") {
    TrainConfig cfg;
    cfg.family = ModelFamily::mlp;
    cfg.hidden_layers = {6, 4};
    cfg.max_epochs = 5;
    cfg.seed = 9;
    const Model model = train_mlp(train, cfg);
    const auto path = dir / "mlp.model";
    model.save(path);
    const Model back = Model::load(path);
    CHECK(layers_identical(back.layers(), model.layers()));
    CHECK_FALSE(back.meta().test_accuracy.has_value());
    // Probabilities from the reloaded model are identical, not merely close.
    std::vector<double> row(static_cast<std::size_t>(train.features.cols()), 0.25);
    CHECK(back.predict_proba(row) == model.predict_proba(row));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("model load rejects corrupted files") {
  const auto train = small_encoded(100, 18);
  const Model model = train_logistic(train, TrainConfig{});
  auto dir = scratch_dir("updateleak-learn");
  const auto path = dir / "model.txt";
  model.save(path);

  std::ifstream in(path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();

  SECTION("wrong magic") {
    auto bad = content;
    bad.replace(0, 10, "somethings");
    std::ofstream(path) << bad;
    CHECK_THROWS_AS(Model::load(path), DataError);
  }
  SECTION("truncated") {
    std::ofstream(path) << content.substr(0, content.size() / 2);
    CHECK_THROWS_AS(Model::load(path), DataError);
  }
  SECTION("missing file") {
    CHECK_THROWS_AS(Model::load(dir / "absent.model"), DataError);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("model validation rejects inconsistent shapes") {
  Layer layer;
  layer.W = Eigen::MatrixXd::Zero(2, 3);  // logistic wants one output row
  layer.b = Eigen::VectorXd::Zero(2);
  CHECK_THROWS_AS(Model(ModelFamily::logistic, 3, {"a", "b"}, {layer}, TrainingMeta{}),
                  DataError);

  Layer l1;
  l1.W = Eigen::MatrixXd::Zero(4, 3);
  l1.b = Eigen::VectorXd::Zero(4);
  Layer l2;
  l2.W = Eigen::MatrixXd::Zero(2, 5);  // mismatched inner width
  l2.b = Eigen::VectorXd::Zero(2);
  CHECK_THROWS_AS(Model(ModelFamily::mlp, 3, {"a", "b"}, {l1, l2}, TrainingMeta{}), DataError);

  Layer nan_layer;
  nan_layer.W = Eigen::MatrixXd::Constant(1, 3, std::nan(""));
  nan_layer.b = Eigen::VectorXd::Zero(1);
  CHECK_THROWS_AS(Model(ModelFamily::logistic, 3, {"a", "b"}, {nan_layer}, TrainingMeta{}),
                  DataError);
}
