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

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "updateleak/error.hpp"
#include "updateleak/rng.hpp"
#include "updateleak/tabular.hpp"

namespace updateleak {

enum class ModelFamily { logistic, mlp };

inline std::string to_string(ModelFamily f) {
  return f == ModelFamily::logistic ? "logistic" : "mlp";
}

inline ModelFamily model_family_from_string(const std::string& s) {
  if (s == "logistic") return ModelFamily::logistic;
  if (s == "mlp") return ModelFamily::mlp;
  throw ConfigError("unknown model family '" + s + "'");
}

struct TrainConfig {
  ModelFamily family = ModelFamily::logistic;
  std::vector<std::size_t> hidden_layers = {256, 256};  // mlp only
  double l2_strength = 1e-4;
  std::size_t max_epochs = 200;
  double tolerance = 1e-6;      // logistic: gradient infinity-norm stop
  double learning_rate = 0.05;  // mlp only
  std::size_t batch_size = 32;  // mlp only
  double momentum = 0.0;        // mlp only
  std::uint64_t seed = 0;

  void validate() const {
    if (l2_strength < 0.0) throw ConfigError("train config: l2_strength must be nonnegative");
    if (max_epochs == 0) throw ConfigError("train config: max_epochs must be positive");
    if (tolerance <= 0.0) throw ConfigError("train config: tolerance must be positive");
    if (family == ModelFamily::mlp) {
      if (learning_rate <= 0.0) throw ConfigError("train config: learning_rate must be positive");
      if (batch_size == 0) throw ConfigError("train config: batch_size must be positive");
      if (momentum < 0.0 || momentum >= 1.0) {
        throw ConfigError("train config: momentum must be in [0,1)");
      }
      for (auto h : hidden_layers) {
        if (h == 0) throw ConfigError("train config: hidden layer width must be positive");
      }
    }
  }
};

struct Layer {
  Eigen::MatrixXd W;  // out x in
  Eigen::VectorXd b;  // out
};

struct TrainingMeta {
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  double final_loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> test_accuracy;
};

namespace detail {

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
inline double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

inline void softmax_row_inplace(Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> z) {
  const double m = z.maxCoeff();
  z = (z.array() - m).exp();
  z /= z.sum();
}

inline std::string format_hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

inline double parse_hexfloat(const std::string& s, const std::string& where) {
  if (s.empty()) throw DataError(where + ": empty number");
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) throw DataError(where + ": bad number '" + s + "'");
  return v;
}

}  // namespace detail

/// A trained classifier: queryable for class probabilities, immutable, and
/// serializable with bit-exact round trips.
class Model {
 public:
  Model() = default;

  Model(ModelFamily family, std::size_t input_dim, std::vector<std::string> label_values,
        std::vector<Layer> layers, TrainingMeta meta)
      : family_(family),
        input_dim_(input_dim),
        label_values_(std::move(label_values)),
        layers_(std::move(layers)),
        meta_(meta) {
    validate();
  }

  ModelFamily family() const { return family_; }
  std::size_t input_dim() const { return input_dim_; }
  const std::vector<std::string>& label_values() const { return label_values_; }
  const std::vector<Layer>& layers() const { return layers_; }
  const TrainingMeta& meta() const { return meta_; }

  /// Class probabilities for one encoded record, aligned with label_values().
  std::vector<double> predict_proba(const std::vector<double>& features) const {
    if (features.size() != input_dim_) {
      throw DataError("predict_proba: expected " + std::to_string(input_dim_) +
                      " features, got " + std::to_string(features.size()));
    }
    const Eigen::Map<const Eigen::VectorXd> x(features.data(),
                                              static_cast<Eigen::Index>(features.size()));
    if (family_ == ModelFamily::logistic) {
      const double z = layers_[0].W.row(0).dot(x) + layers_[0].b(0);
      const double p = detail::sigmoid(z);
      return {1.0 - p, p};
    }
    Eigen::VectorXd h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      h = (layers_[l].W * h + layers_[l].b).eval();
      if (l + 1 < layers_.size()) h = h.cwiseMax(0.0);
    }
    Eigen::RowVectorXd row = h.transpose();
    detail::softmax_row_inplace(row);
    return std::vector<double>(row.data(), row.data() + row.size());
  }

  double confidence_on_label(const std::vector<double>& features,
                             const std::string& label) const {
    const auto probs = predict_proba(features);
    for (std::size_t i = 0; i < label_values_.size(); ++i) {
      if (label_values_[i] == label) return probs[i];
    }
    throw DataError("confidence_on_label: unknown label '" + label + "'");
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write model file: " + path.string());
    out << "updateleak-model 1\n";
    out << "family " << to_string(family_) << "\n";
    out << "input_dim " << input_dim_ << "\n";
    out << "labels " << label_values_.size() << "\n";
    for (const auto& v : label_values_) out << v << "\n";
    out << "layers " << layers_.size() << "\n";
    for (const auto& layer : layers_) {
      out << "layer " << layer.W.rows() << " " << layer.W.cols() << "\n";
      for (Eigen::Index r = 0; r < layer.W.rows(); ++r) {
        for (Eigen::Index c = 0; c < layer.W.cols(); ++c) {
          if (c) out << " ";
          out << detail::format_hexfloat(layer.W(r, c));
        }
        out << "\n";
      }
      for (Eigen::Index r = 0; r < layer.b.size(); ++r) {
        if (r) out << " ";
        out << detail::format_hexfloat(layer.b(r));
      }
      out << "\n";
    }
    out << "seed " << meta_.seed << "\n";
    out << "epochs " << meta_.epochs << "\n";
    out << "final_loss " << detail::format_hexfloat(meta_.final_loss) << "\n";
    out << "train_accuracy " << detail::format_hexfloat(meta_.train_accuracy) << "\n";
    out << "test_accuracy "
        << (meta_.test_accuracy ? detail::format_hexfloat(*meta_.test_accuracy)
                                : std::string("none"))
        << "\n";
    if (!out) throw DataError("failed writing model file: " + path.string());
  }

  static Model load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("model file not found: " + path.string());
    const std::string where = "model file " + path.string();

    auto next_line = [&](const char* what) {
      std::string line;
      if (!std::getline(in, line)) throw DataError(where + ": truncated, expected " + what);
      return line;
    };
    auto expect_field = [&](const std::string& line, const std::string& key) {
      if (line.rfind(key + " ", 0) != 0) {
        throw DataError(where + ": expected '" + key + "', got '" + line + "'");
      }
      return line.substr(key.size() + 1);
    };
    auto parse_count = [&](const std::string& text, const std::string& key) {
      try {
        std::size_t pos = 0;
        const long long v = std::stoll(text, &pos);
        if (pos != text.size() || v < 0) throw std::invalid_argument(text);
        return static_cast<std::size_t>(v);
      } catch (const std::exception&) {
        throw DataError(where + ": bad " + key + " '" + text + "'");
      }
    };
    auto parse_row = [&](const std::string& line, Eigen::Index n, auto&& sink) {
      std::istringstream ss(line);
      std::string tok;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!(ss >> tok)) throw DataError(where + ": short weight row");
        sink(i, detail::parse_hexfloat(tok, where));
      }
      std::string extra;
      if (ss >> extra) throw DataError(where + ": trailing data in weight row");
    };

    if (next_line("header") != "updateleak-model 1") {
      throw DataError(where + ": bad header (expected 'updateleak-model 1')");
    }
    const ModelFamily family =
        model_family_from_string(expect_field(next_line("family"), "family"));
    const std::size_t input_dim =
        parse_count(expect_field(next_line("input_dim"), "input_dim"), "input_dim");
    const std::size_t n_labels =
        parse_count(expect_field(next_line("labels"), "labels"), "label count");
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < n_labels; ++i) labels.push_back(next_line("label value"));
    const std::size_t n_layers =
        parse_count(expect_field(next_line("layers"), "layers"), "layer count");
    std::vector<Layer> layers;
    for (std::size_t l = 0; l < n_layers; ++l) {
      std::istringstream ss(next_line("layer shape"));
      std::string tag;
      long long rows = 0, cols = 0;
      if (!(ss >> tag >> rows >> cols) || tag != "layer" || rows <= 0 || cols <= 0) {
        throw DataError(where + ": bad layer shape line");
      }
      Layer layer;
      layer.W.resize(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r) {
        parse_row(next_line("weight row"), cols,
                  [&](Eigen::Index c, double v) { layer.W(r, c) = v; });
      }
      layer.b.resize(rows);
      parse_row(next_line("bias row"), rows, [&](Eigen::Index r, double v) { layer.b(r) = v; });
      layers.push_back(std::move(layer));
    }
    TrainingMeta meta;
    {
      std::istringstream ss(expect_field(next_line("seed"), "seed"));
      if (!(ss >> meta.seed)) throw DataError(where + ": bad seed");
    }
    meta.epochs = parse_count(expect_field(next_line("epochs"), "epochs"), "epochs");
    meta.final_loss =
        detail::parse_hexfloat(expect_field(next_line("final_loss"), "final_loss"), where);
    meta.train_accuracy = detail::parse_hexfloat(
        expect_field(next_line("train_accuracy"), "train_accuracy"), where);
    const std::string test_acc = expect_field(next_line("test_accuracy"), "test_accuracy");
    if (test_acc != "none") meta.test_accuracy = detail::parse_hexfloat(test_acc, where);
    return Model(family, input_dim, std::move(labels), std::move(layers), meta);
  }

 private:
  void validate() const {
    if (label_values_.size() < 2) throw DataError("model: needs at least 2 labels");
    if (layers_.empty()) throw DataError("model: no layers");
    std::size_t in = input_dim_;
    for (const auto& layer : layers_) {
      if (layer.W.cols() != static_cast<Eigen::Index>(in)) {
        throw DataError("model: layer input width mismatch");
      }
      if (layer.b.size() != layer.W.rows()) throw DataError("model: bias size mismatch");
      if (!layer.W.allFinite() || !layer.b.allFinite()) {
        throw DataError("model: non-finite weight");
      }
      in = static_cast<std::size_t>(layer.W.rows());
    }
    if (family_ == ModelFamily::logistic) {
      if (layers_.size() != 1 || layers_[0].W.rows() != 1 || label_values_.size() != 2) {
        throw DataError("model: logistic must be one layer, one output, two labels");
      }
    } else if (in != label_values_.size()) {
      throw DataError("model: output width does not match label count");
    }
  }

  ModelFamily family_ = ModelFamily::logistic;
  std::size_t input_dim_ = 0;
  std::vector<std::string> label_values_;
  std::vector<Layer> layers_;
  TrainingMeta meta_;
};

/// Fraction of records whose argmax class (first wins on ties) matches the
/// label.
inline double accuracy(const Model& model, const EncodedDataset& data) {
  if (data.labels.empty()) throw DataError("accuracy: empty dataset");
  std::size_t hits = 0;
  std::vector<double> row(static_cast<std::size_t>(data.features.cols()));
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    for (Eigen::Index c = 0; c < data.features.cols(); ++c) {
      row[static_cast<std::size_t>(c)] = data.features(static_cast<Eigen::Index>(i), c);
    }
    const auto probs = model.predict_proba(row);
    std::size_t best = 0;
    for (std::size_t k = 1; k < probs.size(); ++k) {
      if (probs[k] > probs[best]) best = k;
    }
    if (static_cast<int>(best) == data.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.labels.size());
}

// ---------------------------------------------------------------------------
// Logistic regression
// ---------------------------------------------------------------------------

/// The L2-regularized mean negative log-likelihood and its gradient, exposed
/// so tests can cross-check the trainer against independent minimizers.
/// Parameter layout: theta = [w(0..d-1), bias]; the bias is not penalized.
class LogisticObjective {
 public:
  LogisticObjective(const Eigen::MatrixXd& features, const std::vector<int>& labels,
                    double l2_strength)
      : X_(features), lambda_(l2_strength) {
    y_.resize(static_cast<Eigen::Index>(labels.size()));
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != 0 && labels[i] != 1) {
        throw TrainError("logistic training requires a binary label");
      }
      y_(static_cast<Eigen::Index>(i)) = static_cast<double>(labels[i]);
    }
  }

  Eigen::Index dim() const { return X_.cols() + 1; }

  double loss(const Eigen::VectorXd& theta) const {
    const auto w = theta.head(X_.cols());
    const double b = theta(X_.cols());
    const Eigen::VectorXd z = (X_ * w).array() + b;
    double nll = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      nll += detail::softplus(z(i)) - y_(i) * z(i);
    }
    nll /= static_cast<double>(z.size());
    return nll + 0.5 * lambda_ * w.squaredNorm();
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& theta) const {
    const auto w = theta.head(X_.cols());
    const double b = theta(X_.cols());
    const Eigen::VectorXd z = (X_ * w).array() + b;
    Eigen::VectorXd p(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) p(i) = detail::sigmoid(z(i));
    const Eigen::VectorXd r = (p - y_) / static_cast<double>(z.size());
    Eigen::VectorXd g(dim());
    g.head(X_.cols()) = X_.transpose() * r + lambda_ * w;
    g(X_.cols()) = r.sum();
    return g;
  }

 private:
  const Eigen::MatrixXd& X_;
  Eigen::VectorXd y_;
  double lambda_;
};

namespace detail {

/// Limited-memory BFGS with Armijo backtracking. The objective is strictly
/// convex, so every accepted curvature pair has positive s'y and the method
/// drives the gradient to the requested tolerance. Returns iterations used.
template <typename Objective>
std::size_t lbfgs_minimize(const Objective& obj, Eigen::VectorXd& theta,
                           std::size_t max_iters, double tolerance,
                           std::vector<double>* loss_history) {
  constexpr std::size_t kMemory = 10;
  constexpr double kArmijo = 1e-4;
  std::deque<Eigen::VectorXd> s_hist, y_hist;

  double f = obj.loss(theta);
  if (!std::isfinite(f)) throw TrainError("logistic training: non-finite initial loss");
  if (loss_history) loss_history->push_back(f);
  Eigen::VectorXd g = obj.gradient(theta);

  std::size_t iter = 0;
  for (; iter < max_iters; ++iter) {
    if (g.template lpNorm<Eigen::Infinity>() < tolerance) break;

    // Two-loop recursion.
    Eigen::VectorXd d = -g;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t k = s_hist.size(); k-- > 0;) {
      const double rho = 1.0 / y_hist[k].dot(s_hist[k]);
      alpha[k] = rho * s_hist[k].dot(d);
      d -= alpha[k] * y_hist[k];
    }
    if (!s_hist.empty()) {
      const auto& s = s_hist.back();
      const auto& y = y_hist.back();
      d *= s.dot(y) / y.dot(y);
    }
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      const double rho = 1.0 / y_hist[k].dot(s_hist[k]);
      const double beta = rho * y_hist[k].dot(d);
      d += (alpha[k] - beta) * s_hist[k];
    }
    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      d = -g;
      slope = g.dot(d);
    }

    double step = s_hist.empty() ? 1.0 / (1.0 + g.norm()) : 1.0;
    double f_new = 0.0;
    Eigen::VectorXd theta_new;
    bool accepted = false;
    for (int half = 0; half < 60; ++half) {
      theta_new = theta + step * d;
      f_new = obj.loss(theta_new);
      if (std::isfinite(f_new) && f_new <= f + kArmijo * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // at double-precision resolution of the objective

    Eigen::VectorXd g_new = obj.gradient(theta_new);
    Eigen::VectorXd s = theta_new - theta;
    Eigen::VectorXd y = g_new - g;
    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      if (s_hist.size() > kMemory) {
        s_hist.pop_front();
        y_hist.pop_front();
      }
    }
    theta = std::move(theta_new);
    f = f_new;
    g = std::move(g_new);
    if (loss_history) loss_history->push_back(f);
    if (!std::isfinite(f)) throw TrainError("logistic training: non-finite loss");
  }
  return iter;
}

}  // namespace detail

/// Trains binary logistic regression to the global minimum of the
/// L2-regularized negative log-likelihood. Initialization is at zero (or at
/// `init` when given, for convexity checks), so the result does not depend on
/// cfg.seed. Stops when the gradient infinity-norm falls below cfg.tolerance
/// or after cfg.max_epochs quasi-Newton iterations.
inline Model train_logistic(const EncodedDataset& train, const TrainConfig& cfg,
                            const EncodedDataset* test = nullptr,
                            const Eigen::VectorXd* init = nullptr,
                            std::vector<double>* loss_history = nullptr) {
  cfg.validate();
  if (train.labels.empty()) throw TrainError("logistic training: empty training set");
  if (train.label_values.size() != 2) {
    throw TrainError("logistic training requires a binary label, got " +
                     std::to_string(train.label_values.size()) + " classes");
  }
  if (!train.features.allFinite()) {
    throw TrainError("logistic training: non-finite feature");
  }

  const LogisticObjective obj(train.features, train.labels, cfg.l2_strength);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(obj.dim());
  if (init) {
    if (init->size() != obj.dim()) {
      throw TrainError("logistic training: init has wrong dimension");
    }
    theta = *init;
  }
  const std::size_t iters =
      detail::lbfgs_minimize(obj, theta, cfg.max_epochs, cfg.tolerance, loss_history);

  const auto d = train.features.cols();
  Layer layer;
  layer.W = theta.head(d).transpose();
  layer.b.resize(1);
  layer.b(0) = theta(d);

  TrainingMeta meta;
  meta.seed = cfg.seed;
  meta.epochs = iters;
  meta.final_loss = obj.loss(theta);
  Model model(ModelFamily::logistic, static_cast<std::size_t>(d), train.label_values,
              {std::move(layer)}, meta);
  TrainingMeta full = meta;
  full.train_accuracy = accuracy(model, train);
  if (test) full.test_accuracy = accuracy(model, *test);
  return Model(ModelFamily::logistic, static_cast<std::size_t>(d), train.label_values,
               {model.layers()[0]}, full);
}

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

struct MlpGradient {
  double loss = 0.0;
  std::vector<Layer> grads;
};

/// Softmax cross-entropy loss (mean over rows) plus (l2/2)*sum ||W||^2 over
/// weight matrices (biases unpenalized), with analytic gradients. Exposed for
/// finite-difference verification; the trainer uses the same routine.
inline MlpGradient mlp_loss_and_grad(const std::vector<Layer>& layers,
                                     const Eigen::MatrixXd& X, const std::vector<int>& labels,
                                     double l2_strength) {
  const auto n = X.rows();
  if (n == 0) throw TrainError("mlp gradient: empty batch");
  const std::size_t L = layers.size();

  std::vector<Eigen::MatrixXd> acts(L + 1);  // acts[l]: activations entering layer l
  acts[0] = X;
  std::vector<Eigen::MatrixXd> pre(L);  // pre[l]: pre-activation of layer l
  for (std::size_t l = 0; l < L; ++l) {
    pre[l] = acts[l] * layers[l].W.transpose();
    pre[l].rowwise() += layers[l].b.transpose();
    acts[l + 1] = l + 1 < L ? pre[l].cwiseMax(0.0) : pre[l];
  }

  Eigen::MatrixXd probs = acts[L];
  double ce = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    detail::softmax_row_inplace(probs.row(i));
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= probs.cols()) throw TrainError("mlp gradient: label out of range");
    ce -= std::log(std::max(probs(i, y), 1e-300));
  }
  ce /= static_cast<double>(n);

  MlpGradient out;
  out.loss = ce;
  for (const auto& layer : layers) {
    out.loss += 0.5 * l2_strength * layer.W.squaredNorm();
  }

  Eigen::MatrixXd delta = probs;  // dLoss/dPre for the output layer
  for (Eigen::Index i = 0; i < n; ++i) {
    delta(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  }
  delta /= static_cast<double>(n);

  out.grads.resize(L);
  for (std::size_t l = L; l-- > 0;) {
    out.grads[l].W = delta.transpose() * acts[l] + l2_strength * layers[l].W;
    out.grads[l].b = delta.colwise().sum().transpose();
    if (l > 0) {
      delta = (delta * layers[l].W).cwiseProduct(
          (pre[l - 1].array() > 0.0).cast<double>().matrix());
    }
  }
  return out;
}

/// Deterministic scaled-uniform initialization: every weight drawn in a fixed
/// order (layers in sequence, each matrix row-major) from
/// U(-limit, limit) with limit = sqrt(6 / (fan_in + fan_out)); biases zero.
inline std::vector<Layer> init_mlp_layers(std::size_t input_dim,
                                          const std::vector<std::size_t>& hidden,
                                          std::size_t n_classes, std::uint64_t seed) {
  std::vector<std::size_t> widths;
  widths.push_back(input_dim);
  for (auto h : hidden) widths.push_back(h);
  widths.push_back(n_classes);

  auto rng = make_rng(seed);
  std::vector<Layer> layers(widths.size() - 1);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const auto fan_in = widths[l];
    const auto fan_out = widths[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    layers[l].W.resize(static_cast<Eigen::Index>(fan_out), static_cast<Eigen::Index>(fan_in));
    for (Eigen::Index r = 0; r < layers[l].W.rows(); ++r) {
      for (Eigen::Index c = 0; c < layers[l].W.cols(); ++c) {
        layers[l].W(r, c) = (2.0 * uniform_real01(rng) - 1.0) * limit;
      }
    }
    layers[l].b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(fan_out));
  }
  return layers;
}

/// Trains a ReLU MLP with mini-batch SGD (fixed learning rate, optional
/// momentum) on softmax cross-entropy. Weight initialization and the
/// per-epoch shuffle order are both driven by cfg.seed, so results are
/// bit-reproducible for a given seed.
inline Model train_mlp(const EncodedDataset& train, const TrainConfig& cfg,
                       const EncodedDataset* test = nullptr) {
  cfg.validate();
  const std::size_t n = train.labels.size();
  if (n == 0) throw TrainError("mlp training: empty training set");
  if (train.label_values.size() < 2) throw TrainError("mlp training: needs >= 2 classes");
  if (!train.features.allFinite()) throw TrainError("mlp training: non-finite feature");
  for (int y : train.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= train.label_values.size()) {
      throw TrainError("mlp training: label out of range");
    }
  }

  const auto d = static_cast<std::size_t>(train.features.cols());
  const std::size_t n_classes = train.label_values.size();
  auto layers = init_mlp_layers(d, cfg.hidden_layers, n_classes, cfg.seed);
  std::vector<Layer> velocity;
  if (cfg.momentum > 0.0) {
    velocity.resize(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l) {
      velocity[l].W = Eigen::MatrixXd::Zero(layers[l].W.rows(), layers[l].W.cols());
      velocity[l].b = Eigen::VectorXd::Zero(layers[l].b.size());
    }
  }

  auto shuffle_rng = make_rng(derive_seed(cfg.seed, 0x6d6c702d73687566ULL));  // "mlp-shuf"
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  double epoch_loss = 0.0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t bsz = std::min(cfg.batch_size, n - start);
      Eigen::MatrixXd X(static_cast<Eigen::Index>(bsz), static_cast<Eigen::Index>(d));
      std::vector<int> y(bsz);
      for (std::size_t i = 0; i < bsz; ++i) {
        X.row(static_cast<Eigen::Index>(i)) =
            train.features.row(static_cast<Eigen::Index>(order[start + i]));
        y[i] = train.labels[order[start + i]];
      }
      const auto g = mlp_loss_and_grad(layers, X, y, cfg.l2_strength);
      if (!std::isfinite(g.loss)) {
        throw TrainError("mlp training diverged at epoch " + std::to_string(epoch + 1));
      }
      loss_sum += g.loss * static_cast<double>(bsz);
      for (std::size_t l = 0; l < layers.size(); ++l) {
        if (cfg.momentum > 0.0) {
          velocity[l].W = cfg.momentum * velocity[l].W - cfg.learning_rate * g.grads[l].W;
          velocity[l].b = cfg.momentum * velocity[l].b - cfg.learning_rate * g.grads[l].b;
          layers[l].W += velocity[l].W;
          layers[l].b += velocity[l].b;
        } else {
          layers[l].W -= cfg.learning_rate * g.grads[l].W;
          layers[l].b -= cfg.learning_rate * g.grads[l].b;
        }
      }
    }
    epoch_loss = loss_sum / static_cast<double>(n);
    if (!std::isfinite(epoch_loss)) {
      throw TrainError("mlp training diverged at epoch " + std::to_string(epoch + 1));
    }
  }

  TrainingMeta meta;
  meta.seed = cfg.seed;
  meta.epochs = cfg.max_epochs;
  meta.final_loss = epoch_loss;
  Model probe(ModelFamily::mlp, d, train.label_values, layers, meta);
  meta.train_accuracy = accuracy(probe, train);
  if (test) meta.test_accuracy = accuracy(probe, *test);
  return Model(ModelFamily::mlp, d, train.label_values, std::move(layers), meta);
}

}  // namespace updateleak
