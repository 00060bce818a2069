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
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "updateleak/error.hpp"
#include "updateleak/rng.hpp"

namespace updateleak {

using json = nlohmann::json;

enum class AttributeKind { categorical, numeric };
enum class AttributeRole { target, known, label };

inline std::string to_string(AttributeKind k) {
  return k == AttributeKind::categorical ? "categorical" : "numeric";
}
inline std::string to_string(AttributeRole r) {
  switch (r) {
    case AttributeRole::target: return "target";
    case AttributeRole::known: return "known";
    default: return "label";
  }
}

namespace detail {

inline void require_keys(const json& j, const std::string& where,
                         const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) {
      throw ConfigError(where + ": unknown key '" + item.key() + "'");
    }
  }
}

template <typename T>
T get_required(const json& j, const std::string& where, const std::string& key) {
  if (!j.contains(key)) throw ConfigError(where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <typename T>
T get_or(const json& j, const std::string& where, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

/// One column of a tabular dataset. Categorical attributes carry their full
/// value domain in a fixed, canonical order (the declaration order in the
/// schema file); that order defines both the candidate enumeration used by
/// the attacks and the one-hot layout used by the encoder.
struct AttributeSpec {
  std::string name;
  AttributeKind kind = AttributeKind::categorical;
  AttributeRole role = AttributeRole::known;
  std::vector<std::string> domain;
  /// Optional raw-value coarsening applied at CSV load time (e.g. collapsing
  /// a fine-grained column into a handful of buckets). Values must lie in
  /// `domain`.
  std::map<std::string, std::string> value_map;

  int domain_index(const std::string& value) const {
    for (std::size_t i = 0; i < domain.size(); ++i) {
      if (domain[i] == value) return static_cast<int>(i);
    }
    return -1;
  }
};

class Schema {
 public:
  Schema() = default;

  explicit Schema(std::vector<AttributeSpec> attributes) : attrs_(std::move(attributes)) {
    validate();
  }

  const std::vector<AttributeSpec>& attributes() const { return attrs_; }
  std::size_t size() const { return attrs_.size(); }
  const AttributeSpec& attribute(std::size_t i) const { return attrs_.at(i); }

  int index_of(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? -1 : static_cast<int>(it->second);
  }

  std::size_t target_index() const { return target_; }
  std::size_t label_index() const { return label_; }
  const AttributeSpec& target() const { return attrs_[target_]; }
  const AttributeSpec& label() const { return attrs_[label_]; }

  static Schema from_json(const json& j) {
    detail::require_keys(j, "schema", {"attributes"});
    if (!j.contains("attributes") || !j.at("attributes").is_array()) {
      throw ConfigError("schema: expected an 'attributes' array");
    }
    std::vector<AttributeSpec> attrs;
    std::size_t i = 0;
    for (const auto& aj : j.at("attributes")) {
      const std::string where = "schema.attributes[" + std::to_string(i++) + "]";
      detail::require_keys(aj, where, {"name", "kind", "role", "domain", "value_map"});
      AttributeSpec spec;
      spec.name = detail::get_required<std::string>(aj, where, "name");
      const auto kind = detail::get_required<std::string>(aj, where, "kind");
      if (kind == "categorical") {
        spec.kind = AttributeKind::categorical;
      } else if (kind == "numeric") {
        spec.kind = AttributeKind::numeric;
      } else {
        throw ConfigError(where + ".kind: expected 'categorical' or 'numeric', got '" + kind + "'");
      }
      const auto role = detail::get_required<std::string>(aj, where, "role");
      if (role == "target") {
        spec.role = AttributeRole::target;
      } else if (role == "known") {
        spec.role = AttributeRole::known;
      } else if (role == "label") {
        spec.role = AttributeRole::label;
      } else {
        throw ConfigError(where + ".role: expected 'target', 'known' or 'label', got '" + role + "'");
      }
      if (spec.kind == AttributeKind::categorical) {
        spec.domain = detail::get_required<std::vector<std::string>>(aj, where, "domain");
        if (aj.contains("value_map")) {
          spec.value_map =
              detail::get_required<std::map<std::string, std::string>>(aj, where, "value_map");
        }
      } else if (aj.contains("domain") || aj.contains("value_map")) {
        throw ConfigError(where + ": numeric attributes take no 'domain' or 'value_map'");
      }
      attrs.push_back(std::move(spec));
    }
    return Schema(std::move(attrs));
  }

  json to_json() const {
    json out;
    out["attributes"] = json::array();
    for (const auto& a : attrs_) {
      json aj;
      aj["name"] = a.name;
      aj["kind"] = to_string(a.kind);
      aj["role"] = to_string(a.role);
      if (a.kind == AttributeKind::categorical) {
        aj["domain"] = a.domain;
        if (!a.value_map.empty()) aj["value_map"] = a.value_map;
      }
      out["attributes"].push_back(aj);
    }
    return out;
  }

  static Schema load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("schema file not found: " + path.string());
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ConfigError("schema file " + path.string() + ": " + e.what());
    }
    return from_json(j);
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write schema file: " + path.string());
    out << to_json().dump(2) << "\n";
  }

 private:
  void validate() {
    if (attrs_.empty()) throw ConfigError("schema: no attributes declared");
    int target = -1, label = -1;
    for (std::size_t i = 0; i < attrs_.size(); ++i) {
      const auto& a = attrs_[i];
      if (a.name.empty()) throw ConfigError("schema: attribute with empty name");
      if (by_name_.count(a.name)) throw ConfigError("schema: duplicate attribute '" + a.name + "'");
      by_name_[a.name] = i;
      if (a.role == AttributeRole::target) {
        if (target >= 0) throw ConfigError("schema: more than one target attribute");
        target = static_cast<int>(i);
      }
      if (a.role == AttributeRole::label) {
        if (label >= 0) throw ConfigError("schema: more than one label attribute");
        label = static_cast<int>(i);
      }
      if (a.kind == AttributeKind::categorical) {
        if (a.domain.empty()) {
          throw ConfigError("schema: attribute '" + a.name + "' has an empty domain");
        }
        std::set<std::string> seen;
        for (const auto& v : a.domain) {
          if (v.empty()) throw ConfigError("schema: empty domain value in '" + a.name + "'");
          if (!seen.insert(v).second) {
            throw ConfigError("schema: duplicate domain value '" + v + "' in '" + a.name + "'");
          }
        }
        for (const auto& [raw, mapped] : a.value_map) {
          if (a.domain_index(mapped) < 0) {
            throw ConfigError("schema: value_map of '" + a.name + "' maps '" + raw +
                              "' to '" + mapped + "', which is not in the domain");
          }
        }
      }
    }
    if (target < 0) throw ConfigError("schema: no target attribute declared");
    if (label < 0) throw ConfigError("schema: no label attribute declared");
    if (attrs_[target].kind != AttributeKind::categorical) {
      throw ConfigError("schema: target attribute must be categorical");
    }
    if (attrs_[label].kind != AttributeKind::categorical || attrs_[label].domain.size() < 2) {
      throw ConfigError("schema: label attribute must be categorical with at least 2 values");
    }
    target_ = static_cast<std::size_t>(target);
    label_ = static_cast<std::size_t>(label);
  }

  std::vector<AttributeSpec> attrs_;
  std::map<std::string, std::size_t> by_name_;
  std::size_t target_ = 0;
  std::size_t label_ = 0;
};

// ---------------------------------------------------------------------------
// Records and datasets
// ---------------------------------------------------------------------------

/// Categorical cells store the index into the attribute's domain; numeric
/// cells store the value itself.
using Cell = std::variant<std::int32_t, double>;

struct Record {
  std::int64_t id = 0;
  std::vector<Cell> cells;  // aligned with schema attribute order

  std::int32_t category_index(std::size_t attr) const {
    return std::get<std::int32_t>(cells.at(attr));
  }
  double numeric(std::size_t attr) const { return std::get<double>(cells.at(attr)); }
};

/// An immutable, schema-validated collection of records. All mutating
/// operations return a new dataset.
class Dataset {
 public:
  Dataset() = default;

  Dataset(Schema schema, std::vector<Record> records)
      : schema_(std::move(schema)), records_(std::move(records)) {
    index_.reserve(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i) {
      validate_record(records_[i]);
      if (!index_.emplace(records_[i].id, i).second) {
        throw DataError("dataset: duplicate record id " + std::to_string(records_[i].id));
      }
    }
  }

  const Schema& schema() const { return schema_; }
  const std::vector<Record>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }

  bool contains_id(std::int64_t id) const { return index_.count(id) > 0; }

  const Record& record_by_id(std::int64_t id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw DataError("dataset: no record with id " + std::to_string(id));
    return records_[it->second];
  }

  /// Category string of a categorical cell.
  const std::string& category(const Record& rec, std::size_t attr) const {
    return schema_.attribute(attr).domain.at(
        static_cast<std::size_t>(rec.category_index(attr)));
  }

  const std::string& target_value(const Record& rec) const {
    return category(rec, schema_.target_index());
  }
  const std::string& label_value(const Record& rec) const {
    return category(rec, schema_.label_index());
  }

 private:
  void validate_record(const Record& rec) const {
    if (rec.cells.size() != schema_.size()) {
      throw DataError("dataset: record " + std::to_string(rec.id) +
                      " has wrong cell count");
    }
    for (std::size_t a = 0; a < schema_.size(); ++a) {
      const auto& spec = schema_.attribute(a);
      if (spec.kind == AttributeKind::categorical) {
        if (!std::holds_alternative<std::int32_t>(rec.cells[a])) {
          throw DataError("dataset: record " + std::to_string(rec.id) + " attribute '" +
                          spec.name + "' is not categorical");
        }
        const auto idx = std::get<std::int32_t>(rec.cells[a]);
        if (idx < 0 || static_cast<std::size_t>(idx) >= spec.domain.size()) {
          throw DataError("dataset: record " + std::to_string(rec.id) +
                          " has out-of-domain value for '" + spec.name + "'");
        }
      } else {
        if (!std::holds_alternative<double>(rec.cells[a])) {
          throw DataError("dataset: record " + std::to_string(rec.id) + " attribute '" +
                          spec.name + "' is not numeric");
        }
        if (!std::isfinite(std::get<double>(rec.cells[a]))) {
          throw DataError("dataset: record " + std::to_string(rec.id) +
                          " has non-finite value for '" + spec.name + "'");
        }
      }
    }
  }

  Schema schema_;
  std::vector<Record> records_;
  std::unordered_map<std::int64_t, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

namespace detail {

/// Splits one CSV line into fields. Handles RFC-4180 quoting ("" escapes a
/// quote inside a quoted field).
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool in_quotes = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

inline std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Strict full-string double parse.
inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

}  // namespace detail

struct CsvLoadResult {
  Dataset dataset;
  std::size_t dropped_rows = 0;
};

/// Loads a UTF-8, comma-separated file with a header row. Columns are matched
/// to schema attributes by name (any column order); the header must contain
/// exactly the schema's attributes. Rows with a missing or unparseable cell
/// are dropped, never imputed; ids are assigned 0..n-1 over the kept rows in
/// file order.
inline CsvLoadResult load_csv(const std::filesystem::path& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("csv file not found: " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw DataError("csv file is empty: " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const auto header = detail::split_csv_line(line);
  if (header.size() != schema.size()) {
    throw DataError("csv header of " + path.string() + " has " +
                    std::to_string(header.size()) + " columns, schema declares " +
                    std::to_string(schema.size()));
  }
  std::vector<std::size_t> column_attr(header.size());
  std::set<std::string> seen;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const int a = schema.index_of(header[c]);
    if (a < 0) throw DataError("csv column '" + header[c] + "' is not in the schema");
    if (!seen.insert(header[c]).second) {
      throw DataError("csv has duplicate column '" + header[c] + "'");
    }
    column_attr[c] = static_cast<std::size_t>(a);
  }

  std::vector<Record> records;
  std::size_t dropped = 0;
  std::int64_t next_id = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size()) {
      ++dropped;
      continue;
    }
    Record rec;
    rec.cells.resize(schema.size());
    bool ok = true;
    for (std::size_t c = 0; c < fields.size() && ok; ++c) {
      const std::size_t a = column_attr[c];
      const auto& spec = schema.attribute(a);
      const std::string& raw = fields[c];
      if (raw.empty()) {
        ok = false;
      } else if (spec.kind == AttributeKind::categorical) {
        std::string value = raw;
        auto mapped = spec.value_map.find(raw);
        if (mapped != spec.value_map.end()) value = mapped->second;
        const int idx = spec.domain_index(value);
        if (idx < 0) ok = false;
        else rec.cells[a] = static_cast<std::int32_t>(idx);
      } else {
        double v;
        if (!detail::parse_double(raw, v)) ok = false;
        else rec.cells[a] = v;
      }
    }
    if (!ok) {
      ++dropped;
      continue;
    }
    rec.id = next_id++;
    records.push_back(std::move(rec));
  }
  if (records.empty()) {
    throw DataError("csv " + path.string() + " has no usable rows (" +
                    std::to_string(dropped) + " dropped)");
  }
  return CsvLoadResult{Dataset(schema, std::move(records)), dropped};
}

/// Writes a dataset back to CSV (header in schema order, cells as domain
/// strings / %.17g numerics). load_csv(write_csv(d)) reproduces d's cells.
inline void write_csv(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write csv file: " + path.string());
  const auto& schema = dataset.schema();
  for (std::size_t a = 0; a < schema.size(); ++a) {
    if (a) out << ',';
    out << detail::csv_escape(schema.attribute(a).name);
  }
  out << '\n';
  for (const auto& rec : dataset.records()) {
    for (std::size_t a = 0; a < schema.size(); ++a) {
      if (a) out << ',';
      if (schema.attribute(a).kind == AttributeKind::categorical) {
        out << detail::csv_escape(dataset.category(rec, a));
      } else {
        out << detail::format_double(rec.numeric(a));
      }
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Feature encoding
// ---------------------------------------------------------------------------

/// Per-attribute standardization statistics, computed once on the original
/// training set and reused for every derived dataset (updated sets, test
/// sets, attack probes).
struct FeatureStats {
  std::vector<double> mean;    // indexed by attribute; 0 for categorical
  std::vector<double> stddev;  // indexed by attribute; 1 for categorical
};

inline FeatureStats compute_feature_stats(const Dataset& dataset) {
  const auto& schema = dataset.schema();
  FeatureStats stats;
  stats.mean.assign(schema.size(), 0.0);
  stats.stddev.assign(schema.size(), 1.0);
  if (dataset.size() == 0) return stats;
  for (std::size_t a = 0; a < schema.size(); ++a) {
    if (schema.attribute(a).kind != AttributeKind::numeric) continue;
    double sum = 0.0;
    for (const auto& rec : dataset.records()) sum += rec.numeric(a);
    const double mean = sum / static_cast<double>(dataset.size());
    double sq = 0.0;
    for (const auto& rec : dataset.records()) {
      const double d = rec.numeric(a) - mean;
      sq += d * d;
    }
    const double var = sq / static_cast<double>(dataset.size());
    stats.mean[a] = mean;
    stats.stddev[a] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return stats;
}

/// Width of the encoded feature vector: one-hot for every non-label
/// categorical attribute, one slot per numeric attribute.
inline std::size_t encoded_width(const Schema& schema) {
  std::size_t width = 0;
  for (std::size_t a = 0; a < schema.size(); ++a) {
    if (a == schema.label_index()) continue;
    const auto& spec = schema.attribute(a);
    width += spec.kind == AttributeKind::categorical ? spec.domain.size() : 1;
  }
  return width;
}

/// Encodes one record: categorical attributes one-hot in domain order,
/// numeric attributes z-scored with `stats`, label excluded, attributes
/// concatenated in schema order.
inline std::vector<double> encode(const Record& rec, const Schema& schema,
                                  const FeatureStats& stats) {
  std::vector<double> out;
  out.reserve(encoded_width(schema));
  for (std::size_t a = 0; a < schema.size(); ++a) {
    if (a == schema.label_index()) continue;
    const auto& spec = schema.attribute(a);
    if (spec.kind == AttributeKind::categorical) {
      const auto idx = rec.category_index(a);
      if (idx < 0 || static_cast<std::size_t>(idx) >= spec.domain.size()) {
        throw DataError("encode: unknown category for attribute '" + spec.name + "'");
      }
      for (std::size_t d = 0; d < spec.domain.size(); ++d) {
        out.push_back(d == static_cast<std::size_t>(idx) ? 1.0 : 0.0);
      }
    } else {
      out.push_back((rec.numeric(a) - stats.mean[a]) / stats.stddev[a]);
    }
  }
  return out;
}

/// A dataset in model space: row-per-record feature matrix plus integer
/// labels aligned to the label attribute's domain order.
struct EncodedDataset {
  Eigen::MatrixXd features;          // n x encoded_width
  std::vector<int> labels;           // n, domain indices
  std::vector<std::string> label_values;
};

inline EncodedDataset encode_dataset(const Dataset& dataset, const FeatureStats& stats) {
  const auto& schema = dataset.schema();
  const std::size_t width = encoded_width(schema);
  EncodedDataset out;
  out.features.resize(static_cast<Eigen::Index>(dataset.size()),
                      static_cast<Eigen::Index>(width));
  out.labels.reserve(dataset.size());
  out.label_values = schema.label().domain;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto row = encode(dataset.records()[i], schema, stats);
    for (std::size_t c = 0; c < width; ++c) {
      out.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = row[c];
    }
    out.labels.push_back(dataset.records()[i].category_index(schema.label_index()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Draws two disjoint uniform random subsets (train, test) of the given
/// sizes. Record ids are preserved. Deterministic in `seed`.
inline std::pair<Dataset, Dataset> sample_split(const Dataset& dataset, std::size_t n_train,
                                                std::size_t n_test, std::uint64_t seed) {
  if (n_train + n_test > dataset.size()) {
    throw DataError("sample_split: need " + std::to_string(n_train + n_test) +
                    " records, dataset has " + std::to_string(dataset.size()));
  }
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto rng = make_rng(seed);
  shuffle(order, rng);

  std::vector<Record> train, test;
  train.reserve(n_train);
  test.reserve(n_test);
  for (std::size_t i = 0; i < n_train; ++i) train.push_back(dataset.records()[order[i]]);
  for (std::size_t i = 0; i < n_test; ++i) {
    test.push_back(dataset.records()[order[n_train + i]]);
  }
  return {Dataset(dataset.schema(), std::move(train)),
          Dataset(dataset.schema(), std::move(test))};
}

// ---------------------------------------------------------------------------
// Updates
// ---------------------------------------------------------------------------

/// One homogeneous change: `count` records currently holding `before` in
/// `attribute` (which must be the target attribute) are switched to `after`.
struct UpdateRule {
  std::string attribute;
  std::string before;
  std::string after;
  std::size_t count = 1;
};

/// Ground truth of an applied rule. Receipts exist for evaluation only; the
/// attack operations have no access to them.
struct UpdateReceipt {
  UpdateRule rule;
  std::vector<std::int64_t> updated_ids;  // ascending
};

struct UpdateResult {
  Dataset dataset;
  std::vector<UpdateReceipt> receipts;
};

namespace detail {

inline void validate_rule(const UpdateRule& rule, const Schema& schema) {
  const auto& target = schema.target();
  if (rule.attribute != target.name) {
    throw ConfigError("update rule: attribute '" + rule.attribute +
                      "' is not the target attribute '" + target.name + "'");
  }
  if (rule.count == 0) throw ConfigError("update rule: count must be positive");
  if (rule.before == rule.after) {
    throw ConfigError("update rule: before and after are both '" + rule.before + "'");
  }
  if (target.domain_index(rule.before) < 0) {
    throw ConfigError("update rule: before value '" + rule.before + "' not in target domain");
  }
  if (target.domain_index(rule.after) < 0) {
    throw ConfigError("update rule: after value '" + rule.after + "' not in target domain");
  }
}

}  // namespace detail

/// Rewrites the target attribute of the given records from `rule.before` to
/// `rule.after`. Every id must exist and currently hold `before`. Returns the
/// new dataset plus the receipt; the input dataset is unchanged.
inline UpdateResult apply_update_to_ids(const Dataset& dataset, const UpdateRule& rule,
                                        std::vector<std::int64_t> ids) {
  detail::validate_rule(rule, dataset.schema());
  if (ids.size() != rule.count) {
    throw DataError("apply_update_to_ids: rule count " + std::to_string(rule.count) +
                    " does not match " + std::to_string(ids.size()) + " ids");
  }
  const auto& schema = dataset.schema();
  const std::size_t t = schema.target_index();
  const auto before_idx =
      static_cast<std::int32_t>(schema.target().domain_index(rule.before));
  const auto after_idx = static_cast<std::int32_t>(schema.target().domain_index(rule.after));

  std::vector<Record> records = dataset.records();
  std::unordered_set<std::int64_t> wanted(ids.begin(), ids.end());
  if (wanted.size() != ids.size()) throw DataError("apply_update_to_ids: duplicate ids");
  std::size_t touched = 0;
  for (auto& rec : records) {
    if (!wanted.count(rec.id)) continue;
    if (rec.category_index(t) != before_idx) {
      throw DataError("apply_update_to_ids: record " + std::to_string(rec.id) +
                      " does not hold '" + rule.before + "'");
    }
    rec.cells[t] = after_idx;
    ++touched;
  }
  if (touched != ids.size()) throw DataError("apply_update_to_ids: unknown record id");

  std::sort(ids.begin(), ids.end());
  return UpdateResult{Dataset(schema, std::move(records)),
                      {UpdateReceipt{rule, std::move(ids)}}};
}

/// Applies a batch of update rules. For each rule, `count` records are chosen
/// uniformly at random (seeded) among records that currently hold `before`
/// and were not already claimed by an earlier rule of the batch. Returns a
/// new dataset; every cell outside the selected target cells is identical to
/// the input.
inline UpdateResult apply_update_batch(const Dataset& dataset,
                                       const std::vector<UpdateRule>& rules,
                                       std::uint64_t seed) {
  const auto& schema = dataset.schema();
  for (const auto& rule : rules) detail::validate_rule(rule, schema);

  const std::size_t t = schema.target_index();
  std::vector<Record> records = dataset.records();
  std::unordered_set<std::int64_t> claimed;
  std::vector<UpdateReceipt> receipts;
  auto rng = make_rng(seed);

  for (const auto& rule : rules) {
    const auto before_idx =
        static_cast<std::int32_t>(schema.target().domain_index(rule.before));
    const auto after_idx =
        static_cast<std::int32_t>(schema.target().domain_index(rule.after));
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].category_index(t) == before_idx && !claimed.count(records[i].id)) {
        eligible.push_back(i);
      }
    }
    if (eligible.size() < rule.count) {
      throw DataError("apply_update_batch: rule " + rule.before + "->" + rule.after +
                      " needs " + std::to_string(rule.count) + " eligible records, found " +
                      std::to_string(eligible.size()));
    }
    auto chosen = sample_without_replacement(eligible, rule.count, rng);
    std::vector<std::int64_t> ids;
    ids.reserve(chosen.size());
    for (const auto i : chosen) {
      records[i].cells[t] = after_idx;
      claimed.insert(records[i].id);
      ids.push_back(records[i].id);
    }
    std::sort(ids.begin(), ids.end());
    receipts.push_back(UpdateReceipt{rule, std::move(ids)});
  }
  return UpdateResult{Dataset(schema, std::move(records)), std::move(receipts)};
}

/// The candidate list T both attacks enumerate: the target attribute's full
/// domain, in canonical (schema declaration) order. The true pre-update value
/// is deliberately included; the attacker cannot rule it out.
inline std::vector<std::string> candidate_values(const Schema& schema) {
  return schema.target().domain;
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// Declarative recipe for the synthetic substrate used by experiments and
/// tests: a categorical target with a planted marginal (rare values are
/// planted by giving them small mass), a set of pure-noise attributes, and a
/// planted table P(y = positive | t, c) that gives the target real label
/// signal. When at least one categorical noise attribute exists, `c` is the
/// value of the first one; otherwise the table has a single column.
struct SyntheticSpec {
  std::size_t n = 0;
  std::string target_name = "t";
  std::vector<std::string> target_values;
  std::vector<double> target_probs;
  std::string label_name = "y";
  std::vector<std::string> label_values = {"neg", "pos"};
  std::size_t categorical_noise = 0;   // number of categorical noise attributes
  std::size_t noise_cardinality = 2;   // domain size of each categorical noise attribute
  std::size_t numeric_noise = 0;       // number of numeric noise attributes, U[0,1)
  std::vector<std::vector<double>> py_table;  // |T| rows x (1 or noise_cardinality) cols

  static SyntheticSpec from_json(const json& j) {
    const std::string where = "synthetic";
    detail::require_keys(j, where,
                         {"n", "target", "label", "noise", "py_table"});
    SyntheticSpec spec;
    spec.n = detail::get_required<std::size_t>(j, where, "n");

    const auto& tj = j.contains("target") ? j.at("target") : json::object();
    detail::require_keys(tj, where + ".target", {"name", "values", "probs"});
    spec.target_name = detail::get_or<std::string>(tj, where + ".target", "name", "t");
    spec.target_values =
        detail::get_required<std::vector<std::string>>(tj, where + ".target", "values");
    spec.target_probs =
        detail::get_required<std::vector<double>>(tj, where + ".target", "probs");

    if (j.contains("label")) {
      const auto& lj = j.at("label");
      detail::require_keys(lj, where + ".label", {"name", "values"});
      spec.label_name = detail::get_or<std::string>(lj, where + ".label", "name", "y");
      spec.label_values = detail::get_or<std::vector<std::string>>(
          lj, where + ".label", "values", {"neg", "pos"});
    }
    if (j.contains("noise")) {
      const auto& nj = j.at("noise");
      detail::require_keys(nj, where + ".noise", {"categorical", "cardinality", "numeric"});
      spec.categorical_noise =
          detail::get_or<std::size_t>(nj, where + ".noise", "categorical", 0);
      spec.noise_cardinality =
          detail::get_or<std::size_t>(nj, where + ".noise", "cardinality", 2);
      spec.numeric_noise = detail::get_or<std::size_t>(nj, where + ".noise", "numeric", 0);
    }
    spec.py_table = detail::get_required<std::vector<std::vector<double>>>(j, where, "py_table");
    spec.validate();
    return spec;
  }

  json to_json() const {
    json j;
    j["n"] = n;
    j["target"] = {{"name", target_name}, {"values", target_values}, {"probs", target_probs}};
    j["label"] = {{"name", label_name}, {"values", label_values}};
    j["noise"] = {{"categorical", categorical_noise},
                  {"cardinality", noise_cardinality},
                  {"numeric", numeric_noise}};
    j["py_table"] = py_table;
    return j;
  }

  void validate() const {
    if (n == 0) throw ConfigError("synthetic: n must be positive");
    if (target_values.empty()) throw ConfigError("synthetic: target needs at least one value");
    if (target_probs.size() != target_values.size()) {
      throw ConfigError("synthetic: target probs/values length mismatch");
    }
    double sum = 0.0;
    for (double p : target_probs) {
      if (p < 0.0 || p > 1.0) throw ConfigError("synthetic: target prob out of [0,1]");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw ConfigError("synthetic: target probs sum to " + std::to_string(sum) + ", not 1");
    }
    if (label_values.size() != 2) throw ConfigError("synthetic: label must be binary");
    if (categorical_noise > 0 && noise_cardinality < 2) {
      throw ConfigError("synthetic: noise cardinality must be at least 2");
    }
    if (py_table.size() != target_values.size()) {
      throw ConfigError("synthetic: py_table needs one row per target value");
    }
    const std::size_t want_cols = categorical_noise > 0 ? noise_cardinality : 1;
    for (const auto& row : py_table) {
      if (row.size() != 1 && row.size() != want_cols) {
        throw ConfigError("synthetic: py_table rows must have 1 or " +
                          std::to_string(want_cols) + " columns");
      }
      for (double p : row) {
        if (p < 0.0 || p > 1.0) throw ConfigError("synthetic: py_table entry out of [0,1]");
      }
    }
  }

  Schema schema() const {
    std::vector<AttributeSpec> attrs;
    AttributeSpec target;
    target.name = target_name;
    target.kind = AttributeKind::categorical;
    target.role = AttributeRole::target;
    target.domain = target_values;
    attrs.push_back(std::move(target));
    for (std::size_t k = 0; k < categorical_noise; ++k) {
      AttributeSpec a;
      a.name = "noise" + std::to_string(k);
      a.kind = AttributeKind::categorical;
      a.role = AttributeRole::known;
      for (std::size_t c = 0; c < noise_cardinality; ++c) a.domain.push_back("c" + std::to_string(c));
      attrs.push_back(std::move(a));
    }
    for (std::size_t k = 0; k < numeric_noise; ++k) {
      AttributeSpec a;
      a.name = "num" + std::to_string(k);
      a.kind = AttributeKind::numeric;
      a.role = AttributeRole::known;
      attrs.push_back(std::move(a));
    }
    AttributeSpec label;
    label.name = label_name;
    label.kind = AttributeKind::categorical;
    label.role = AttributeRole::label;
    label.domain = label_values;
    attrs.push_back(std::move(label));
    return Schema(std::move(attrs));
  }
};

/// Generates the synthetic dataset. Per record the draw order is fixed:
/// target value, categorical noise attributes, numeric noise attributes,
/// label. Deterministic in `seed`.
inline Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  const Schema schema = spec.schema();
  auto rng = make_rng(seed);
  std::vector<Record> records;
  records.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    Record rec;
    rec.id = static_cast<std::int64_t>(i);
    rec.cells.reserve(schema.size());
    const std::size_t t = categorical_draw(spec.target_probs, rng);
    rec.cells.push_back(static_cast<std::int32_t>(t));
    std::size_t first_noise = 0;
    for (std::size_t k = 0; k < spec.categorical_noise; ++k) {
      const auto c = uniform_below(rng, spec.noise_cardinality);
      if (k == 0) first_noise = static_cast<std::size_t>(c);
      rec.cells.push_back(static_cast<std::int32_t>(c));
    }
    for (std::size_t k = 0; k < spec.numeric_noise; ++k) {
      rec.cells.push_back(uniform_real01(rng));
    }
    const auto& row = spec.py_table[t];
    const double p_pos = row.size() == 1 ? row[0] : row[first_noise];
    const bool positive = uniform_real01(rng) < p_pos;
    rec.cells.push_back(static_cast<std::int32_t>(positive ? 1 : 0));
    records.push_back(std::move(rec));
  }
  return Dataset(schema, std::move(records));
}

}  // namespace updateleak
