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

#include <stdexcept>
#include <string>

namespace updateleak {

/// Base error for every failure this library raises.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Bad configuration: malformed config/schema files, invalid option combinations.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what) {}
};

/// Bad or insufficient data: missing files, schema mismatches, empty datasets,
/// exhausted update eligibility.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(what) {}
};

/// Training failure: divergence, non-finite losses, unusable label sets.
class TrainError : public Error {
 public:
  explicit TrainError(const std::string& what) : Error(what) {}
};

}  // namespace updateleak
