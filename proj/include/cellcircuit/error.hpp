// Copyright 2026 The cellcircuit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace cellcircuit {

enum class ErrorKind {
  kConfig,    // invalid configuration values or config file
  kInput,     // caller passed out-of-range or malformed arguments
  kParse,     // malformed text input (CSV, vocab, circuit)
  kFormat,    // malformed binary artifact (checkpoint)
  kState,     // required artifact or capture missing
  kNumeric,   // non-finite values
  kTraining,  // divergence during optimization
  kGuard,     // instance exceeds a documented size guard
  kIo,        // filesystem failure
};

const char* ErrorKindName(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void Fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace cellcircuit
