// Copyright 2026 The coa Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef COA_ERROR_HPP_
#define COA_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace coa {

enum class ErrorKind {
  kShape,
  kNonFinite,
  kDomain,
  kIo,
  kFormat,
  kChecksum,
  kConfig,
};

// All library failures are reported as coa::Error. The kind decides the
// C API status code (and through it the CLI exit code).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace coa

#endif  // COA_ERROR_HPP_
