// include/segprobe/error.h

// Copyright 2026  The segprobe Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace segprobe {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file; the message carries file, line and tier context.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Precondition on a value or shape failed.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// An optimizer or decomposition could not produce a usable result.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage ran before the stage that produces its inputs.
class DependencyError : public Error {
 public:
  DependencyError(std::string stage, const std::string& what)
      : Error(what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace segprobe
