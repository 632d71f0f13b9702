/*
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    https://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
#pragma once

#include <stdexcept>
#include <string>

namespace ducp {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes. The message names both shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A configuration value or argument is outside its allowed range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// The caller violated an API precondition (empty input, non-scalar loss, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A mathematical function was evaluated outside its domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or a numerical procedure that failed to converge.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace ducp
