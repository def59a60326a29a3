/*
 * Copyright 2026 The fixpt Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef FIXPT_ERRORS_HPP
#define FIXPT_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fixpt {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rejected input: shape mismatch, out-of-range hyperparameter, bad config.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A bordered or dense linear system had a vanishing pivot.
class SingularSystem : public Error {
 public:
  SingularSystem(const std::string& what, long step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

/// A solver produced a non-finite state or failed to converge where
/// convergence was required.
class Divergence : public Error {
 public:
  Divergence(const std::string& what, std::size_t iteration)
      : Error(what + " (iteration " + std::to_string(iteration) + ")"),
        detail_(what),
        iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }
  /// Message without the iteration suffix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string detail_;
  std::size_t iteration_;
};

/// A trace never reached the requested tolerance.
class NotReached : public Error {
 public:
  using Error::Error;
};

/// Malformed CSV or JSON input.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fixpt

#endif  // FIXPT_ERRORS_HPP
