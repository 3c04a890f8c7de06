// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace recalign {

/// Malformed input record. Carries the 1-based line number of the offending line.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// An interaction references an item that has no metadata record.
class MissingItemError : public std::runtime_error {
 public:
  explicit MissingItemError(const std::string& item_id)
      : std::runtime_error("item '" + item_id + "' has no metadata record"), item_id_(item_id) {}
  const std::string& item_id() const noexcept { return item_id_; }

 private:
  std::string item_id_;
};

class LookupError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// The catalog cannot produce a label list satisfying the requested intention.
class InfeasibleSample : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TemplateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Violated internal precondition (shape mismatch, missing rank, ...).
class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace recalign
