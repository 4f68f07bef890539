#pragma once

#include <stdexcept>
#include <string>

namespace utaug {

// Invalid arguments are reported with std::invalid_argument throughout.
// The types below cover the remaining error categories.

/// Wrong magic bytes or unsupported version in a binary file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File ends early, or its payload disagrees with its header.
class CorruptFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operation requested on an object in the wrong state (unconverged fit,
/// incomplete session, ...).
class InvalidStateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Out-of-order or duplicate submission against a session.
class ConflictError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unknown trial, session or image id.
class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Signalled by next_image once every image in a session has been answered.
class EndOfTrial : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A root search could not bracket a solution.
class NoSolutionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int epoch, const std::string& what)
      : std::runtime_error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

}  // namespace utaug
