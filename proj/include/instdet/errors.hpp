#pragma once

#include <stdexcept>
#include <string>

namespace instdet {

// A caller broke a documented precondition (mixed object ids, missing depth...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Tensor or image shape does not match the configuration.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class RenderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when a loss component becomes non-finite; the message names the component.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace instdet
