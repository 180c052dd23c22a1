#pragma once

#include <stdexcept>
#include <string>

namespace kads {

/// Root of every error the library throws. Each subclass corresponds to one
/// failure category so callers (and the CLI exit-code mapping) can dispatch
/// on type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error { using Error::Error; };
class IntegrityError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class BoundsError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class IncompatibleError : public Error { using Error::Error; };
class VocabError : public Error { using Error::Error; };
class LengthError : public Error { using Error::Error; };
class LabelError : public Error { using Error::Error; };
class InputError : public Error { using Error::Error; };
class InternalError : public Error { using Error::Error; };

}  // namespace kads
