#pragma once

#include <stdexcept>
#include <string>

namespace succlab {

/// Broad failure class; the CLI maps each category to an exit code.
enum class ErrorCategory { usage, data, numeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, std::string kind, const std::string& what)
      : std::runtime_error(what), category_(category), kind_(std::move(kind)) {}

  ErrorCategory category() const noexcept { return category_; }
  /// Short machine-readable tag, e.g. "format", "vocab", "training".
  const std::string& kind() const noexcept { return kind_; }

 private:
  ErrorCategory category_;
  std::string kind_;
};

#define SUCCLAB_DEFINE_ERROR(Name, category, tag)                       \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& what) : Error(category, tag, what) {} \
  };

SUCCLAB_DEFINE_ERROR(UsageError, ErrorCategory::usage, "usage")
SUCCLAB_DEFINE_ERROR(FormatError, ErrorCategory::data, "format")
SUCCLAB_DEFINE_ERROR(IntegrityError, ErrorCategory::data, "integrity")
SUCCLAB_DEFINE_ERROR(IoError, ErrorCategory::data, "io")
SUCCLAB_DEFINE_ERROR(ConfigError, ErrorCategory::data, "config")
SUCCLAB_DEFINE_ERROR(ContextError, ErrorCategory::data, "context")
SUCCLAB_DEFINE_ERROR(VocabError, ErrorCategory::data, "vocab")
SUCCLAB_DEFINE_ERROR(IndexError, ErrorCategory::data, "index")
SUCCLAB_DEFINE_ERROR(DatasetError, ErrorCategory::data, "dataset")
SUCCLAB_DEFINE_ERROR(DomainError, ErrorCategory::data, "domain")
SUCCLAB_DEFINE_ERROR(TrainingError, ErrorCategory::numeric, "training")
SUCCLAB_DEFINE_ERROR(NumericError, ErrorCategory::numeric, "numeric")

#undef SUCCLAB_DEFINE_ERROR

}  // namespace succlab
