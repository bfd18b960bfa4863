#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mgalign {

enum class ErrorCode {
  UnknownToken,
  ArityMismatch,
  TrailingTokens,
  SequenceTooLong,
  SplitOverlap,
  EmptyTrain,
  ParseError,
  DuplicateCharacter,
  CharNotInLexicon,
  MissingImage,
  UnreadableImage,
  BadShape,
  ShapeMismatch,
  OutOfVocab,
  TooLong,
  LevelMismatch,
  NonFiniteLoss,
  DataExhausted,
  VersionMismatch,
  CorruptFile,
  DuplicateCandidate,
  EmptySplit,
  EmptyGallery,
  VocabMismatch,
  InvalidConfig,
  IoError,
};

std::string_view error_name(ErrorCode code);

// Every failure raised by the library carries one of the codes above so that
// callers (the CLI in particular) can report the module-level error name.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view name() const noexcept { return error_name(code_); }

 private:
  ErrorCode code_;
};

}  // namespace mgalign
