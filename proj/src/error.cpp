#include "mgalign/error.hpp"

namespace mgalign {

std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownToken: return "UnknownToken";
    case ErrorCode::ArityMismatch: return "ArityMismatch";
    case ErrorCode::TrailingTokens: return "TrailingTokens";
    case ErrorCode::SequenceTooLong: return "SequenceTooLong";
    case ErrorCode::SplitOverlap: return "SplitOverlap";
    case ErrorCode::EmptyTrain: return "EmptyTrain";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DuplicateCharacter: return "DuplicateCharacter";
    case ErrorCode::CharNotInLexicon: return "CharNotInLexicon";
    case ErrorCode::MissingImage: return "MissingImage";
    case ErrorCode::UnreadableImage: return "UnreadableImage";
    case ErrorCode::BadShape: return "BadShape";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::OutOfVocab: return "OutOfVocab";
    case ErrorCode::TooLong: return "TooLong";
    case ErrorCode::LevelMismatch: return "LevelMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::DataExhausted: return "DataExhausted";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::DuplicateCandidate: return "DuplicateCandidate";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::EmptyGallery: return "EmptyGallery";
    case ErrorCode::VocabMismatch: return "VocabMismatch";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace mgalign
