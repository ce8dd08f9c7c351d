// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace molformer {

enum class ErrorCode {
  // tokenizer
  kEmptyInput,
  kUnlexableCharacter,
  kNoValidLines,
  kTooLong,
  kUnknownId,
  // dataset
  kOutOfRange,
  kDegenerateVocab,
  // nncore
  kEmptyLossMask,
  kDetachedTensor,
  kShapeMismatch,
  kNonFinite,
  // attention
  kOddHeadDim,
  kAllMasked,
  kSequenceTooLongForAnalysis,
  // model
  kPositionOverflow,
  kIdOverflow,
  kDimMismatch,
  // train
  kNonFiniteGradient,
  kLabelParse,
  kEmptySplit,
  kSingleClass,
  // analysis
  kNoAlignedMolecules,
  kDegeneratePairs,
  kHashConfigMismatch,
  // plumbing
  kIo,
  kConfig,
  kCheckpointFormat,
};

std::string_view error_code_name(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so that
/// callers (the CLI in particular) can map it to an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code), detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  /// The message without the code-name prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

/// Exit status taxonomy: 1 for I/O, 3 for numeric aborts, 2 for everything
/// that is a validation failure of the inputs.
int exit_code_for(ErrorCode code) noexcept;

}  // namespace molformer
