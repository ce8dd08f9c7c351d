// Copyright 2026 The molformer-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#include "molformer/errors.hpp"

namespace molformer {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kUnlexableCharacter: return "UnlexableCharacter";
    case ErrorCode::kNoValidLines: return "NoValidLines";
    case ErrorCode::kTooLong: return "TooLong";
    case ErrorCode::kUnknownId: return "UnknownId";
    case ErrorCode::kOutOfRange: return "OutOfRange";
    case ErrorCode::kDegenerateVocab: return "DegenerateVocab";
    case ErrorCode::kEmptyLossMask: return "EmptyLossMask";
    case ErrorCode::kDetachedTensor: return "DetachedTensor";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kOddHeadDim: return "OddHeadDim";
    case ErrorCode::kAllMasked: return "AllMasked";
    case ErrorCode::kSequenceTooLongForAnalysis: return "SequenceTooLongForAnalysis";
    case ErrorCode::kPositionOverflow: return "PositionOverflow";
    case ErrorCode::kIdOverflow: return "IdOverflow";
    case ErrorCode::kDimMismatch: return "DimMismatch";
    case ErrorCode::kNonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::kLabelParse: return "LabelParse";
    case ErrorCode::kEmptySplit: return "EmptySplit";
    case ErrorCode::kSingleClass: return "SingleClass";
    case ErrorCode::kNoAlignedMolecules: return "NoAlignedMolecules";
    case ErrorCode::kDegeneratePairs: return "DegeneratePairs";
    case ErrorCode::kHashConfigMismatch: return "HashConfigMismatch";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kConfig: return "Config";
    case ErrorCode::kCheckpointFormat: return "CheckpointFormat";
  }
  return "Unknown";
}

int exit_code_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kIo:
      return 1;
    case ErrorCode::kNonFinite:
    case ErrorCode::kNonFiniteGradient:
      return 3;
    default:
      return 2;
  }
}

}  // namespace molformer
