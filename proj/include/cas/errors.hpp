#pragma once

#include <stdexcept>
#include <string>

namespace cas {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionMismatch : Error { using Error::Error; };
struct NonFiniteInput : Error { using Error::Error; };
struct SingularSystem : Error { using Error::Error; };
struct ZeroVector : Error { using Error::Error; };

struct ConfigInvalid : Error { using Error::Error; };
struct PositionOutOfRange : Error { using Error::Error; };
struct LayerOutOfRange : Error { using Error::Error; };
struct LengthOverflow : Error { using Error::Error; };

struct ParseError : Error { using Error::Error; };
struct FormatVersionMismatch : Error { using Error::Error; };
struct MirrorViolation : Error { using Error::Error; };
struct DuplicateId : Error { using Error::Error; };
struct CountsTooSmall : Error { using Error::Error; };
struct UntokenizableAnswer : Error { using Error::Error; };
struct CandidateCollision : Error { using Error::Error; };

struct IdOutOfVocab : Error { using Error::Error; };
struct TooFewSamples : Error { using Error::Error; };
struct TooFewGroups : Error { using Error::Error; };
struct SetupMismatch : Error { using Error::Error; };
struct DimMismatch : Error { using Error::Error; };

struct MissingLayerVector : Error { using Error::Error; };
struct MissingAnnotation : Error { using Error::Error; };
struct AllZeroPrior : Error { using Error::Error; };
struct UnknownImage : Error { using Error::Error; };
struct EmptyCorpus : Error { using Error::Error; };

struct StageError : Error { using Error::Error; };

}  // namespace cas
