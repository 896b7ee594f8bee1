#pragma once

#include <stdexcept>
#include <string>

namespace sdc {

// Base class for all toolkit errors. One subclass per failure mode named in
// the module contracts, so callers can catch exactly what they can handle.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define SDC_DEFINE_ERROR(NAME)        \
    class NAME : public Error {       \
    public:                           \
        using Error::Error;           \
    }

// datamodel
SDC_DEFINE_ERROR(InsufficientRepeats);
SDC_DEFINE_ERROR(NoRepeats);
SDC_DEFINE_ERROR(EmptySelection);
SDC_DEFINE_ERROR(SessionTooSmall);

// decoder / evaluation
SDC_DEFINE_ERROR(ZeroVector);
SDC_DEFINE_ERROR(NonFiniteLoss);
SDC_DEFINE_ERROR(DimensionMismatch);
SDC_DEFINE_ERROR(ShapeMismatch);
SDC_DEFINE_ERROR(SingularMatrix);
SDC_DEFINE_ERROR(DegenerateRow);

// clustering / concepts
SDC_DEFINE_ERROR(TooFewParticipants);
SDC_DEFINE_ERROR(EmptyCluster);
SDC_DEFINE_ERROR(DegenerateCentroid);
SDC_DEFINE_ERROR(EmptyCorpus);
SDC_DEFINE_ERROR(MissingItem);

// synth / pipeline
SDC_DEFINE_ERROR(InfeasibleSpec);
SDC_DEFINE_ERROR(MissingUpstream);
SDC_DEFINE_ERROR(ConfigInvalid);

#undef SDC_DEFINE_ERROR

} // namespace sdc
