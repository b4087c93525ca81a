#pragma once

#include <stdexcept>
#include <string>

namespace molembed {

/// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define MOLEMBED_DEFINE_ERROR(NAME)                                   \
    struct NAME : Error {                                             \
        explicit NAME(const std::string& msg) : Error(#NAME ": " + msg) {} \
    }

// I/O
MOLEMBED_DEFINE_ERROR(IoError);

// chem_data
MOLEMBED_DEFINE_ERROR(InvalidSmiles);
MOLEMBED_DEFINE_ERROR(EmptyCorpus);
MOLEMBED_DEFINE_ERROR(UnknownToken);
MOLEMBED_DEFINE_ERROR(Overlength);
MOLEMBED_DEFINE_ERROR(SchemaError);

// descriptors
MOLEMBED_DEFINE_ERROR(UnsupportedAtom);
MOLEMBED_DEFINE_ERROR(EmptySelection);
MOLEMBED_DEFINE_ERROR(DegenerateColumn);
MOLEMBED_DEFINE_ERROR(InvalidTargetCorrelation);
MOLEMBED_DEFINE_ERROR(UnsupportedDescriptor);

// neural_core
MOLEMBED_DEFINE_ERROR(ShapeError);
MOLEMBED_DEFINE_ERROR(NonFiniteGradient);
MOLEMBED_DEFINE_ERROR(TrainingUnstable);
MOLEMBED_DEFINE_ERROR(NumericError);

// vae / qsar / latent_analysis
MOLEMBED_DEFINE_ERROR(ConfigError);
MOLEMBED_DEFINE_ERROR(CvError);
MOLEMBED_DEFINE_ERROR(DegenerateTarget);
MOLEMBED_DEFINE_ERROR(EmptySet);
MOLEMBED_DEFINE_ERROR(RankError);
MOLEMBED_DEFINE_ERROR(IncompleteOOF);

#undef MOLEMBED_DEFINE_ERROR

/// Parse failure carrying the offending position (CSV row or string offset).
struct ParseError : Error {
    long where = -1;
    ParseError(const std::string& msg, long where_ = -1)
        : Error("ParseError: " + msg + (where_ >= 0 ? " (at " + std::to_string(where_) + ")" : "")),
          where(where_) {}
};

}  // namespace molembed
