#pragma once

#include <stdexcept>
#include <string>

namespace dmtk {

/// Base class for all toolkit errors. Subcommands map these to exit code 1/2.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define DMTK_DEFINE_ERROR(Name)                                 \
  class Name : public Error {                                   \
  public:                                                       \
    explicit Name(const std::string& msg) : Error(msg) {}       \
  }

DMTK_DEFINE_ERROR(BoundsError);          // shape touches the grid margin zone
DMTK_DEFINE_ERROR(ResolutionError);      // kernel not resolved by the grid
DMTK_DEFINE_ERROR(DegenerateLevel);      // empty level set
DMTK_DEFINE_ERROR(NoRegularLevel);       // every candidate level blacklisted
DMTK_DEFINE_ERROR(AtomOnBoundary);       // atom within one cell of a region boundary
DMTK_DEFINE_ERROR(AtomRejected);         // measure with atoms where H^{N-1} absolute continuity is required
DMTK_DEFINE_ERROR(DivergenceMismatch);   // declared divergence fails the finite-difference spot check
DMTK_DEFINE_ERROR(PartitionError);       // piecewise regions do not partition the domain
DMTK_DEFINE_ERROR(FatnessViolated);      // uniform exterior-density hypothesis fails
DMTK_DEFINE_ERROR(InclusionFailed);      // no level in the band gives a one-sided inclusion
DMTK_DEFINE_ERROR(AxiomViolation);       // Cauchy-flux axiom fails; message names axiom and witness
DMTK_DEFINE_ERROR(UnknownFace);          // synthetic flux queried off its face table
DMTK_DEFINE_ERROR(LaxViolation);         // entropy dissipation has the wrong sign
DMTK_DEFINE_ERROR(NonConvexUnsupported); // Riemann solver requires a convex flux
DMTK_DEFINE_ERROR(ConfigError);          // experiment config unreadable or inconsistent

#undef DMTK_DEFINE_ERROR

}  // namespace dmtk
