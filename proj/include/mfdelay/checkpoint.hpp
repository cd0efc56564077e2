#pragma once

#include <iosfwd>
#include <string>

#include "mfdelay/layers.hpp"

namespace mfd {

/// Text checkpoint of named tensors:
///
///   mfdelay-checkpoint v1
///   <count>
///   <name> <rank> <dim>... then the values, 17 significant digits
///
/// one tensor per line pair.
inline constexpr const char* kCheckpointMagic = "mfdelay-checkpoint";
inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(std::ostream& out, const ParameterList& params);

/// Overwrites the values of `params` from the stream. Names and shapes must
/// match exactly; throws IoError otherwise.
void load_checkpoint(std::istream& in, ParameterList& params);

}  // namespace mfd
