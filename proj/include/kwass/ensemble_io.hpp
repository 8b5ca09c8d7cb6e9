#pragma once

#include "kwass/measures.hpp"

#include <iosfwd>
#include <string>

namespace kwass {

// Ensemble CSV: header `x1..xd,v1..vd,w`, one particle per row. Loading wraps
// positions into [0,1) and normalizes the weights.
PhaseEnsemble read_ensemble_csv(std::istream& in);
PhaseEnsemble read_ensemble_csv(const std::string& path);
void write_ensemble_csv(std::ostream& out, const PhaseEnsemble& ens);
void write_ensemble_csv(const std::string& path, const PhaseEnsemble& ens);

// Shortest round-trip decimal representation used in every CSV we emit.
std::string format_number(double x);

}  // namespace kwass
