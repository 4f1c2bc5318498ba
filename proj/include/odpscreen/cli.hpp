#pragma once

#include "odpscreen/propensity.hpp"

#include <string>
#include <vector>

namespace odpscreen::cli {

/// Parses "constant:0.5", "column:<name>" or "lasso[:folds=K]".
/// Column specs are returned as an empty SuppliedPropensity; `column` names
/// the CSV column to read.
PropensitySpec parse_propensity(const std::string& text, std::string* column = nullptr);

/// Comma-separated list of doubles ("0.05,0.10").
std::vector<double> parse_list(const std::string& text);

/// Entry point for the odpscreen binary. Exit status: 0 success, 2 invalid
/// input or usage, 1 runtime failure.
int run(int argc, char** argv);
int run(std::vector<std::string> args);

}  // namespace odpscreen::cli
