#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace odpscreen {

/// 0/1 response per subject.
struct BinaryOutcomes {
  std::vector<double> y;
};

/// Right-censored survival: observed time (> 0) and event flag (1 = failure).
struct SurvivalOutcomes {
  std::vector<double> time;
  std::vector<double> event;
};

// Column-level variant: every subject carries the same outcome kind.
using Outcomes = std::variant<BinaryOutcomes, SurvivalOutcomes>;

std::size_t outcome_count(const Outcomes& outcomes);
bool is_survival(const Outcomes& outcomes);

/// Restricts outcomes to the given rows (in the given order).
Outcomes subset_outcomes(const Outcomes& outcomes, const std::vector<std::size_t>& rows);

/// Observed data for one study. Immutable once built by make_dataset().
struct Dataset {
  Outcomes outcomes;
  Eigen::VectorXd treatment;  // entries in {-1, +1}
  Eigen::MatrixXd X;          // n x p biomarkers
  Eigen::MatrixXd Z;          // n x q confounders (q may be 0)
  std::vector<std::string> biomarker_names;
  std::vector<std::string> confounder_names;
  std::vector<std::string> outcome_names;
  std::string treatment_name = "trt";

  std::size_t n() const { return static_cast<std::size_t>(X.rows()); }
  std::size_t p() const { return static_cast<std::size_t>(X.cols()); }
  std::size_t q() const { return static_cast<std::size_t>(Z.cols()); }
};

/// Validates the invariants and returns the assembled dataset.
///
/// Throws ValidationError when n < 2, a treatment arm is empty, outcomes
/// are out of range, any matrix entry is non-finite, or shapes disagree.
/// Missing names are filled with x1..xp / z1..zq.
Dataset make_dataset(Outcomes outcomes, Eigen::VectorXd treatment, Eigen::MatrixXd X,
                     Eigen::MatrixXd Z, std::vector<std::string> biomarker_names = {},
                     std::vector<std::string> confounder_names = {});

/// Column roles for CSV ingestion. Every column not named here is a biomarker.
struct Schema {
  std::vector<std::string> outcome;  // {"y"} or {"time", "event"}
  std::string treatment = "trt";
  std::vector<std::string> confounders;
  std::vector<std::string> ignored;  // e.g. a supplied propensity column
};

/// Maps a raw treatment code to {-1,+1}. {0,1} codings become {-1,+1};
/// values already in {-1,+1} pass through.
Eigen::VectorXd recode_treatment(const std::vector<double>& raw);

Dataset load_dataset(const std::filesystem::path& path, const Schema& schema);

/// Reads a single numeric column by header name (used for supplied propensities).
std::vector<double> load_column(const std::filesystem::path& path, const std::string& name);

/// Writes the dataset as CSV with 17 significant digits so that
/// load_dataset() recovers every value exactly.
void write_dataset(const std::filesystem::path& path, const Dataset& d);

struct Diagnostic {
  enum class Level { info, warning };
  Level level;
  std::string message;
};

std::vector<Diagnostic> validate_dataset(const Dataset& d);

/// Fraction of censored subjects; 0 for binary data.
double censoring_fraction(const Dataset& d);

/// True when column k of X has zero range.
bool is_constant_column(const Dataset& d, std::size_t k);

}  // namespace odpscreen
