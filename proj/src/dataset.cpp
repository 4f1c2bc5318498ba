#include "odpscreen/dataset.hpp"

#include "odpscreen/error.hpp"

#include <fmt/format.h>
#include <fmt/os.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <string_view>
#include <unordered_map>
#include <unordered_set>

namespace odpscreen {

std::size_t outcome_count(const Outcomes& outcomes) {
  return std::visit(
      [](const auto& o) -> std::size_t {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, BinaryOutcomes>) {
          return o.y.size();
        } else {
          return o.time.size();
        }
      },
      outcomes);
}

bool is_survival(const Outcomes& outcomes) {
  return std::holds_alternative<SurvivalOutcomes>(outcomes);
}

Outcomes subset_outcomes(const Outcomes& outcomes, const std::vector<std::size_t>& rows) {
  if (const auto* b = std::get_if<BinaryOutcomes>(&outcomes)) {
    BinaryOutcomes out;
    out.y.reserve(rows.size());
    for (auto r : rows) out.y.push_back(b->y[r]);
    return out;
  }
  const auto& s = std::get<SurvivalOutcomes>(outcomes);
  SurvivalOutcomes out;
  out.time.reserve(rows.size());
  out.event.reserve(rows.size());
  for (auto r : rows) {
    out.time.push_back(s.time[r]);
    out.event.push_back(s.event[r]);
  }
  return out;
}

namespace {

bool is_indicator(double v) { return v == 0.0 || v == 1.0; }

void check_outcomes(const Outcomes& outcomes) {
  if (const auto* b = std::get_if<BinaryOutcomes>(&outcomes)) {
    for (std::size_t i = 0; i < b->y.size(); ++i) {
      if (!is_indicator(b->y[i])) {
        throw ValidationError(fmt::format("row {}: binary outcome must be 0 or 1, got {}", i + 1, b->y[i]));
      }
    }
    return;
  }
  const auto& s = std::get<SurvivalOutcomes>(outcomes);
  if (s.time.size() != s.event.size()) {
    throw ValidationError("survival time and event vectors differ in length");
  }
  for (std::size_t i = 0; i < s.time.size(); ++i) {
    if (!(s.time[i] > 0.0) || !std::isfinite(s.time[i])) {
      throw ValidationError(fmt::format("row {}: survival time must be positive, got {}", i + 1, s.time[i]));
    }
    if (!is_indicator(s.event[i])) {
      throw ValidationError(fmt::format("row {}: event indicator must be 0 or 1, got {}", i + 1, s.event[i]));
    }
  }
}

std::vector<std::string> default_names(const char* prefix, std::size_t count) {
  std::vector<std::string> names;
  names.reserve(count);
  for (std::size_t j = 0; j < count; ++j) names.push_back(fmt::format("{}{}", prefix, j + 1));
  return names;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

void split_csv(std::string_view line, std::vector<std::string_view>& fields) {
  fields.clear();
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(trim(line.substr(start)));
      return;
    }
    fields.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> columns;  // column-major
};

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(fmt::format("cannot open '{}'", path.string()));
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(fmt::format("'{}' is empty; header row required", path.string()));

  CsvTable table;
  std::vector<std::string_view> fields;
  split_csv(line, fields);
  std::unordered_set<std::string> seen;
  for (auto f : fields) {
    std::string name(f);
    if (name.size() >= 2 && name.front() == '"' && name.back() == '"') name = name.substr(1, name.size() - 2);
    if (name.empty()) throw ValidationError("empty column name in header");
    if (!seen.insert(name).second) throw ValidationError(fmt::format("duplicate column name '{}'", name));
    table.header.push_back(std::move(name));
  }
  table.columns.resize(table.header.size());

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    split_csv(line, fields);
    if (fields.size() != table.header.size()) {
      throw ValidationError(fmt::format("row {}: expected {} fields, found {}", row, table.header.size(), fields.size()));
    }
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const auto f = fields[c];
      double value = 0.0;
      const char* first = f.data();
      const char* last = f.data() + f.size();
      if (!f.empty() && *first == '+') ++first;
      const auto [ptr, ec] = std::from_chars(first, last, value);
      if (f.empty() || ec != std::errc() || ptr != last || !std::isfinite(value)) {
        throw ValidationError(fmt::format("row {}, column '{}': missing or non-numeric value '{}'", row,
                                          table.header[c], std::string(f)));
      }
      table.columns[c].push_back(value);
    }
  }
  return table;
}

std::size_t column_index(const CsvTable& t, const std::string& name) {
  const auto it = std::find(t.header.begin(), t.header.end(), name);
  if (it == t.header.end()) throw ValidationError(fmt::format("column '{}' not found in header", name));
  return static_cast<std::size_t>(it - t.header.begin());
}

}  // namespace

Eigen::VectorXd recode_treatment(const std::vector<double>& raw) {
  bool has_zero = false;
  bool has_minus = false;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double v = raw[i];
    if (v == 0.0) {
      has_zero = true;
    } else if (v == -1.0) {
      has_minus = true;
    } else if (v != 1.0) {
      throw ValidationError(fmt::format("row {}: treatment must be coded 0/1 or -1/+1, got {}", i + 1, v));
    }
  }
  if (has_zero && has_minus) throw ValidationError("treatment mixes 0 and -1 codes");
  Eigen::VectorXd t(static_cast<Eigen::Index>(raw.size()));
  for (std::size_t i = 0; i < raw.size(); ++i) t(static_cast<Eigen::Index>(i)) = raw[i] == 1.0 ? 1.0 : -1.0;
  return t;
}

Dataset make_dataset(Outcomes outcomes, Eigen::VectorXd treatment, Eigen::MatrixXd X, Eigen::MatrixXd Z,
                     std::vector<std::string> biomarker_names, std::vector<std::string> confounder_names) {
  const auto n = static_cast<Eigen::Index>(outcome_count(outcomes));
  if (n < 2) throw ValidationError("at least two subjects are required");
  if (treatment.size() != n || X.rows() != n) throw ValidationError("outcome, treatment and biomarker rows differ");
  if (Z.size() == 0) Z.resize(n, 0);
  if (Z.rows() != n) throw ValidationError("confounder rows differ from outcome rows");
  check_outcomes(outcomes);

  bool treated = false;
  bool control = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (treatment(i) == 1.0) {
      treated = true;
    } else if (treatment(i) == -1.0) {
      control = true;
    } else {
      throw ValidationError(fmt::format("row {}: treatment must be -1 or +1", i + 1));
    }
  }
  if (!treated || !control) throw ValidationError("both treatment arms required");
  if (!X.allFinite()) throw ValidationError("biomarker matrix has non-finite entries");
  if (!Z.allFinite()) throw ValidationError("confounder matrix has non-finite entries");

  if (biomarker_names.empty()) biomarker_names = default_names("x", static_cast<std::size_t>(X.cols()));
  if (confounder_names.empty()) confounder_names = default_names("z", static_cast<std::size_t>(Z.cols()));
  if (biomarker_names.size() != static_cast<std::size_t>(X.cols()) ||
      confounder_names.size() != static_cast<std::size_t>(Z.cols())) {
    throw ValidationError("column name count does not match matrix width");
  }

  Dataset d;
  d.outcome_names = is_survival(outcomes) ? std::vector<std::string>{"time", "event"} : std::vector<std::string>{"y"};
  d.outcomes = std::move(outcomes);
  d.treatment = std::move(treatment);
  d.X = std::move(X);
  d.Z = std::move(Z);
  d.biomarker_names = std::move(biomarker_names);
  d.confounder_names = std::move(confounder_names);
  return d;
}

Dataset load_dataset(const std::filesystem::path& path, const Schema& schema) {
  if (schema.outcome.size() != 1 && schema.outcome.size() != 2) {
    throw ValidationError("outcome must name one column (binary) or two columns (time,event)");
  }
  auto table = read_csv(path);
  const std::size_t n = table.columns.empty() ? 0 : table.columns.front().size();

  std::vector<bool> used(table.header.size(), false);
  auto take = [&](const std::string& name) -> std::vector<double>& {
    const auto c = column_index(table, name);
    if (used[c]) throw ValidationError(fmt::format("column '{}' assigned to more than one role", name));
    used[c] = true;
    return table.columns[c];
  };

  Outcomes outcomes;
  if (schema.outcome.size() == 1) {
    outcomes = BinaryOutcomes{take(schema.outcome[0])};
  } else {
    auto& time = take(schema.outcome[0]);
    auto& event = take(schema.outcome[1]);
    outcomes = SurvivalOutcomes{time, event};
  }
  auto treatment = recode_treatment(take(schema.treatment));

  Eigen::MatrixXd Z(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(schema.confounders.size()));
  for (std::size_t j = 0; j < schema.confounders.size(); ++j) {
    const auto& col = take(schema.confounders[j]);
    for (std::size_t i = 0; i < n; ++i) Z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col[i];
  }
  for (const auto& name : schema.ignored) take(name);

  std::vector<std::size_t> biomarker_cols;
  std::vector<std::string> names;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (!used[c]) {
      biomarker_cols.push_back(c);
      names.push_back(table.header[c]);
    }
  }
  Eigen::MatrixXd X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(biomarker_cols.size()));
  for (std::size_t j = 0; j < biomarker_cols.size(); ++j) {
    auto& col = table.columns[biomarker_cols[j]];
    X.col(static_cast<Eigen::Index>(j)) = Eigen::Map<const Eigen::VectorXd>(col.data(), static_cast<Eigen::Index>(n));
    std::vector<double>().swap(col);
  }
  auto d = make_dataset(std::move(outcomes), std::move(treatment), std::move(X), std::move(Z), std::move(names),
                        schema.confounders);
  d.outcome_names = schema.outcome;
  d.treatment_name = schema.treatment;
  return d;
}

std::vector<double> load_column(const std::filesystem::path& path, const std::string& name) {
  auto table = read_csv(path);
  return std::move(table.columns[column_index(table, name)]);
}

void write_dataset(const std::filesystem::path& path, const Dataset& d) {
  auto out = fmt::output_file(path.string());
  std::vector<std::string> header = d.outcome_names;
  header.push_back(d.treatment_name);
  header.insert(header.end(), d.confounder_names.begin(), d.confounder_names.end());
  header.insert(header.end(), d.biomarker_names.begin(), d.biomarker_names.end());
  out.print("{}\n", fmt::join(header, ","));

  const auto* bin = std::get_if<BinaryOutcomes>(&d.outcomes);
  const auto* surv = std::get_if<SurvivalOutcomes>(&d.outcomes);
  fmt::memory_buffer buf;
  for (std::size_t i = 0; i < d.n(); ++i) {
    buf.clear();
    const auto r = static_cast<Eigen::Index>(i);
    if (bin) {
      fmt::format_to(std::back_inserter(buf), "{:.17g}", bin->y[i]);
    } else {
      fmt::format_to(std::back_inserter(buf), "{:.17g},{:.17g}", surv->time[i], surv->event[i]);
    }
    fmt::format_to(std::back_inserter(buf), ",{:.17g}", d.treatment(r));
    for (Eigen::Index j = 0; j < d.Z.cols(); ++j) fmt::format_to(std::back_inserter(buf), ",{:.17g}", d.Z(r, j));
    for (Eigen::Index j = 0; j < d.X.cols(); ++j) fmt::format_to(std::back_inserter(buf), ",{:.17g}", d.X(r, j));
    buf.push_back('\n');
    out.print("{}", std::string_view(buf.data(), buf.size()));
  }
}

bool is_constant_column(const Dataset& d, std::size_t k) {
  const auto col = d.X.col(static_cast<Eigen::Index>(k));
  return col.maxCoeff() == col.minCoeff();
}

double censoring_fraction(const Dataset& d) {
  const auto* s = std::get_if<SurvivalOutcomes>(&d.outcomes);
  if (!s || s->event.empty()) return 0.0;
  double censored = 0.0;
  for (double e : s->event) censored += (e == 0.0) ? 1.0 : 0.0;
  return censored / static_cast<double>(s->event.size());
}

std::vector<Diagnostic> validate_dataset(const Dataset& d) {
  std::vector<Diagnostic> out;
  for (std::size_t k = 0; k < d.p(); ++k) {
    if (is_constant_column(d, k)) {
      out.push_back({Diagnostic::Level::warning, fmt::format("constant biomarker '{}'", d.biomarker_names[k])});
    }
  }
  const double treated = (d.treatment.array() > 0.0).cast<double>().sum();
  const double frac = treated / static_cast<double>(d.n());
  if (std::min(frac, 1.0 - frac) < 0.1) {
    out.push_back({Diagnostic::Level::warning,
                   fmt::format("extreme class imbalance: treated fraction {:.4f}", frac)});
  }
  if (is_survival(d.outcomes)) {
    out.push_back({Diagnostic::Level::info, fmt::format("censoring fraction {:.4f}", censoring_fraction(d))});
  }
  if (d.q() == 0) out.push_back({Diagnostic::Level::info, "q=0; models fit without Z"});
  return out;
}

}  // namespace odpscreen
