#pragma once

// Command-line front end: configuration, data loading and the five commands.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "extval/extval.hpp"

namespace extval::app {

using json = nlohmann::json;

enum ExitCode : int { kExitOk = 0, kExitInternal = 1, kExitConfig = 2, kExitData = 3, kExitDuality = 4 };

/// The configuration file or a flag is invalid.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A required invariant failed at run time (weak duality in oracle-check).
class CheckFailed : public Error {
public:
    using Error::Error;
};

struct EffectConfig {
    enum class Method { Regression, Column, Iv };
    Method method = Method::Regression;
    Basis basis;
    std::string column;
    std::size_t iv_dim = 0;
    std::vector<double> iv_cuts;
};

struct EstimatorConfig {
    EffectConfig effect;
    KernelOptions kernel;
    std::optional<std::string> rank_effect_column, negative_rank_effect_column;
    std::optional<double> y0_value;
    std::optional<double> y0_propensity;
};

struct RunConfig {
    std::filesystem::path base_dir;
    std::optional<std::filesystem::path> input, output;
    csv::ColumnMap columns;
    SupportBounds bounds;
    NeighborhoodSpec neighborhood;
    std::vector<double> epsilon_grid;
    CouplingAssumption coupling = CouplingAssumption::ConstantTE;
    EstimatorConfig estimators;
    std::optional<json> rule;
    std::optional<json> rules;
    std::optional<json> policy_class;
    std::optional<json> oracle_check;
    std::optional<json> generate;
    bool per_rule_table = false;
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

/// Flag values that override the configuration file.
struct Overrides {
    std::optional<std::string> input, output;
    std::optional<double> epsilon;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
};

RunConfig parse_config(const json& j, const std::filesystem::path& base_dir, const Overrides& ov = {});
PolicyRule parse_rule(const json& j, const std::string& path = "rule");

/// Full command dispatch; returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Writes via a sibling temporary file and a rename.
void write_atomically(const std::filesystem::path& path, const std::string& content);

std::string format_curve_csv(const std::vector<CurveRow>& rows);

} // namespace extval::app
