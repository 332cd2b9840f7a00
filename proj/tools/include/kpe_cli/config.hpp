#pragma once

// JSON experiment documents: parsing, resolved echo and dotted-path overrides.

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

#include "kpe/harness.hpp"

namespace kpe::cli {

inline constexpr int kSchemaVersion = 1;

/// Reads and parses a JSON file. Throws ConfigError on I/O or syntax problems.
nlohmann::json read_json_file(const std::string& path);

/// Applies "a.b.0.c=value". The value is parsed as JSON, falling back to a plain string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

KernelSpec kernel_from_json(const nlohmann::json& j);
nlohmann::json kernel_to_json(const KernelSpec& kernel);

RegularizationPolicy ridge_from_json(const nlohmann::json& j);
nlohmann::json ridge_to_json(const RegularizationPolicy& policy);

/// Throws ConfigError listing every bad field.
ExperimentConfig experiment_from_json(const nlohmann::json& doc);
/// Fully resolved document; experiment_from_json(experiment_to_json(c)) reproduces c.
nlohmann::json experiment_to_json(const ExperimentConfig& config);

}  // namespace kpe::cli
