#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "sevuln/robustness.hpp"
#include "sevuln/scoring.hpp"

namespace sevuln {

inline constexpr std::string_view kVersion = "0.1.0";

std::uint64_t fnv1a64(std::string_view data);
std::string hex64(std::uint64_t h);

/// Whole file as a string; ParseError when it cannot be opened.
std::string read_file(const std::string& path);

/// Shortest round-trippable decimal form, independent of locale.
std::string format_double(double v);

struct RunManifest {
  std::string command;
  std::string case_path;
  std::string case_hash;
  std::string meas_path;
  std::string meas_hash;
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
  std::string timestamp;

  /// Hash of everything except the timestamp; stamped into CSV headers.
  std::string id() const;
  nlohmann::ordered_json to_json(const std::map<std::string, std::string>& outputs) const;
};

std::string utc_timestamp();

std::string scores_csv(const ScoreTable& table, const std::string& manifest_id);
nlohmann::ordered_json scores_json(const ScoreTable& table);

std::string matrix_csv(const Eigen::MatrixXd& m, const std::vector<std::string>& row_names,
                       const std::vector<std::string>& col_names, const std::string& manifest_id);

std::string svd_csv(const SvdReport& report, const std::string& manifest_id);
nlohmann::ordered_json verdict_json(const InvarianceVerdict& verdict, const SvdReport& report,
                                    std::size_t r_j);

/// Collects report files in memory and writes them only once every one of
/// them has been produced, so a failed run leaves no partial output.
class OutputBundle {
 public:
  void add(const std::string& relative_path, std::string content);
  const std::map<std::string, std::string>& files() const { return files_; }
  /// Writes every file under dir; returns relative path -> content hash.
  std::map<std::string, std::string> write(const std::string& dir) const;

 private:
  std::map<std::string, std::string> files_;
};

/// Binary cache of per-condition sensitivities keyed by
/// (case hash, config hash, run-parameter hash, scale factor, seed).
class SensitivityCache {
 public:
  SensitivityCache(std::string dir, std::string case_hash, std::string config_hash,
                   std::string params_hash);

  std::optional<ConditionSensitivities> get(double factor, std::uint64_t seed) const;
  void put(double factor, std::uint64_t seed, const ConditionSensitivities& value) const;
  std::string path_for(double factor, std::uint64_t seed) const;

 private:
  std::string dir_;
  std::string prefix_;
};

}  // namespace sevuln
