#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spinfilter/config.hpp"
#include "spinfilter/dynamics.hpp"
#include "spinfilter/filter.hpp"
#include "spinfilter/observation.hpp"
#include "spinfilter/whitenoise.hpp"

namespace spinfilter {

/// Shortest round-trip decimal form; "nan", "inf", "-inf" for the rest.
std::string format_double(double v);

/// Parses a double written by format_double. Throws ConfigError.
double parse_double(std::string_view s);

/// Minimal CSV writer: fixed header, numeric rows, "\n" line ends.
class CsvWriter {
 public:
  CsvWriter(std::ostream& out, const std::vector<std::string>& header);
  void row(std::span<const double> values);
  void row(std::initializer_list<double> values) { row(std::span<const double>(values.begin(), values.size())); }
  /// First cell is text, the rest numeric (tidy long format).
  void row(std::string_view label, std::span<const double> values);

 private:
  std::ostream* out_;
  std::size_t columns_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  [[nodiscard]] std::size_t column(std::string_view name) const;  ///< throws ConfigError when absent
};

CsvTable read_csv(std::istream& in);
CsvTable read_csv_file(const std::filesystem::path& path);

/// Columns t, x0, x1, ... (or x{site}_{mode} when mode_count > 1).
void write_path_csv(std::ostream& out, const SignalPath& path);

/// Binary path layout, all little-endian:
///   8 bytes  magic "SFPATH\0\0"
///   u32      version (1)
///   u32      reserved (0)
///   u64      site count
///   u64      mode count
///   u64      save stride
///   u64      row count
///   rows x (1 + sites * modes) float64: t followed by the state
void write_path_binary(std::ostream& out, const SignalPath& path);
SignalPath read_path_binary(std::istream& in);

/// Columns t, dY_1..dY_N with t the end of each observation interval.
void write_observation_csv(std::ostream& out, const ObservationPath& obs);
/// Sidecar metadata (dt_obs, channels, sigma1, sigma2, sensor).
Json observation_sidecar(const ObservationPath& obs, const SensorSpec& sensor);
/// Reads the CSV back; dt_obs and the noise pair come from the sidecar.
ObservationPath read_observation(std::istream& csv, const Json& sidecar);

/// Columns t, y_1..y_N with t the start of each cell.
void write_white_noise_csv(std::ostream& out, const WhiteNoiseRecord& y);
WhiteNoiseRecord read_white_noise_csv(std::istream& in);

/// Exact binary checkpoint of a particle ensemble.
void save_ensemble(std::ostream& out, const ParticleEnsemble& ens);
ParticleEnsemble load_ensemble(std::istream& in);

/// Writes `text` to `path`, creating parent directories.
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace spinfilter
