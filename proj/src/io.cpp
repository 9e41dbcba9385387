#include "spinfilter/io.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "spinfilter/errors.hpp"

namespace spinfilter {
namespace {

constexpr std::array<char, 8> kPathMagic{'S', 'F', 'P', 'A', 'T', 'H', '\0', '\0'};
constexpr std::array<char, 8> kEnsembleMagic{'S', 'F', 'E', 'N', 'S', '\0', '\0', '\0'};
constexpr std::uint32_t kVersion = 1;

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

template <class T>
void put(std::ostream& out, T v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ConfigError("truncated binary file");
  return to_little(v);
}

void put_doubles(std::ostream& out, std::span<const double> v) {
  for (double x : v) put(out, x);
}

void check_magic(std::istream& in, const std::array<char, 8>& magic, const char* what) {
  std::array<char, 8> got{};
  in.read(got.data(), got.size());
  if (!in || got != magic) throw ConfigError(std::string("not a ") + what + " file");
  if (get<std::uint32_t>(in) != kVersion) throw ConfigError(std::string("unsupported ") + what + " version");
  (void)get<std::uint32_t>(in);
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return {buf.data(), res.ptr};
}

double parse_double(std::string_view s) {
  if (s == "nan") return NAN;
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("not a number: '" + std::string(s) + "'");
  }
  return v;
}

CsvWriter::CsvWriter(std::ostream& out, const std::vector<std::string>& header) : out_(&out), columns_(header.size()) {
  for (std::size_t i = 0; i < header.size(); ++i) *out_ << (i ? "," : "") << header[i];
  *out_ << '\n';
}

void CsvWriter::row(std::span<const double> values) {
  if (values.size() != columns_) throw ConfigError("CSV row width does not match the header");
  for (std::size_t i = 0; i < values.size(); ++i) *out_ << (i ? "," : "") << format_double(values[i]);
  *out_ << '\n';
}

void CsvWriter::row(std::string_view label, std::span<const double> values) {
  if (values.size() + 1 != columns_) throw ConfigError("CSV row width does not match the header");
  *out_ << label;
  for (double v : values) *out_ << ',' << format_double(v);
  *out_ << '\n';
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw ConfigError("CSV column '" + std::string(name) + "' missing");
}

CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty CSV");
  t.header = split_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != t.header.size()) throw ConfigError("ragged CSV row");
    t.rows.push_back(std::move(cells));
  }
  return t;
}

CsvTable read_csv_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  return read_csv(in);
}

void write_path_csv(std::ostream& out, const SignalPath& path) {
  std::vector<std::string> header{"t"};
  const std::size_t modes = std::max<std::size_t>(path.mode_count, 1);
  const std::size_t sites = path.state_dim / modes;
  for (std::size_t s = 0; s < sites; ++s) {
    if (modes == 1) {
      header.push_back("x" + std::to_string(s));
    } else {
      for (std::size_t m = 0; m < modes; ++m) header.push_back("x" + std::to_string(s) + "_" + std::to_string(m));
    }
  }
  CsvWriter w(out, header);
  std::vector<double> row(1 + path.state_dim);
  for (std::size_t k = 0; k < path.size(); ++k) {
    row[0] = path.times[k];
    const auto x = path.state(k);
    std::copy(x.begin(), x.end(), row.begin() + 1);
    w.row(row);
  }
}

void write_path_binary(std::ostream& out, const SignalPath& path) {
  const std::size_t modes = std::max<std::size_t>(path.mode_count, 1);
  out.write(kPathMagic.data(), kPathMagic.size());
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, 0);
  put<std::uint64_t>(out, path.state_dim / modes);
  put<std::uint64_t>(out, modes);
  put<std::uint64_t>(out, path.save_stride);
  put<std::uint64_t>(out, path.size());
  for (std::size_t k = 0; k < path.size(); ++k) {
    put(out, path.times[k]);
    put_doubles(out, path.state(k));
  }
}

SignalPath read_path_binary(std::istream& in) {
  check_magic(in, kPathMagic, "path");
  SignalPath p;
  const auto sites = get<std::uint64_t>(in);
  p.mode_count = get<std::uint64_t>(in);
  p.save_stride = get<std::uint64_t>(in);
  const auto rows = get<std::uint64_t>(in);
  if (p.mode_count == 0) throw ConfigError("path file has zero modes");
  p.state_dim = sites * p.mode_count;
  p.times.resize(rows);
  p.states.resize(rows * p.state_dim);
  for (std::size_t k = 0; k < rows; ++k) {
    p.times[k] = get<double>(in);
    for (std::size_t j = 0; j < p.state_dim; ++j) p.states[k * p.state_dim + j] = get<double>(in);
  }
  return p;
}

void write_observation_csv(std::ostream& out, const ObservationPath& obs) {
  std::vector<std::string> header{"t"};
  for (std::size_t c = 0; c < obs.channels; ++c) header.push_back("dY_" + std::to_string(c + 1));
  CsvWriter w(out, header);
  std::vector<double> row(1 + obs.channels);
  for (std::size_t n = 0; n < obs.steps(); ++n) {
    row[0] = static_cast<double>(n + 1) * obs.dt_obs;
    const auto dy = obs.increment(n);
    std::copy(dy.begin(), dy.end(), row.begin() + 1);
    w.row(row);
  }
}

Json observation_sidecar(const ObservationPath& obs, const SensorSpec& sensor) {
  Json j;
  j["dt_obs"] = obs.dt_obs;
  j["channels"] = obs.channels;
  j["steps"] = obs.steps();
  j["sigma1"] = obs.sigma1;
  j["sigma2"] = obs.sigma2;
  j["sensor"] = sensor_to_json(sensor);
  j["t_column"] = "end of the observation interval";
  return j;
}

ObservationPath read_observation(std::istream& csv, const Json& sidecar) {
  const auto table = read_csv(csv);
  ObservationPath obs;
  obs.dt_obs = sidecar.at("dt_obs").get<double>();
  obs.channels = sidecar.at("channels").get<std::size_t>();
  obs.sigma1 = sidecar.value("sigma1", 1.0);
  obs.sigma2 = sidecar.value("sigma2", 0.0);
  if (table.header.size() != obs.channels + 1) throw ConfigError("observation CSV width does not match the sidecar");
  for (const auto& row : table.rows) {
    for (std::size_t c = 1; c < row.size(); ++c) obs.increments.push_back(parse_double(row[c]));
  }
  return obs;
}

void write_white_noise_csv(std::ostream& out, const WhiteNoiseRecord& y) {
  std::vector<std::string> header{"t"};
  for (std::size_t c = 0; c < y.channels; ++c) header.push_back("y_" + std::to_string(c + 1));
  CsvWriter w(out, header);
  std::vector<double> row(1 + y.channels);
  for (std::size_t n = 0; n < y.steps(); ++n) {
    row[0] = static_cast<double>(n) * y.dt;
    const auto v = y.value(n);
    std::copy(v.begin(), v.end(), row.begin() + 1);
    w.row(row);
  }
}

WhiteNoiseRecord read_white_noise_csv(std::istream& in) {
  const auto table = read_csv(in);
  if (table.header.size() < 2 || table.header[0] != "t") throw ConfigError("white-noise CSV needs t, y_1..");
  WhiteNoiseRecord y;
  y.channels = table.header.size() - 1;
  if (table.rows.size() < 2) throw ConfigError("white-noise CSV needs at least two rows");
  y.dt = parse_double(table.rows[1][0]) - parse_double(table.rows[0][0]);
  for (const auto& row : table.rows) {
    for (std::size_t c = 1; c < row.size(); ++c) y.values.push_back(parse_double(row[c]));
  }
  y.validate();
  return y;
}

void save_ensemble(std::ostream& out, const ParticleEnsemble& ens) {
  out.write(kEnsembleMagic.data(), kEnsembleMagic.size());
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, 0);
  put<std::uint64_t>(out, ens.dim);
  put<std::uint64_t>(out, ens.size());
  put<std::uint64_t>(out, ens.obs_steps);
  put<std::uint64_t>(out, ens.resample_count);
  put(out, ens.t);
  put(out, ens.log_mass);
  put_doubles(out, ens.log_weights);
  put_doubles(out, ens.particles);
}

ParticleEnsemble load_ensemble(std::istream& in) {
  check_magic(in, kEnsembleMagic, "ensemble");
  ParticleEnsemble ens;
  ens.dim = get<std::uint64_t>(in);
  const auto n = get<std::uint64_t>(in);
  ens.obs_steps = get<std::uint64_t>(in);
  ens.resample_count = get<std::uint64_t>(in);
  ens.t = get<double>(in);
  ens.log_mass = get<double>(in);
  ens.log_weights.resize(n);
  for (auto& w : ens.log_weights) w = get<double>(in);
  ens.particles.resize(n * ens.dim);
  for (auto& x : ens.particles) x = get<double>(in);
  return ens;
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
  if (!out) throw ConfigError("write failed for " + path.string());
}

}  // namespace spinfilter
