#include "kwass/ensemble_io.hpp"

#include "kwass/errors.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <vector>

namespace kwass {
namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto first = cell.find_first_not_of(" \t\r");
    const auto last = cell.find_last_not_of(" \t\r");
    out.push_back(first == std::string::npos ? std::string() : cell.substr(first, last - first + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, std::size_t row, std::size_t col) {
  double value = 0.0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("row " + std::to_string(row) + ", column " + std::to_string(col + 1),
                      "not a number: '" + s + "'");
  }
  return value;
}

}  // namespace

std::string format_number(double x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

PhaseEnsemble read_ensemble_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("header", "empty ensemble file");
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header.size() % 2 == 0) {
    throw ConfigError("header", "expected columns x1..xd,v1..vd,w");
  }
  const std::size_t d = (header.size() - 1) / 2;
  for (std::size_t k = 0; k < d; ++k) {
    if (header[k] != "x" + std::to_string(k + 1) || header[d + k] != "v" + std::to_string(k + 1)) {
      throw ConfigError("header", "expected columns x1..xd,v1..vd,w");
    }
  }
  if (header.back() != "w") throw ConfigError("header", "last column must be 'w'");

  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    ++rows;
    if (cells.size() != header.size()) {
      throw ConfigError("row " + std::to_string(rows), "expected " + std::to_string(header.size()) + " columns");
    }
    for (std::size_t c = 0; c < cells.size(); ++c) values.push_back(parse_double(cells[c], rows, c));
  }
  if (rows == 0) throw ConfigError("", "ensemble file has no particles");

  const auto n = static_cast<Index>(rows);
  const auto dd = static_cast<Index>(d);
  Matrix x(dd, n), v(dd, n);
  Vector w(n);
  const std::size_t stride = header.size();
  for (Index i = 0; i < n; ++i) {
    const double* row = values.data() + static_cast<std::size_t>(i) * stride;
    for (Index k = 0; k < dd; ++k) {
      x(k, i) = row[k];
      v(k, i) = row[dd + k];
    }
    w[i] = row[2 * dd];
  }
  return PhaseEnsemble(std::move(x), std::move(v), std::move(w));
}

PhaseEnsemble read_ensemble_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open ensemble file");
  return read_ensemble_csv(in);
}

void write_ensemble_csv(std::ostream& out, const PhaseEnsemble& ens) {
  const Index d = ens.dim();
  for (Index k = 0; k < d; ++k) out << 'x' << k + 1 << ',';
  for (Index k = 0; k < d; ++k) out << 'v' << k + 1 << ',';
  out << "w\n";
  for (Index i = 0; i < ens.size(); ++i) {
    for (Index k = 0; k < d; ++k) out << format_number(ens.positions()(k, i)) << ',';
    for (Index k = 0; k < d; ++k) out << format_number(ens.velocities()(k, i)) << ',';
    out << format_number(ens.weights()[i]) << '\n';
  }
}

void write_ensemble_csv(const std::string& path, const PhaseEnsemble& ens) {
  std::ofstream out(path);
  if (!out) throw ConfigError(path, "cannot open for writing");
  write_ensemble_csv(out, ens);
}

}  // namespace kwass
