#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace phynfp::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column position of `name`, or throws SchemaError.
  std::size_t column(std::string_view name) const;
};

/// Reads a plain comma-separated file (no quoting). Every row must have the header's width.
Table read(const std::filesystem::path& path);

double parse_double(std::string_view field, std::string_view context);
long long parse_int(std::string_view field, std::string_view context);

/// Shortest decimal form that round-trips a double.
std::string format(double value);

void write_row(std::ostream& out, const std::vector<std::string>& fields);

}  // namespace phynfp::csv
