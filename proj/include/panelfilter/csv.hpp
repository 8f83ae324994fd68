#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace panelfilter::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a named column; throws ConfigError when absent.
  std::size_t column(const std::string& name) const;
};

// Comma separated, header row mandatory, no quoting.
Table read(std::istream& in);
Table read_file(const std::string& path);

double to_double(const std::string& s);
long to_long(const std::string& s);

// Shortest round-trippable decimal form.
std::string format(double v);

}  // namespace panelfilter::csv
