#pragma once

// Small output helpers shared by the experiment drivers: CSV emission with a
// fixed 17-significant-digit float format and stable row order.

#include <sstream>
#include <string>
#include <vector>

namespace stochins {

std::string format_full(double v);  // %.17g

void ensure_directory(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

class CsvWriter {
public:
  explicit CsvWriter(std::vector<std::string> columns);

  void row(const std::vector<std::string>& cells);
  void numeric_row(const std::vector<double>& values);

  std::string str() const { return out_.str(); }
  void save(const std::string& path) const;

private:
  std::size_t columns_ = 0;
  std::ostringstream out_;
};

}  // namespace stochins
