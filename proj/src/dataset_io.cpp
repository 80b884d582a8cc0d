#include "epglmm/dataset_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace epglmm {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

[[noreturn]] void fail(const std::string& source, int line, const std::string& msg) {
  throw std::invalid_argument(source + ":" + std::to_string(line) + ": " + msg);
}

double parse_double(std::string_view tok, const std::string& source, int line, const std::string& column) {
  double v = 0.0;
  const char* end = tok.data() + tok.size();
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (tok.empty() || ec != std::errc() || ptr != end || !std::isfinite(v)) {
    fail(source, line, "column '" + column + "': expected a finite number, got '" + std::string(tok) + "'");
  }
  return v;
}

}  // namespace

GroupedDataset read_dataset_csv(std::istream& in, const std::string& source) {
  std::string text;
  int line_no = 0;
  std::vector<std::string> header;
  while (header.empty() && std::getline(in, text)) {
    ++line_no;
    if (trim(text).empty()) continue;
    for (auto tok : split(text)) header.emplace_back(tok);
  }
  if (header.empty()) fail(source, line_no, "empty input (expected a header line)");
  if (header.size() < 4 || header[0] != "group" || header[1] != "y") {
    fail(source, line_no, "header must be group,y,xF1..xFp,xR1..xRq");
  }
  int p = 0;
  int q = 0;
  for (std::size_t k = 2; k < header.size(); ++k) {
    if (q == 0 && header[k] == "xF" + std::to_string(p + 1)) {
      ++p;
    } else if (header[k] == "xR" + std::to_string(q + 1)) {
      ++q;
    } else {
      fail(source, line_no, "unexpected header column '" + header[k] + "' (expected xF1..xFp then xR1..xRq)");
    }
  }
  if (p < 1 || q < 1) fail(source, line_no, "need at least one xF and one xR column");

  struct Rows {
    std::vector<int> y;
    std::vector<double> xf;
    std::vector<double> xr;
  };
  std::vector<std::string> order;
  std::map<std::string, Rows> by_label;
  while (std::getline(in, text)) {
    ++line_no;
    if (trim(text).empty()) continue;
    const auto tok = split(text);
    if (tok.size() != header.size()) {
      fail(source, line_no, "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(tok.size()));
    }
    const std::string label(tok[0]);
    if (label.empty()) fail(source, line_no, "empty group label");
    int y = -1;
    if (tok[1] == "0") y = 0;
    if (tok[1] == "1") y = 1;
    if (y < 0) fail(source, line_no, "response y must be 0 or 1, got '" + std::string(tok[1]) + "'");
    auto [it, inserted] = by_label.try_emplace(label);
    if (inserted) order.push_back(label);
    Rows& rows = it->second;
    rows.y.push_back(y);
    for (int k = 0; k < p; ++k) rows.xf.push_back(parse_double(tok[2 + k], source, line_no, header[2 + k]));
    for (int k = 0; k < q; ++k) rows.xr.push_back(parse_double(tok[2 + p + k], source, line_no, header[2 + p + k]));
  }
  if (order.empty()) fail(source, line_no, "no data rows");

  GroupedDataset data;
  data.dim_fixed = p;
  data.dim_random = q;
  for (const auto& label : order) {
    const Rows& rows = by_label.at(label);
    const int n = static_cast<int>(rows.y.size());
    Group g;
    g.label = label;
    g.y = rows.y;
    g.xf = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(rows.xf.data(), n, p);
    g.xr = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(rows.xr.data(), n, q);
    data.groups.push_back(std::move(g));
  }
  data.validate();
  return data;
}

GroupedDataset read_dataset_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open input file '" + path + "'");
  return read_dataset_csv(in, path);
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc() ? std::string(buf, ptr) : std::string("nan");
}

void write_dataset_csv(std::ostream& out, const GroupedDataset& data) {
  out << "group,y";
  for (int k = 0; k < data.dim_fixed; ++k) out << ",xF" << k + 1;
  for (int k = 0; k < data.dim_random; ++k) out << ",xR" << k + 1;
  out << '\n';
  for (const Group& g : data.groups) {
    for (int j = 0; j < g.size(); ++j) {
      out << g.label << ',' << g.y[j];
      for (int k = 0; k < data.dim_fixed; ++k) out << ',' << format_double(g.xf(j, k));
      for (int k = 0; k < data.dim_random; ++k) out << ',' << format_double(g.xr(j, k));
      out << '\n';
    }
  }
}

}  // namespace epglmm
