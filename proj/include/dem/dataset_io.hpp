#pragma once

// CSV persistence for DomainDataset:
//   id,domain,label,outcome,f0,f1,...,f{d-1}
// label is -1 when unlabeled; outcome is empty when absent.  Reals are written
// in shortest round-trip form so a load reproduces the exact doubles.

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "synth_domains.hpp"

namespace dem {

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw Error(ErrorCode::io_failure, "cannot format double");
  return std::string(buf, end);
}

inline double parse_double(std::string_view text) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw Error(ErrorCode::io_failure, "bad real '" + std::string(text) + "'");
  return v;
}

inline std::int64_t parse_int(std::string_view text) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw Error(ErrorCode::io_failure, "bad integer '" + std::string(text) + "'");
  return v;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

inline void write_dataset_csv(std::ostream& out, const DomainDataset& ds) {
  out << "id,domain,label,outcome";
  for (Index j = 0; j < ds.dim(); ++j) out << ",f" << j;
  out << '\n';
  for (Index i = 0; i < ds.size(); ++i) {
    const auto row = static_cast<std::size_t>(i);
    out << ds.sample_ids[row] << ',' << to_string(ds.domain) << ',' << (ds.labels ? (*ds.labels)[row] : -1) << ',';
    if (ds.continuous_outcome) out << format_double((*ds.continuous_outcome)[row]);
    for (Index j = 0; j < ds.dim(); ++j) out << ',' << format_double(ds.features(i, j));
    out << '\n';
  }
}

inline void save_dataset_csv(const std::string& path, const DomainDataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_failure, "cannot open " + path);
  write_dataset_csv(out, ds);
  if (!out) throw Error(ErrorCode::io_failure, "write failed for " + path);
}

/// Labels are attached only when every row carries one; outcomes likewise.
inline DomainDataset read_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::io_failure, "empty dataset file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  if (header.size() < 5 || header[0] != "id" || header[1] != "domain" || header[2] != "label" || header[3] != "outcome")
    throw Error(ErrorCode::io_failure, "unexpected dataset header");
  const std::size_t d = header.size() - 4;
  for (std::size_t j = 0; j < d; ++j)
    if (header[4 + j] != "f" + std::to_string(j)) throw Error(ErrorCode::io_failure, "unexpected feature column name");

  std::vector<std::vector<double>> rows;
  std::vector<std::int64_t> ids;
  std::vector<int> labels;
  std::vector<double> outcomes;
  bool all_labeled = true;
  bool all_outcomes = true;
  std::optional<Domain> domain;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) throw Error(ErrorCode::io_failure, "ragged dataset row");
    ids.push_back(parse_int(fields[0]));
    Domain row_domain;
    if (fields[1] == "source") row_domain = Domain::source;
    else if (fields[1] == "target") row_domain = Domain::target;
    else throw Error(ErrorCode::io_failure, "unknown domain tag");
    if (domain && *domain != row_domain) throw Error(ErrorCode::io_failure, "mixed domain tags in one file");
    domain = row_domain;
    const auto label = parse_int(fields[2]);
    if (label < -1 || label > 1) throw Error(ErrorCode::io_failure, "label must be -1, 0 or 1");
    if (label < 0) all_labeled = false;
    labels.push_back(static_cast<int>(label));
    if (fields[3].empty()) all_outcomes = false;
    else outcomes.push_back(parse_double(fields[3]));
    std::vector<double> feats(d);
    for (std::size_t j = 0; j < d; ++j) feats[j] = parse_double(fields[4 + j]);
    rows.push_back(std::move(feats));
  }
  if (rows.empty()) throw Error(ErrorCode::io_failure, "dataset has no rows");

  DomainDataset ds;
  ds.domain = domain.value_or(Domain::source);
  ds.features.resize(static_cast<Index>(rows.size()), static_cast<Index>(d));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) ds.features(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  ds.sample_ids = std::move(ids);
  if (all_labeled) ds.labels = std::move(labels);
  if (all_outcomes) ds.continuous_outcome = std::move(outcomes);
  std::vector<std::int64_t> sorted_ids = ds.sample_ids;
  std::sort(sorted_ids.begin(), sorted_ids.end());
  if (std::adjacent_find(sorted_ids.begin(), sorted_ids.end()) != sorted_ids.end())
    throw Error(ErrorCode::io_failure, "duplicate sample ids");
  return ds;
}

inline DomainDataset load_dataset_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_failure, "cannot open " + path);
  return read_dataset_csv(in);
}

}  // namespace dem
