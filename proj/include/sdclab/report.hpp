#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace sdclab {

/// One line of a benchmark table. Accuracy and FT are percentages.
struct ReportRow {
  std::string algorithm;
  std::size_t averaging_layer = 0;
  std::string attention_mechanism;
  /// Training seed, or "mean" for aggregate rows.
  std::string seed;
  bool failed = false;
  double accuracy = 0.0;
  double ft = 0.0;
  double nnz = 0.0;
  double dist = 0.0;
  double ent = 0.0;

  bool is_mean() const noexcept { return seed == "mean"; }
  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

/// Seed rows followed by one mean row per algorithm.
struct RunReport {
  std::vector<ReportRow> rows;

  static constexpr const char* kHeader =
      "algorithm,averaging_layer,attention_mechanism,seed,accuracy,ft,nnz,dist,ent";

  void write_csv(std::ostream& out) const;
  void write_csv(const std::filesystem::path& path) const;
  static RunReport parse_csv(std::istream& in);
  static RunReport parse_csv(const std::filesystem::path& path);

  std::vector<ReportRow> seed_rows() const;
  std::vector<ReportRow> mean_rows() const;
  /// Mean row for `algorithm`; throws ConfigError when absent.
  const ReportRow& mean_of(const std::string& algorithm) const;

  /// Fixed-width text table in the column order of the CSV.
  std::string format_table() const;

  friend bool operator==(const RunReport&, const RunReport&) = default;
};

/// Seed rows plus arithmetic means of the non-failed rows of each algorithm,
/// in order of first appearance.
RunReport assemble_report(std::vector<ReportRow> seed_rows);

/// "zeroth", "first", "second", ... as in published tables.
std::string layer_word(std::size_t layer);
std::size_t parse_layer_word(const std::string& word);

void append_metrics_row(const std::filesystem::path& path, const ReportRow& row);
std::string format_row(const ReportRow& row);

}  // namespace sdclab
