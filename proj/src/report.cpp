#include "sdclab/report.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "sdclab/error.hpp"

namespace sdclab {

namespace {

constexpr std::array<const char*, 11> kLayerWords = {
    "zeroth", "first", "second", "third", "fourth", "fifth",
    "sixth",  "seventh", "eighth", "ninth", "tenth"};

std::string shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& field, std::size_t offset) {
  double v = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
    throw ParseError("bad report value '" + field + "'", offset);
  }
  return v;
}

constexpr const char* kFailed = "FAILED";

}  // namespace

std::string layer_word(std::size_t layer) {
  return layer < kLayerWords.size() ? kLayerWords[layer] : std::to_string(layer);
}

std::size_t parse_layer_word(const std::string& word) {
  for (std::size_t i = 0; i < kLayerWords.size(); ++i) {
    if (word == kLayerWords[i]) return i;
  }
  std::size_t v = 0;
  const auto res = std::from_chars(word.data(), word.data() + word.size(), v);
  if (res.ec != std::errc() || res.ptr != word.data() + word.size()) {
    throw ParseError("bad averaging layer '" + word + "'", 0);
  }
  return v;
}

std::string format_row(const ReportRow& row) {
  std::string out = row.algorithm + "," + layer_word(row.averaging_layer) + "," +
                    row.attention_mechanism + "," + row.seed;
  for (double v : {row.accuracy, row.ft, row.nnz, row.dist, row.ent}) {
    out += ",";
    out += row.failed ? kFailed : shortest(v);
  }
  return out;
}

void RunReport::write_csv(std::ostream& out) const {
  out << kHeader << '\n';
  for (const auto& row : rows) out << format_row(row) << '\n';
}

void RunReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_csv(out);
}

RunReport RunReport::parse_csv(std::istream& in) {
  RunReport report;
  std::string line;
  if (!std::getline(in, line) || line != kHeader) throw ParseError("report header mismatch", 0);
  std::size_t offset = line.size() + 1;
  while (std::getline(in, line)) {
    if (line.empty()) {
      offset += 1;
      continue;
    }
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 9) throw ParseError("report row needs 9 columns", offset);
    ReportRow row;
    row.algorithm = fields[0];
    row.averaging_layer = parse_layer_word(fields[1]);
    row.attention_mechanism = fields[2];
    row.seed = fields[3];
    row.failed = fields[4] == kFailed;
    if (!row.failed) {
      row.accuracy = parse_double(fields[4], offset);
      row.ft = parse_double(fields[5], offset);
      row.nnz = parse_double(fields[6], offset);
      row.dist = parse_double(fields[7], offset);
      row.ent = parse_double(fields[8], offset);
    }
    report.rows.push_back(std::move(row));
    offset += line.size() + 1;
  }
  return report;
}

RunReport RunReport::parse_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return parse_csv(in);
}

std::vector<ReportRow> RunReport::seed_rows() const {
  std::vector<ReportRow> out;
  for (const auto& r : rows)
    if (!r.is_mean()) out.push_back(r);
  return out;
}

std::vector<ReportRow> RunReport::mean_rows() const {
  std::vector<ReportRow> out;
  for (const auto& r : rows)
    if (r.is_mean()) out.push_back(r);
  return out;
}

const ReportRow& RunReport::mean_of(const std::string& algorithm) const {
  for (const auto& r : rows) {
    if (r.is_mean() && r.algorithm == algorithm) return r;
  }
  throw ConfigError("report has no mean row for " + algorithm);
}

std::string RunReport::format_table() const {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-9s %-9s %-15s %-5s %9s %9s %8s %8s %8s\n", "Algorithm",
                "avg.layer", "attention", "seed", "accuracy", "FT", "NNZ", "Dist", "Ent");
  out << line;
  for (const auto& r : rows) {
    if (r.failed) {
      std::snprintf(line, sizeof(line), "%-9s %-9s %-15s %-5s %9s\n", r.algorithm.c_str(),
                    layer_word(r.averaging_layer).c_str(), r.attention_mechanism.c_str(),
                    r.seed.c_str(), kFailed);
    } else {
      std::snprintf(line, sizeof(line), "%-9s %-9s %-15s %-5s %9.2f %9.2f %8.3f %8.3f %8.3f\n",
                    r.algorithm.c_str(), layer_word(r.averaging_layer).c_str(),
                    r.attention_mechanism.c_str(), r.seed.c_str(), r.accuracy, r.ft, r.nnz,
                    r.dist, r.ent);
    }
    out << line;
  }
  return out.str();
}

RunReport assemble_report(std::vector<ReportRow> seed_rows) {
  RunReport report;
  std::vector<std::string> order;
  std::map<std::string, std::vector<const ReportRow*>> groups;
  for (const auto& row : seed_rows) {
    if (!groups.contains(row.algorithm)) order.push_back(row.algorithm);
    groups[row.algorithm].push_back(&row);
  }
  report.rows = seed_rows;
  for (const auto& name : order) {
    const auto& members = groups[name];
    ReportRow mean = *members.front();
    mean.seed = "mean";
    mean.accuracy = mean.ft = mean.nnz = mean.dist = mean.ent = 0.0;
    std::size_t ok = 0;
    for (const ReportRow* r : members) {
      if (r->failed) continue;
      ++ok;
      mean.accuracy += r->accuracy;
      mean.ft += r->ft;
      mean.nnz += r->nnz;
      mean.dist += r->dist;
      mean.ent += r->ent;
    }
    mean.failed = ok == 0;
    if (ok > 0) {
      const double n = static_cast<double>(ok);
      mean.accuracy /= n;
      mean.ft /= n;
      mean.nnz /= n;
      mean.dist /= n;
      mean.ent /= n;
    }
    report.rows.push_back(mean);
  }
  return report;
}

void append_metrics_row(const std::filesystem::path& path, const ReportRow& row) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error("cannot append to " + path.string());
  if (fresh) out << RunReport::kHeader << '\n';
  out << format_row(row) << '\n';
}

}  // namespace sdclab
