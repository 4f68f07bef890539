#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "utaug/errors.hpp"
#include "utaug/pod.hpp"

namespace utaug {

namespace {

constexpr char kHeader[] = "image_id,subject_id,size_mm,hit,false_call_context";

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

void check_field(const std::string& s, const char* what) {
  if (s.find_first_of(",\r\n") != std::string::npos) {
    throw std::invalid_argument(std::string(what) + " must not contain commas or line breaks: " + s);
  }
}

bool parse_flag(const std::string& s, std::size_t line) {
  if (s == "0") return false;
  if (s == "1") return true;
  throw std::invalid_argument("line " + std::to_string(line) + ": expected 0 or 1, got '" + s + "'");
}

}  // namespace

std::vector<HitMissRecord> parse_records_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<HitMissRecord> out;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != kHeader) throw std::invalid_argument(std::string("CSV header must be: ") + kHeader);
      header_seen = true;
      continue;
    }
    std::vector<std::string> cols;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cols.push_back(cell);
    if (!line.empty() && line.back() == ',') cols.emplace_back();
    if (cols.size() != 5) {
      throw std::invalid_argument("line " + std::to_string(line_no) + ": expected 5 columns, got " +
                                  std::to_string(cols.size()));
    }
    HitMissRecord r;
    r.image_id = cols[0];
    r.subject_id = cols[1];
    std::size_t used = 0;
    try {
      r.size_mm = std::stod(cols[2], &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != cols[2].size() || !std::isfinite(r.size_mm) || r.size_mm < 0.0) {
      throw std::invalid_argument("line " + std::to_string(line_no) + ": invalid size '" + cols[2] + "'");
    }
    r.hit = parse_flag(cols[3], line_no);
    r.false_call_context = parse_flag(cols[4], line_no);
    out.push_back(std::move(r));
  }
  if (!header_seen) throw std::invalid_argument("CSV has no header");
  return out;
}

std::vector<HitMissRecord> read_records_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_records_csv(ss.str());
}

std::string records_to_csv(std::span<const HitMissRecord> records) {
  std::string out = std::string(kHeader) + "\n";
  for (const auto& r : records) {
    check_field(r.image_id, "image_id");
    check_field(r.subject_id, "subject_id");
    out += r.image_id + "," + r.subject_id + "," + fmt(r.size_mm) + "," + (r.hit ? "1" : "0") + "," +
           (r.false_call_context ? "1" : "0") + "\n";
  }
  return out;
}

void write_records_csv(std::span<const HitMissRecord> records, const std::filesystem::path& path) {
  const auto text = records_to_csv(records);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

nlohmann::json fit_to_json(const PodFit& fit) {
  nlohmann::json cov = nlohmann::json::array();
  for (const auto& row : fit.covariance) cov.push_back({number_or_null(row[0]), number_or_null(row[1])});
  return {{"beta0", number_or_null(fit.beta0)},
          {"beta1", number_or_null(fit.beta1)},
          {"covariance", cov},
          {"a50_mm", number_or_null(fit.a50_mm)},
          {"a90_mm", number_or_null(fit.a90_mm)},
          {"a90_95_mm", number_or_null(fit.a90_95_mm)},
          {"a90_95_finite", std::isfinite(fit.a90_95_mm)},
          {"n_records", fit.n_records},
          {"converged", fit.converged},
          {"separation_detected", fit.separation_detected},
          {"smallest_found_mm", fit.smallest_found_mm ? nlohmann::json(*fit.smallest_found_mm) : nlohmann::json()},
          {"size_scale", fit.scale == SizeScale::linear ? "linear" : "log"},
          {"iterations", fit.iterations},
          {"log_likelihood", number_or_null(fit.log_likelihood)},
          {"message", fit.message}};
}

nlohmann::json fit_report_json(const PodFit& fit, std::span<const HitMissRecord> records) {
  nlohmann::json j = {{"fit", fit_to_json(fit)}};
  try {
    const auto rep = report_a9095(fit, records);
    j["a90_95"] = {{"size_mm", number_or_null(rep.size_mm)}, {"method", rep.method}};
  } catch (const std::exception& e) {
    j["a90_95"] = {{"size_mm", nullptr}, {"method", nullptr}, {"error", e.what()}};
  }
  return j;
}

std::string curve_to_csv(std::span<const CurvePoint> curve) {
  std::string out = "size_mm,pod,lower95\n";
  for (const auto& p : curve) out += fmt(p.size_mm) + "," + fmt(p.pod) + "," + fmt(p.lower95) + "\n";
  return out;
}

}  // namespace utaug
