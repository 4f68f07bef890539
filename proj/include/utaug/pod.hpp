#pragma once

// Hit/miss probability-of-detection analysis: logistic fit of POD against
// flaw size, a_p and its one-sided 95% lower bound, trial scoring.

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace utaug {

struct HitMissRecord {
  double size_mm = 0.0;
  bool hit = false;
  std::string subject_id;
  std::string image_id;
  /// Derived from a blank image; excluded from the fit.
  bool false_call_context = false;

  bool operator==(const HitMissRecord&) const = default;
};

/// Abscissa of the logistic model. Log size cannot represent zero-size records.
enum class SizeScale { linear, log };

struct FitOptions {
  SizeScale scale = SizeScale::linear;
  std::size_t max_iterations = 100;
  /// Tolerances and the limit below apply to coefficients on the standardised
  /// abscissa (x - mean) / sd.
  double score_tolerance = 1e-8;
  double step_tolerance = 1e-10;
  /// |coefficient| beyond this is treated as divergence towards separation.
  double coefficient_limit = 1e3;
};

inline constexpr double kOneSided95 = 1.645;

/// POD(a) = 1 / (1 + exp(-(b0 + b1 x))), x = a or ln a.
struct PodFit {
  double beta0 = 0.0;
  double beta1 = 0.0;
  std::array<std::array<double, 2>, 2> covariance{};
  double a50_mm = 0.0;
  double a90_mm = 0.0;
  /// +inf when the lower bound never reaches 0.9.
  double a90_95_mm = 0.0;
  std::size_t n_records = 0;
  bool converged = false;
  bool separation_detected = false;
  std::optional<double> smallest_found_mm;
  SizeScale scale = SizeScale::linear;
  std::size_t iterations = 0;
  double log_likelihood = 0.0;
  /// Log-likelihood after every accepted Newton step, starting point first.
  std::vector<double> log_likelihood_trace;
  std::string message;

  bool usable() const { return converged && !separation_detected; }
};

/// Appends n records of size 0 that were missed.
std::vector<HitMissRecord> augment_zero_misses(std::vector<HitMissRecord> records, std::size_t n = 30,
                                               const std::string& subject_id = "");

/// Maximum-likelihood fit by Newton-Raphson with step halving. Records with
/// false_call_context are ignored. Separation and degenerate designs are
/// reported through the flags; only empty input throws.
PodFit fit_hitmiss(std::span<const HitMissRecord> records, const FitOptions& options = {});

/// Linear predictor b0 + b1 x(a) and its standard error.
double linear_predictor(const PodFit& fit, double size_mm);
double linear_predictor_se(const PodFit& fit, double size_mm);

double pod(const PodFit& fit, double size_mm);
/// logistic(eta - 1.645 se(eta)).
double pod_lower95(const PodFit& fit, double size_mm);

/// Size at which the fitted POD equals p. Throws InvalidStateError for an
/// unusable fit.
double a_p(const PodFit& fit, double p);
/// Smallest size at which the lower 95% bound reaches p, by bisection.
/// Throws NoSolutionError if no bracket is found within 60 doublings.
double a_p_lower_95(const PodFit& fit, double p);

struct A9095Report {
  double size_mm = 0.0;
  std::string method;  // "smallest-found convention" or "mil-hdbk-1823a"
};

inline constexpr char kSmallestFoundTag[] = "smallest-found convention";
inline constexpr char kHandbookTag[] = "mil-hdbk-1823a";

/// When every nonzero-size record is a hit, reports the smallest one found;
/// otherwise the lower-bound a90 of the fit.
A9095Report report_a9095(const PodFit& fit, std::span<const HitMissRecord> records);

struct TruthEntry {
  std::string image_id;
  bool has_flaw = false;
  double size_mm = 0.0;
  double scan_center_mm = 0.0;
};

struct ResponseEntry {
  std::string image_id;
  std::vector<double> marks_mm;
};

struct ScoreOptions {
  double scan_tolerance_mm = 5.0;
  /// Any mark on a flawed image is a hit; location is ignored.
  bool presence_only = false;
};

struct TrialScore {
  std::vector<HitMissRecord> records;  // one per truth entry, truth order
  std::size_t false_call_count = 0;
};

/// Every truth image needs exactly one response entry.
TrialScore score_trial(std::span<const ResponseEntry> responses, std::span<const TruthEntry> truth,
                       const std::string& subject_id, const ScoreOptions& options = {});

struct CurvePoint {
  double size_mm = 0.0;
  double pod = 0.0;
  double lower95 = 0.0;
};

std::vector<CurvePoint> pod_curve(const PodFit& fit, std::span<const double> sizes_mm);
/// n evenly spaced sizes on [lo, hi].
std::vector<double> size_grid(double lo, double hi, std::size_t n);

// CSV columns: image_id,subject_id,size_mm,hit,false_call_context
std::vector<HitMissRecord> read_records_csv(const std::filesystem::path& path);
std::vector<HitMissRecord> parse_records_csv(const std::string& text);
std::string records_to_csv(std::span<const HitMissRecord> records);
void write_records_csv(std::span<const HitMissRecord> records, const std::filesystem::path& path);

nlohmann::json fit_to_json(const PodFit& fit);
/// Fit summary plus the a90/95 report, when one can be made.
nlohmann::json fit_report_json(const PodFit& fit, std::span<const HitMissRecord> records);

std::string curve_to_csv(std::span<const CurvePoint> curve);

}  // namespace utaug
