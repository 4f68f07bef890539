#include "utaug/pod.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "utaug/errors.hpp"

namespace utaug {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

struct Point {
  double x;
  int y;
  bool operator<(const Point& o) const { return x < o.x || (x == o.x && y < o.y); }
};

double to_abscissa(SizeScale scale, double size_mm) {
  if (!std::isfinite(size_mm)) throw std::invalid_argument("size must be finite");
  if (scale == SizeScale::linear) return size_mm;
  if (size_mm <= 0.0) {
    throw std::invalid_argument("log-size POD cannot use size " + std::to_string(size_mm) +
                                " mm; zero-size records require the linear scale");
  }
  return std::log(size_mm);
}

double from_abscissa(SizeScale scale, double x) { return scale == SizeScale::linear ? x : std::exp(x); }

double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

/// log(1 + e^z) without overflow.
double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double log_likelihood(const std::vector<Point>& pts, double b0, double b1) {
  double ll = 0.0;
  for (const auto& p : pts) {
    const double eta = b0 + b1 * p.x;
    ll += p.y * eta - softplus(eta);
  }
  return ll;
}

struct Derivatives {
  std::array<double, 2> score{};
  std::array<std::array<double, 2>, 2> info{};
};

Derivatives derivatives(const std::vector<Point>& pts, double b0, double b1) {
  Derivatives d;
  for (const auto& p : pts) {
    const double pr = logistic(b0 + b1 * p.x);
    const double r = p.y - pr;
    const double w = pr * (1.0 - pr);
    d.score[0] += r;
    d.score[1] += r * p.x;
    d.info[0][0] += w;
    d.info[0][1] += w * p.x;
    d.info[1][1] += w * p.x * p.x;
  }
  d.info[1][0] = d.info[0][1];
  return d;
}

bool invert2(const std::array<std::array<double, 2>, 2>& m, std::array<std::array<double, 2>, 2>& out) {
  const double det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
  const double scale = std::abs(m[0][0] * m[1][1]) + std::abs(m[0][1] * m[1][0]);
  if (!(det > 0.0) || det <= scale * 1e-14) return false;
  out = {{{m[1][1] / det, -m[0][1] / det}, {-m[1][0] / det, m[0][0] / det}}};
  return true;
}

void clear_estimates(PodFit& fit) {
  fit.beta0 = fit.beta1 = kNaN;
  fit.covariance = {{{kNaN, kNaN}, {kNaN, kNaN}}};
  fit.a50_mm = fit.a90_mm = fit.a90_95_mm = kNaN;
}

void require_usable(const PodFit& fit) {
  if (!fit.usable()) {
    throw InvalidStateError(fit.separation_detected ? "POD fit shows separation; no estimates available"
                                                    : "POD fit did not converge");
  }
}

}  // namespace

std::vector<HitMissRecord> augment_zero_misses(std::vector<HitMissRecord> records, std::size_t n,
                                               const std::string& subject_id) {
  for (std::size_t i = 0; i < n; ++i) {
    records.push_back({0.0, false, subject_id, "zero-miss-" + std::to_string(i), false});
  }
  return records;
}

PodFit fit_hitmiss(std::span<const HitMissRecord> records, const FitOptions& options) {
  PodFit fit;
  fit.scale = options.scale;

  std::vector<Point> pts;
  for (const auto& r : records) {
    if (r.false_call_context) continue;
    if (!std::isfinite(r.size_mm) || r.size_mm < 0.0) {
      throw std::invalid_argument("record " + r.image_id + " has invalid size");
    }
    pts.push_back({to_abscissa(options.scale, r.size_mm), r.hit ? 1 : 0});
    if (r.hit && r.size_mm > 0.0 && (!fit.smallest_found_mm || r.size_mm < *fit.smallest_found_mm)) {
      fit.smallest_found_mm = r.size_mm;
    }
  }
  if (pts.empty()) throw std::invalid_argument("no hit/miss records to fit");
  // Canonical order so the sums do not depend on input order.
  std::sort(pts.begin(), pts.end());
  fit.n_records = pts.size();

  double min_hit = kInf, max_hit = -kInf, min_miss = kInf, max_miss = -kInf;
  std::size_t hits = 0;
  for (const auto& p : pts) {
    if (p.y) {
      ++hits;
      min_hit = std::min(min_hit, p.x);
      max_hit = std::max(max_hit, p.x);
    } else {
      min_miss = std::min(min_miss, p.x);
      max_miss = std::max(max_miss, p.x);
    }
  }
  const bool distinct = pts.front().x != pts.back().x;
  if (!distinct) {
    clear_estimates(fit);
    fit.message = "fewer than two distinct sizes";
    return fit;
  }
  if (hits == 0 || hits == pts.size()) {
    clear_estimates(fit);
    fit.separation_detected = true;
    fit.message = hits == 0 ? "all records are misses" : "all records are hits";
    return fit;
  }
  if (max_miss <= min_hit || max_hit <= min_miss) {
    clear_estimates(fit);
    fit.separation_detected = true;
    fit.message = "outcomes are perfectly ordered by size";
    return fit;
  }

  // Newton runs on a standardised abscissa so tolerances and the divergence
  // limit do not depend on the size unit.
  double centre = 0.0, spread = 0.0;
  for (const auto& p : pts) centre += p.x;
  centre /= static_cast<double>(pts.size());
  for (const auto& p : pts) spread += (p.x - centre) * (p.x - centre);
  spread = std::sqrt(spread / static_cast<double>(pts.size()));
  const std::vector<Point> raw = std::move(pts);
  pts.clear();
  for (const auto& p : raw) pts.push_back({(p.x - centre) / spread, p.y});

  const double ybar = static_cast<double>(hits) / static_cast<double>(pts.size());
  double b0 = logit(ybar), b1 = 0.0;
  double ll = log_likelihood(pts, b0, b1);
  fit.log_likelihood_trace.push_back(ll);

  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    const auto d = derivatives(pts, b0, b1);
    if (std::max(std::abs(d.score[0]), std::abs(d.score[1])) < options.score_tolerance) {
      fit.converged = true;
      break;
    }
    std::array<std::array<double, 2>, 2> inv;
    if (!invert2(d.info, inv)) {
      fit.message = "information matrix is singular";
      break;
    }
    const double s0 = inv[0][0] * d.score[0] + inv[0][1] * d.score[1];
    const double s1 = inv[1][0] * d.score[0] + inv[1][1] * d.score[1];

    double t = 1.0;
    bool accepted = false;
    double n0 = b0, n1 = b1, nll = ll;
    for (int halving = 0; halving < 60; ++halving, t *= 0.5) {
      n0 = b0 + t * s0;
      n1 = b1 + t * s1;
      nll = log_likelihood(pts, n0, n1);
      if (nll >= ll) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // No ascent direction left at double precision.
      fit.converged = true;
      fit.message = "converged to numerical precision";
      break;
    }
    const double step = std::max(std::abs(n0 - b0), std::abs(n1 - b1));
    b0 = n0;
    b1 = n1;
    ll = nll;
    fit.log_likelihood_trace.push_back(ll);
    fit.iterations = it + 1;
    if (std::abs(b0) > options.coefficient_limit || std::abs(b1) > options.coefficient_limit) {
      clear_estimates(fit);
      fit.separation_detected = true;
      fit.message = "coefficients diverge; likelihood has no interior maximum";
      return fit;
    }
    if (step < options.step_tolerance) {
      fit.converged = true;
      break;
    }
  }

  fit.beta0 = b0 - b1 * centre / spread;
  fit.beta1 = b1 / spread;
  fit.log_likelihood = ll;
  if (!fit.converged) {
    if (fit.message.empty()) fit.message = "iteration limit reached";
    fit.covariance = {{{kNaN, kNaN}, {kNaN, kNaN}}};
    fit.a50_mm = fit.a90_mm = fit.a90_95_mm = kNaN;
    return fit;
  }
  const auto d = derivatives(pts, b0, b1);
  std::array<std::array<double, 2>, 2> cov;
  if (!invert2(d.info, cov)) {
    fit.converged = false;
    fit.message = "information matrix is singular at the optimum";
    fit.a50_mm = fit.a90_mm = fit.a90_95_mm = kNaN;
    return fit;
  }
  // beta = A gamma with A = [[1, -c/s], [0, 1/s]]
  const double k = centre / spread;
  fit.covariance[0][0] = cov[0][0] - 2.0 * k * cov[0][1] + k * k * cov[1][1];
  fit.covariance[0][1] = fit.covariance[1][0] = (cov[0][1] - k * cov[1][1]) / spread;
  fit.covariance[1][1] = cov[1][1] / (spread * spread);
  if (!(b1 > 0.0)) fit.message = "non-positive slope";
  fit.a50_mm = a_p(fit, 0.5);
  fit.a90_mm = a_p(fit, 0.9);
  try {
    fit.a90_95_mm = a_p_lower_95(fit, 0.9);
  } catch (const NoSolutionError&) {
    fit.a90_95_mm = kInf;
  }
  return fit;
}

double linear_predictor(const PodFit& fit, double size_mm) {
  return fit.beta0 + fit.beta1 * to_abscissa(fit.scale, size_mm);
}

double linear_predictor_se(const PodFit& fit, double size_mm) {
  const double x = to_abscissa(fit.scale, size_mm);
  const auto& v = fit.covariance;
  const double var = v[0][0] + 2.0 * x * v[0][1] + x * x * v[1][1];
  return std::sqrt(std::max(0.0, var));
}

double pod(const PodFit& fit, double size_mm) {
  require_usable(fit);
  return logistic(linear_predictor(fit, size_mm));
}

double pod_lower95(const PodFit& fit, double size_mm) {
  require_usable(fit);
  return logistic(linear_predictor(fit, size_mm) - kOneSided95 * linear_predictor_se(fit, size_mm));
}

double a_p(const PodFit& fit, double p) {
  require_usable(fit);
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("probability must lie in (0, 1)");
  return from_abscissa(fit.scale, (logit(p) - fit.beta0) / fit.beta1);
}

double a_p_lower_95(const PodFit& fit, double p) {
  const double ap = a_p(fit, p);
  if (!(fit.beta1 > 0.0)) throw NoSolutionError("POD does not increase with size");
  const double target = logit(p);
  // Concave in the abscissa, so {g >= 0} is an interval to the right of a_p.
  auto g = [&](double a) {
    return linear_predictor(fit, a) - kOneSided95 * linear_predictor_se(fit, a) - target;
  };
  if (g(ap) >= 0.0) return ap;

  double lo = ap;
  double span = ap > 0.0 ? 9.0 * ap : 9.0 * std::max(std::abs(ap), 1.0);
  double hi = ap + span;
  int doublings = 0;
  while (!(g(hi) >= 0.0)) {
    if (++doublings > 60 || !std::isfinite(hi)) {
      throw NoSolutionError("lower confidence bound never reaches POD " + std::to_string(p));
    }
    lo = hi;
    span *= 2.0;
    hi = ap + span;
  }
  for (int i = 0; i < 400 && hi - lo > 4.0 * std::numeric_limits<double>::epsilon() * std::abs(hi); ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (g(mid) >= 0.0 ? hi : lo) = mid;
  }
  return hi;
}

A9095Report report_a9095(const PodFit& fit, std::span<const HitMissRecord> records) {
  std::optional<double> smallest;
  bool all_hit = true;
  bool any = false;
  for (const auto& r : records) {
    if (r.false_call_context || r.size_mm <= 0.0) continue;
    any = true;
    if (!r.hit) {
      all_hit = false;
    } else if (!smallest || r.size_mm < *smallest) {
      smallest = r.size_mm;
    }
  }
  if (!any) throw std::invalid_argument("no records with nonzero flaw size");
  if (all_hit) return {*smallest, kSmallestFoundTag};
  return {a_p_lower_95(fit, 0.9), kHandbookTag};
}

TrialScore score_trial(std::span<const ResponseEntry> responses, std::span<const TruthEntry> truth,
                       const std::string& subject_id, const ScoreOptions& options) {
  if (!(options.scan_tolerance_mm >= 0.0)) throw std::invalid_argument("scan tolerance must be >= 0");
  std::map<std::string, const ResponseEntry*> by_image;
  for (const auto& t : truth) by_image.emplace(t.image_id, nullptr);
  for (const auto& r : responses) {
    auto it = by_image.find(r.image_id);
    if (it == by_image.end()) throw std::invalid_argument("response references unknown image " + r.image_id);
    if (it->second) throw std::invalid_argument("more than one response for image " + r.image_id);
    it->second = &r;
  }

  TrialScore score;
  for (const auto& t : truth) {
    const auto* resp = by_image.at(t.image_id);
    if (!resp) throw std::invalid_argument("no response for image " + t.image_id);
    const auto& marks = resp->marks_mm;
    HitMissRecord rec{t.has_flaw ? t.size_mm : 0.0, false, subject_id, t.image_id, !t.has_flaw};
    if (!t.has_flaw) {
      rec.hit = !marks.empty();
      score.false_call_count += options.presence_only ? (marks.empty() ? 0 : 1) : marks.size();
    } else if (options.presence_only) {
      rec.hit = !marks.empty();
    } else {
      for (double m : marks) {
        if (std::abs(m - t.scan_center_mm) <= options.scan_tolerance_mm) {
          rec.hit = true;
        } else {
          ++score.false_call_count;
        }
      }
    }
    score.records.push_back(std::move(rec));
  }
  return score;
}

std::vector<CurvePoint> pod_curve(const PodFit& fit, std::span<const double> sizes_mm) {
  require_usable(fit);
  std::vector<CurvePoint> out;
  out.reserve(sizes_mm.size());
  for (double a : sizes_mm) out.push_back({a, pod(fit, a), pod_lower95(fit, a)});
  return out;
}

std::vector<double> size_grid(double lo, double hi, std::size_t n) {
  if (n < 2 || !(hi > lo)) throw std::invalid_argument("size grid needs n >= 2 and hi > lo");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return out;
}

}  // namespace utaug
