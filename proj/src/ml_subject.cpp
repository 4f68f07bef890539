#include <algorithm>
#include <limits>
#include <stdexcept>

#include "utaug/trial.hpp"

namespace utaug {

double envelope_peak_mm(const nn::Network& net, const NextImage& image) {
  const auto env = nn::envelope(net, image.pixels);
  const std::size_t rows = env.dim(1), cols = env.dim(2);
  const auto values = env.values();
  // Laterally uniform echoes (back wall, geometry) are removed by subtracting
  // each time column's median over scan positions.
  std::vector<double> column(rows);
  double best_excess = -std::numeric_limits<double>::infinity();
  std::size_t best_row = 0;
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t r = 0; r < rows; ++r) column[r] = values[r * cols + c];
    auto mid = column.begin() + static_cast<std::ptrdiff_t>(rows / 2);
    std::nth_element(column.begin(), mid, column.end());
    const double median = *mid;
    for (std::size_t r = 0; r < rows; ++r) {
      const double excess = values[r * cols + c] - median;
      if (excess > best_excess) {
        best_excess = excess;
        best_row = r;
      }
    }
  }
  // Pooled row r covers image scan columns [r*pool, (r+1)*pool).
  const double centre = (static_cast<double>(best_row) + 0.5) * static_cast<double>(net.config().first_pool.rows);
  const double frac = centre / static_cast<double>(image.n);
  return image.scan_start_mm + frac * (image.scan_end_mm - image.scan_start_mm);
}

std::string run_ml_subject(TrialClient& client, const std::string& trial_id, const nn::Network& net,
                           const MlSubjectOptions& options) {
  const auto session = client.create_session(trial_id, options.subject_id);
  while (auto image = client.next_image(session.session_id)) {
    if (image->n != net.config().input_n) {
      throw std::invalid_argument("trial images are " + std::to_string(image->n) + "x" + std::to_string(image->n) +
                                  " but the model expects " + std::to_string(net.config().input_n));
    }
    std::vector<double> marks;
    if (nn::classify(net, image->pixels, options.threshold)) marks.push_back(envelope_peak_mm(net, *image));
    client.submit_response(session.session_id, image->image_index, marks, 0.0);
  }
  return session.session_id;
}

}  // namespace utaug
