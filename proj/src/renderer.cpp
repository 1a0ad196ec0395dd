#include "lsf/renderer.hpp"

#include <algorithm>

namespace lsf {

std::vector<double> stratified_samples(const Ray& ray, int n, Rng& rng) {
  return stratified_samples_with(ray, n, [&rng] { return rng.uniform(); });
}

namespace renderer_detail {

std::vector<double> inverse_cdf(const std::vector<double>& weights,
                                const std::vector<double>& depths,
                                double t_far, int n_fine, Rng& rng,
                                double eps) {
  size_t n = weights.size();
  if (n == 0 || depths.size() != n)
    throw InputError("fine sampling: weights and depths must match");
  for (double w : weights)
    if (w < 0) throw InputError("fine sampling: negative weight");
  std::vector<double> lo(n), hi(n), cdf(n + 1, 0.0);
  for (size_t i = 0; i < n; ++i) {
    lo[i] = depths[i];
    hi[i] = i + 1 < n ? depths[i + 1] : t_far;
    cdf[i + 1] = cdf[i] + weights[i] + eps;
  }
  double total = cdf[n];
  std::vector<double> out(n_fine);
  for (int s = 0; s < n_fine; ++s) {
    double u = rng.uniform() * total;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    size_t bin = std::min<size_t>(n - 1, it - cdf.begin() - 1);
    double frac = (u - cdf[bin]) / (cdf[bin + 1] - cdf[bin]);
    out[s] = lo[bin] + frac * (hi[bin] - lo[bin]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace renderer_detail

std::vector<double> fine_samples(const std::vector<double>& weights,
                                 const std::vector<double>& depths,
                                 double t_far, int n_fine, Rng& rng,
                                 double eps) {
  auto out =
      renderer_detail::inverse_cdf(weights, depths, t_far, n_fine, rng, eps);
  out.insert(out.end(), depths.begin(), depths.end());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace lsf
