#include "cebsd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace cebsd {

template <std::size_t C>
double normalized_error(const ChannelMap<C>& ref, const ChannelMap<C>& est) {
  if (!(ref.grid() == est.grid())) throw ShapeError("normalized_error: grid mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    const auto a = ref.channel(c);
    const auto b = est.channel(c);
    for (std::size_t i = 0; i < a.size(); ++i) {
      num += (a[i] - b[i]) * (a[i] - b[i]);
      den += a[i] * a[i];
    }
  }
  if (den == 0.0) throw std::invalid_argument("normalized_error: reference has zero norm");
  return std::sqrt(num / den);
}

double hit_rate(std::size_t zsp_count, std::size_t n_probes) {
  if (n_probes == 0 || zsp_count > n_probes) {
    throw std::invalid_argument("hit_rate: need 0 <= zsp_count <= N_p and N_p > 0");
  }
  return 1.0 - static_cast<double>(zsp_count) / static_cast<double>(n_probes);
}

template <std::size_t C>
double data_range(const ChannelMap<C>& ref) {
  double lo = ref.channel(0)[0], hi = lo;
  for (std::size_t c = 0; c < C; ++c) {
    const auto [mn, mx] = std::minmax_element(ref.channel(c).begin(), ref.channel(c).end());
    lo = std::min(lo, *mn);
    hi = std::max(hi, *mx);
  }
  return hi > lo ? hi - lo : 1.0;
}

namespace {

std::vector<double> window_weights(const SsimParams& p) {
  std::vector<double> w(p.window, 1.0 / static_cast<double>(p.window));
  if (p.kind == SsimWindow::gaussian) {
    const double mid = 0.5 * static_cast<double>(p.window - 1);
    double sum = 0.0;
    for (std::size_t i = 0; i < p.window; ++i) {
      const double d = static_cast<double>(i) - mid;
      w[i] = std::exp(-0.5 * d * d / (p.gaussian_sigma * p.gaussian_sigma));
      sum += w[i];
    }
    for (double& v : w) v /= sum;
  }
  return w;
}

/// Valid-mode separable filtering of an h x w image with a 1-D kernel along both axes.
std::vector<double> filter_valid(std::span<const double> img, std::size_t h, std::size_t w,
                                 const std::vector<double>& k) {
  const std::size_t n = k.size();
  const std::size_t ow = w - n + 1;
  const std::size_t oh = h - n + 1;
  std::vector<double> rows(h * ow, 0.0);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < ow; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += k[i] * img[r * w + c + i];
      rows[r * ow + c] = s;
    }
  }
  std::vector<double> out(oh * ow, 0.0);
  for (std::size_t r = 0; r < oh; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      const double kv = k[i];
      const double* src = &rows[(r + i) * ow];
      double* dst = &out[r * ow];
      for (std::size_t c = 0; c < ow; ++c) dst[c] += kv * src[c];
    }
  }
  return out;
}

double ssim_channel(std::span<const double> x, std::span<const double> y, std::size_t h,
                    std::size_t w, const std::vector<double>& k, double c1, double c2) {
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, h, w, k);
  const auto my = filter_valid(y, h, w, k);
  const auto mxx = filter_valid(xx, h, w, k);
  const auto myy = filter_valid(yy, h, w, k);
  const auto mxy = filter_valid(xy, h, w, k);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = mxx[i] - mx[i] * mx[i];
    const double vy = myy[i] - my[i] * my[i];
    const double cxy = mxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

}  // namespace

template <std::size_t C>
double ssim(const ChannelMap<C>& ref, const ChannelMap<C>& est, const SsimParams& params) {
  if (!(ref.grid() == est.grid())) throw ShapeError("ssim: grid mismatch");
  const std::size_t h = ref.grid().height();
  const std::size_t w = ref.grid().width();
  if (params.window == 0 || params.window > h || params.window > w) {
    throw ShapeError("ssim: window " + std::to_string(params.window) + " does not fit map " +
                     to_string(ref.grid()));
  }
  const double range = params.dynamic_range.value_or(data_range(ref));
  const double c1 = (params.k1 * range) * (params.k1 * range);
  const double c2 = (params.k2 * range) * (params.k2 * range);
  const auto k = window_weights(params);
  double sum = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    sum += ssim_channel(ref.channel(c), est.channel(c), h, w, k, c1, c2);
  }
  return sum / static_cast<double>(C);
}

template double normalized_error<1>(const ScalarMap&, const ScalarMap&);
template double normalized_error<3>(const RgbMap&, const RgbMap&);
template double data_range<1>(const ScalarMap&);
template double data_range<3>(const RgbMap&);
template double ssim<1>(const ScalarMap&, const ScalarMap&, const SsimParams&);
template double ssim<3>(const RgbMap&, const RgbMap&, const SsimParams&);

}  // namespace cebsd
