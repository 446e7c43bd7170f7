#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <utility>
#include <vector>

namespace sol {

/// Gauss-Legendre nodes and weights on [-1, 1], nodes in decreasing order.
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: n must be positive");
  std::vector<double> x(n), w(n);
  const int half = (n + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = z;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (z * p1 - p0) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    // Recompute the derivative at the converged node for the weight.
    double p0 = 1.0, p1 = z;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    dp = n * (z * p1 - p0) / (z * z - 1.0);
    x[i] = z;
    x[n - 1 - i] = -z;
    w[i] = w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
  if (n % 2 == 1) x[n / 2] = 0.0;
  return {std::move(x), std::move(w)};
}

/// Orthonormal associated Legendre functions, stored m-major:
/// value(l, m) = sqrt((2l+1)/(4 pi) (l-m)!/(l+m)!) P_l^m(cos theta), without
/// the Condon-Shortley phase. Real harmonics are Y_l0 = P(l,0),
/// Y_lm = sqrt(2) P(l,m) cos(m phi), Y_l,-m = sqrt(2) P(l,m) sin(m phi).
class LegendreRecurrence {
 public:
  explicit LegendreRecurrence(int band_limit) : L_(band_limit) {
    if (L_ < 0 || L_ > 1024) throw std::invalid_argument("LegendreRecurrence: band limit out of range");
    a_.resize(size());
    b_.resize(size());
    diag_.resize(L_ + 1);
    sub_.resize(L_ + 1);
    for (int m = 0; m <= L_; ++m) {
      diag_[m] = m == 0 ? 0.0 : std::sqrt((2.0 * m + 1.0) / (2.0 * m));
      sub_[m] = std::sqrt(2.0 * m + 3.0);
      for (int l = m + 2; l <= L_; ++l) {
        const double l2 = double(l) * l, m2 = double(m) * m;
        a_[index(l, m)] = std::sqrt((4.0 * l2 - 1.0) / (l2 - m2));
        const double lm1 = l - 1.0;
        b_[index(l, m)] = std::sqrt((lm1 * lm1 - m2) / (4.0 * lm1 * lm1 - 1.0));
      }
    }
  }

  int band_limit() const { return L_; }
  std::size_t size() const { return std::size_t(L_ + 1) * (L_ + 2) / 2; }
  std::size_t offset(int m) const {
    return std::size_t(m) * (L_ + 1) - std::size_t(m) * (m - 1) / 2;
  }
  std::size_t index(int l, int m) const { return offset(m) + (l - m); }

  /// Fills out[index(l,m)] for 0 <= m <= l <= L at cos(theta) = t,
  /// sin(theta) = s >= 0. Orders whose sectoral seed underflows are zeroed.
  void evaluate(double t, double s, double* out) const {
    constexpr double kTiny = 1e-250;
    double pmm = 1.0 / std::sqrt(4.0 * std::numbers::pi);
    for (int m = 0; m <= L_; ++m) {
      if (m > 0) pmm *= diag_[m] * s;
      double* col = out + offset(m);
      const int count = L_ - m + 1;
      if (std::abs(pmm) < kTiny) {
        for (int m2 = m; m2 <= L_; ++m2) {
          double* c2 = out + offset(m2);
          for (int k = 0; k < L_ - m2 + 1; ++k) c2[k] = 0.0;
        }
        return;
      }
      col[0] = pmm;
      if (count > 1) col[1] = sub_[m] * t * pmm;
      const std::size_t base = offset(m);
      for (int l = m + 2; l <= L_; ++l) {
        const std::size_t k = l - m;
        col[k] = a_[base + k] * (t * col[k - 1] - b_[base + k] * col[k - 2]);
      }
    }
  }

  /// Same as evaluate() but also fills d/dtheta of each function.
  void evaluate_with_derivative(double t, double s, double* out, double* dout) const {
    evaluate(t, s, out);
    // dP_lm/dtheta = (1/s) * (l t P_lm - sqrt((2l+1)/(2l-1) (l^2-m^2)) P_{l-1,m}).
    for (int m = 0; m <= L_; ++m) {
      const std::size_t base = offset(m);
      for (int l = m; l <= L_; ++l) {
        const std::size_t k = base + (l - m);
        if (s < 1e-300) {
          dout[k] = 0.0;
          continue;
        }
        double prev = 0.0;
        if (l > m) {
          prev = std::sqrt((2.0 * l + 1.0) / (2.0 * l - 1.0) * (double(l) * l - double(m) * m)) *
                 out[k - 1];
        }
        dout[k] = (l * t * out[k] - prev) / s;
      }
    }
  }

 private:
  int L_;
  std::vector<double> a_, b_, diag_, sub_;
};

}  // namespace sol
