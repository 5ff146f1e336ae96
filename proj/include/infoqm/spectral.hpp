#pragma once

#include <fftw3.h>

#include <complex>
#include <mutex>
#include <numbers>
#include <vector>

#include "infoqm/errors.hpp"
#include "infoqm/lattice.hpp"

namespace infoqm {

// In-place complex FFT over the whole grid (row-major, matches site order).
class FftPlan {
 public:
  FftPlan(const Grid& g, std::vector<std::complex<double>>& buffer) : size_(g.size()) {
    if (!g.all_periodic()) throw MethodUnavailable("spectral transform requires an all-periodic grid");
    if (buffer.size() != size_) throw InvalidArgument("fft: buffer size mismatch");
    std::vector<int> n(g.dimension());
    for (std::size_t k = 0; k < n.size(); ++k) n[k] = static_cast<int>(g.points(k));
    auto* data = reinterpret_cast<fftw_complex*>(buffer.data());
    std::lock_guard<std::mutex> lock(planner_mutex());
    fwd_ = fftw_plan_dft(static_cast<int>(n.size()), n.data(), data, data, FFTW_FORWARD, FFTW_ESTIMATE);
    bwd_ = fftw_plan_dft(static_cast<int>(n.size()), n.data(), data, data, FFTW_BACKWARD, FFTW_ESTIMATE);
    data_ = data;
  }
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;
  ~FftPlan() {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(bwd_);
  }

  void forward() { fftw_execute(fwd_); }
  // Inverse transform including the 1/N normalization.
  void backward() {
    fftw_execute(bwd_);
    const double c = 1.0 / static_cast<double>(size_);
    for (std::size_t i = 0; i < size_; ++i) {
      data_[i][0] *= c;
      data_[i][1] *= c;
    }
  }

 private:
  static std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
  }
  std::size_t size_;
  fftw_plan fwd_ = nullptr, bwd_ = nullptr;
  fftw_complex* data_ = nullptr;
};

// Angular wavenumber of FFT bin j on an axis of n points and length L.
inline double wavenumber(std::size_t j, std::size_t n, double L) {
  const long jj = static_cast<long>(j) < static_cast<long>((n + 1) / 2) ? static_cast<long>(j)
                                                                         : static_cast<long>(j) - static_cast<long>(n);
  return 2.0 * std::numbers::pi * static_cast<double>(jj) / L;
}

// sum_i g_ii k_i^2 for every FFT bin.
inline std::vector<double> kinetic_symbol(const Grid& g, const Metric& m) {
  std::vector<double> out(g.size(), 0.0);
  for (std::size_t s = 0; s < g.size(); ++s) {
    double v = 0.0;
    for (std::size_t k = 0; k < g.dimension(); ++k) {
      const double kk = wavenumber(g.axis_index(s, k), g.points(k), g.length(k));
      v += m.inverse_mass(k) * kk * kk;
    }
    out[s] = v;
  }
  return out;
}

}  // namespace infoqm
