#include "ctd/fft_convolution.hpp"

#include <bit>
#include <complex>
#include <map>
#include <mutex>

#include <fftw3.h>

#include "ctd/errors.hpp"

namespace ctd {

namespace {

struct PlanPair {
  fftw_plan forward = nullptr;
  fftw_plan backward = nullptr;
};

// FFTW planning is not thread-safe; execution through the new-array API is.
class PlanCache {
 public:
  ~PlanCache() {
    for (auto& [n, p] : plans_) {
      fftw_destroy_plan(p.forward);
      fftw_destroy_plan(p.backward);
    }
  }

  PlanPair get(std::size_t n) {
    std::lock_guard lock(mutex_);
    auto it = plans_.find(n);
    if (it != plans_.end()) return it->second;
    std::vector<double> re(n);
    std::vector<std::complex<double>> spec(n / 2 + 1);
    auto* cplx = reinterpret_cast<fftw_complex*>(spec.data());
    const int len = static_cast<int>(n);
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    PlanPair p{fftw_plan_dft_r2c_1d(len, re.data(), cplx, flags), fftw_plan_dft_c2r_1d(len, cplx, re.data(), flags)};
    if (!p.forward || !p.backward) throw ConsistencyError("FFTW plan creation failed");
    plans_.emplace(n, p);
    return p;
  }

 private:
  std::mutex mutex_;
  std::map<std::size_t, PlanPair> plans_;
};

PlanCache& plan_cache() {
  static PlanCache cache;
  return cache;
}

}  // namespace

std::vector<double> linear_convolution(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t out_len = a.size() + b.size() - 1;
  const std::size_t n = std::bit_ceil(std::max<std::size_t>(out_len, 2));
  const PlanPair plans = plan_cache().get(n);

  std::vector<double> fa(n, 0.0), fb(n, 0.0);
  std::copy(a.begin(), a.end(), fa.begin());
  std::copy(b.begin(), b.end(), fb.begin());
  std::vector<std::complex<double>> sa(n / 2 + 1), sb(n / 2 + 1);
  fftw_execute_dft_r2c(plans.forward, fa.data(), reinterpret_cast<fftw_complex*>(sa.data()));
  fftw_execute_dft_r2c(plans.forward, fb.data(), reinterpret_cast<fftw_complex*>(sb.data()));
  for (std::size_t i = 0; i < sa.size(); ++i) sa[i] *= sb[i];
  fftw_execute_dft_c2r(plans.backward, reinterpret_cast<fftw_complex*>(sa.data()), fa.data());

  const double scale = 1.0 / static_cast<double>(n);
  std::vector<double> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) out[i] = fa[i] * scale;
  return out;
}

}  // namespace ctd
