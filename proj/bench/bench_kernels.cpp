// Timing comparison of the OpenMP kernels against their serial reference
// twins. Prints one row per kernel: serial ms, parallel ms, speedup.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "streamid/kernels.hpp"
#include "streamid/rng.hpp"

namespace ker = streamid::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, streamid::Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const std::string& name, double serial_ms, double parallel_ms) {
  std::printf("%-24s %10.3f ms %10.3f ms   x%.2f\n", name.c_str(), serial_ms,
              parallel_ms, serial_ms / parallel_ms);
}

}  // namespace

int main() {
  streamid::Rng rng(7);
  const int batch = 64, cin = 32, cout = 64, len = 120, k = 7;
  const int dim = 256;

#ifdef _OPENMP
  std::printf("threads: %d\n", omp_get_max_threads());
#else
  std::printf("threads: 1 (built without OpenMP)\n");
#endif
  std::printf("%-24s %13s %13s\n", "kernel", "serial", "openmp");

  {
    const auto x = random_vec(static_cast<std::size_t>(batch) * cin * len, rng);
    const auto w = random_vec(static_cast<std::size_t>(cout) * cin * k, rng);
    const auto b = random_vec(static_cast<std::size_t>(cout), rng);
    std::vector<double> y(static_cast<std::size_t>(batch) * cout * len);
    report("conv1d_forward",
           time_ms([&] {
             ker::serial::conv1d_forward(x.data(), w.data(), b.data(), y.data(),
                                         batch, cin, cout, len, k);
           }, 5),
           time_ms([&] {
             ker::conv1d_forward(x.data(), w.data(), b.data(), y.data(), batch,
                                 cin, cout, len, k);
           }, 5));

    std::vector<double> dx(x.size());
    report("conv1d_backward_data",
           time_ms([&] {
             ker::serial::conv1d_backward_data(y.data(), w.data(), dx.data(),
                                               batch, cin, cout, len, k);
           }, 5),
           time_ms([&] {
             ker::conv1d_backward_data(y.data(), w.data(), dx.data(), batch,
                                       cin, cout, len, k);
           }, 5));

    std::vector<double> dw(w.size());
    std::vector<double> db(b.size());
    report("conv1d_backward_params",
           time_ms([&] {
             ker::serial::conv1d_backward_params(y.data(), x.data(), dw.data(),
                                                 db.data(), batch, cin, cout,
                                                 len, k);
           }, 5),
           time_ms([&] {
             ker::conv1d_backward_params(y.data(), x.data(), dw.data(),
                                         db.data(), batch, cin, cout, len, k);
           }, 5));
  }

  {
    const int in = 512, out = 1024;
    const auto x = random_vec(static_cast<std::size_t>(batch) * in, rng);
    const auto w = random_vec(static_cast<std::size_t>(out) * in, rng);
    const auto b = random_vec(static_cast<std::size_t>(out), rng);
    std::vector<double> y(static_cast<std::size_t>(batch) * out);
    report("dense_forward",
           time_ms([&] {
             ker::serial::dense_forward(x.data(), w.data(), b.data(), y.data(),
                                        batch, in, out);
           }, 10),
           time_ms([&] {
             ker::dense_forward(x.data(), w.data(), b.data(), y.data(), batch,
                                in, out);
           }, 10));
  }

  {
    const auto x = random_vec(static_cast<std::size_t>(batch) * cout * len, rng);
    std::vector<double> y(x.size());
    std::vector<double> xhat(x.size());
    std::vector<double> mean(static_cast<std::size_t>(cout));
    std::vector<double> var(static_cast<std::size_t>(cout));
    const auto gamma = random_vec(static_cast<std::size_t>(cout), rng);
    const auto beta = random_vec(static_cast<std::size_t>(cout), rng);
    report("bn_stats+apply",
           time_ms([&] {
             ker::serial::bn_stats(x.data(), batch, cout, len, mean.data(),
                                   var.data());
             ker::serial::bn_apply(x.data(), y.data(), xhat.data(), mean.data(),
                                   var.data(), gamma.data(), beta.data(), 1e-5,
                                   batch, cout, len);
           }, 10),
           time_ms([&] {
             ker::bn_stats(x.data(), batch, cout, len, mean.data(), var.data());
             ker::bn_apply(x.data(), y.data(), xhat.data(), mean.data(),
                           var.data(), gamma.data(), beta.data(), 1e-5, batch,
                           cout, len);
           }, 10));
  }

  {
    const int n = 256;
    const auto e = random_vec(static_cast<std::size_t>(n) * dim, rng);
    std::vector<double> d(static_cast<std::size_t>(n) * n);
    report("pairwise_distances",
           time_ms([&] {
             ker::serial::pairwise_distances(e.data(), d.data(), n, dim);
           }, 10),
           time_ms([&] { ker::pairwise_distances(e.data(), d.data(), n, dim); },
                   10));
  }

  return 0;
}
