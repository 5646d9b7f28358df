// Times serial against OpenMP dense kernels on a few batch shapes.

#include <chrono>
#include <cstdio>
#include <random>
#include <vector>

#include "nclamp/kernels.hpp"

namespace {

using Clock = std::chrono::steady_clock;

template <class F>
double best_of(int reps, F&& f) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = Clock::now();
        f();
        const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
        if (ms < best) best = ms;
    }
    return best;
}

}  // namespace

int main() {
    namespace k = nclamp::kernels;
    std::mt19937_64 rng(1);
    std::normal_distribution<double> unit(0.0, 1.0);

    std::printf("threads=%d\n", k::max_threads());
    std::printf("%8s %6s %6s %12s %12s %8s\n", "batch", "in", "out", "serial_ms", "parallel_ms", "speedup");

    const std::size_t shapes[][3] = {{512, 8, 32}, {2048, 32, 32}, {8192, 64, 64}, {16384, 128, 128}};
    for (const auto& s : shapes) {
        const std::size_t n = s[0], in = s[1], out = s[2];
        std::vector<double> xv(n * in), w(out * in), b(out), dyv(n * out);
        for (auto* v : {&xv, &w, &b, &dyv}) {
            for (double& e : *v) e = unit(rng);
        }
        const nclamp::Tensor x(n, in, xv);
        const nclamp::Tensor dy(n, out, dyv);
        std::vector<double> dw(out * in), db(out);

        const double ts = best_of(5, [&] {
            k::serial::dense_forward(x, w, b, out);
            k::serial::dense_backward_input(dy, w, in);
            k::serial::dense_backward_params(x, dy, dw, db);
        });
        const double tp = best_of(5, [&] {
            k::parallel::dense_forward(x, w, b, out);
            k::parallel::dense_backward_input(dy, w, in);
            k::parallel::dense_backward_params(x, dy, dw, db);
        });
        std::printf("%8zu %6zu %6zu %12.3f %12.3f %8.2f\n", n, in, out, ts, tp, ts / tp);
    }
    return 0;
}
