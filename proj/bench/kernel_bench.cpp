// Compares the OpenMP kernels against their serial references: wall time and
// bit-exact agreement on the same inputs.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#include "mic/kernels.hpp"
#include "mic/rng.hpp"

namespace {

using clock_type = std::chrono::steady_clock;

double time_of(int reps, const auto& fn) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = clock_type::now();
        fn();
        const auto t1 = clock_type::now();
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
}

void report(const char* name, double serial_s, double omp_s, bool identical) {
    std::printf("%-24s serial %8.3f ms   parallel %8.3f ms   speedup %5.2fx   %s\n", name,
                serial_s * 1e3, omp_s * 1e3, serial_s / omp_s,
                identical ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main() {
    mic::Rng rng(42);

    {
        const std::size_t m = 256, k = 512, n = 256;
        std::vector<double> a(m * k), b(k * n), c_omp(m * n), c_ser(m * n);
        for (auto& v : a) v = rng.normal();
        for (auto& v : b) v = rng.normal();
        const double ts = time_of(3, [&] {
            mic::kernels::serial::matmul_nn(a.data(), b.data(), c_ser.data(), m, k, n);
        });
        const double tp = time_of(3, [&] {
            mic::kernels::matmul_nn(a.data(), b.data(), c_omp.data(), m, k, n);
        });
        report("matmul 256x512x256", ts, tp,
               std::memcmp(c_ser.data(), c_omp.data(), m * n * sizeof(double)) == 0);
    }

    {
        const std::size_t h = 128, w = 128, c = 3, mb = 8;
        std::vector<std::uint8_t> cur(h * w * c), ref(h * w * c);
        for (auto& v : cur) v = static_cast<std::uint8_t>(rng.uniform_index(256));
        for (auto& v : ref) v = static_cast<std::uint8_t>(rng.uniform_index(256));
        std::vector<int> dy_s, dx_s, dy_p, dx_p;
        const double ts = time_of(3, [&] {
            mic::kernels::serial::motion_search_frame(cur.data(), ref.data(), h, w, c, mb, 4,
                                                      dy_s, dx_s);
        });
        const double tp = time_of(3, [&] {
            mic::kernels::motion_search_frame(cur.data(), ref.data(), h, w, c, mb, 4, dy_p,
                                              dx_p);
        });
        report("motion search 128x128", ts, tp, dy_s == dy_p && dx_s == dx_p);
    }
    return 0;
}
