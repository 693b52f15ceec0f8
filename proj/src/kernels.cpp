#include "mic/kernels.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <limits>

namespace mic::kernels {

void matmul_nn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        double* ci = c + i * n;
        std::memset(ci, 0, n * sizeof(double));
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void matmul_nt(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] = acc;
        }
    }
}

void matmul_tn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        double* ci = c + i * n;
        std::memset(ci, 0, n * sizeof(double));
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[p * m + i];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void im2col(const double* x, double* col,
            std::size_t n, std::size_t c, std::size_t h, std::size_t w,
            std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad,
            std::size_t oh, std::size_t ow) {
    const std::size_t ncols = n * oh * ow;
    const std::size_t nrows = c * kh * kw;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(nrows); ++r) {
        const std::size_t ch = r / (kh * kw);
        const std::size_t ky = (r / kw) % kh;
        const std::size_t kx = r % kw;
        double* out = col + r * ncols;
        std::size_t idx = 0;
        for (std::size_t img = 0; img < n; ++img) {
            const double* plane = x + (img * c + ch) * h * w;
            for (std::size_t oy = 0; oy < oh; ++oy) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                          static_cast<std::ptrdiff_t>(pad);
                for (std::size_t ox = 0; ox < ow; ++ox, ++idx) {
                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                              static_cast<std::ptrdiff_t>(pad);
                    const bool in = iy >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                                    ix >= 0 && ix < static_cast<std::ptrdiff_t>(w);
                    out[idx] = in ? plane[iy * w + ix] : 0.0;
                }
            }
        }
    }
}

void col2im(const double* col, double* x,
            std::size_t n, std::size_t c, std::size_t h, std::size_t w,
            std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad,
            std::size_t oh, std::size_t ow) {
    const std::size_t ncols = n * oh * ow;
    // parallel over channels: every write for channel ch stays in its plane
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ch = 0; ch < static_cast<std::ptrdiff_t>(c); ++ch) {
        for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::size_t r = (ch * kh + ky) * kw + kx;
                const double* in = col + r * ncols;
                std::size_t idx = 0;
                for (std::size_t img = 0; img < n; ++img) {
                    double* plane = x + (img * c + ch) * h * w;
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        const std::ptrdiff_t iy =
                            static_cast<std::ptrdiff_t>(oy * stride + ky) -
                            static_cast<std::ptrdiff_t>(pad);
                        for (std::size_t ox = 0; ox < ow; ++ox, ++idx) {
                            const std::ptrdiff_t ix =
                                static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                static_cast<std::ptrdiff_t>(pad);
                            if (iy >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                                ix >= 0 && ix < static_cast<std::ptrdiff_t>(w))
                                plane[iy * w + ix] += in[idx];
                        }
                    }
                }
            }
        }
    }
}

namespace {
inline std::size_t clamp_coord(std::ptrdiff_t v, std::size_t hi) {
    if (v < 0) return 0;
    if (v >= static_cast<std::ptrdiff_t>(hi)) return hi - 1;
    return static_cast<std::size_t>(v);
}
}  // namespace

void sad_search(const std::uint8_t* cur, const std::uint8_t* ref,
                std::size_t h, std::size_t w, std::size_t c,
                std::size_t by, std::size_t bx, std::size_t mb,
                int search_range, int* best_dy, int* best_dx) {
    long best = std::numeric_limits<long>::max();
    int best_abs = 0;
    *best_dy = 0;
    *best_dx = 0;
    for (int dy = -search_range; dy <= search_range; ++dy) {
        for (int dx = -search_range; dx <= search_range; ++dx) {
            long sad = 0;
            for (std::size_t y = 0; y < mb; ++y) {
                const std::size_t ry = clamp_coord(
                    static_cast<std::ptrdiff_t>(by + y) - dy, h);
                const std::uint8_t* crow = cur + ((by + y) * w + bx) * c;
                for (std::size_t x = 0; x < mb; ++x) {
                    const std::size_t rx = clamp_coord(
                        static_cast<std::ptrdiff_t>(bx + x) - dx, w);
                    const std::uint8_t* rpix = ref + (ry * w + rx) * c;
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        const int d = static_cast<int>(crow[x * c + ch]) -
                                      static_cast<int>(rpix[ch]);
                        sad += d < 0 ? -d : d;
                    }
                }
                if (sad >= best && std::abs(dy) + std::abs(dx) >= best_abs) break;
            }
            const int ab = std::abs(dy) + std::abs(dx);
            if (sad < best || (sad == best && ab < best_abs)) {
                best = sad;
                best_abs = ab;
                *best_dy = dy;
                *best_dx = dx;
            }
        }
    }
}

void motion_search_frame(const std::uint8_t* cur, const std::uint8_t* ref,
                         std::size_t h, std::size_t w, std::size_t c,
                         std::size_t mb, int search_range,
                         std::vector<int>& dy, std::vector<int>& dx) {
    const std::size_t bh = h / mb, bw = w / mb;
    dy.assign(bh * bw, 0);
    dx.assign(bh * bw, 0);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(bh * bw); ++b) {
        const std::size_t by = (b / bw) * mb, bx = (b % bw) * mb;
        sad_search(cur, ref, h, w, c, by, bx, mb, search_range, &dy[b], &dx[b]);
    }
}

namespace serial {

void matmul_nn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        std::memset(ci, 0, n * sizeof(double));
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void motion_search_frame(const std::uint8_t* cur, const std::uint8_t* ref,
                         std::size_t h, std::size_t w, std::size_t c,
                         std::size_t mb, int search_range,
                         std::vector<int>& dy, std::vector<int>& dx) {
    const std::size_t bh = h / mb, bw = w / mb;
    dy.assign(bh * bw, 0);
    dx.assign(bh * bw, 0);
    for (std::size_t b = 0; b < bh * bw; ++b) {
        const std::size_t by = (b / bw) * mb, bx = (b % bw) * mb;
        sad_search(cur, ref, h, w, c, by, bx, mb, search_range, &dy[b], &dx[b]);
    }
}

}  // namespace serial

}  // namespace mic::kernels
