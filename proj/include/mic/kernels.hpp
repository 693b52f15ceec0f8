#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

// Hot inner loops shared by the tensor engine and the codec. Each kernel has
// an OpenMP variant (default) and a serial reference under kernels::serial;
// the two must produce bit-identical output (per-output-element reductions
// keep a fixed summation order regardless of thread count).

namespace mic::kernels {

// C[m x n] = A[m x k] * B[k x n]
void matmul_nn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n);
// C[m x n] = A[m x k] * B[n x k]^T
void matmul_nt(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n);
// C[m x n] = A[k x m]^T * B[k x n]
void matmul_tn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n);

// im2col for NCHW input: col is [C*KH*KW x N*OH*OW], column-major over
// output positions (one column per (n, oy, ox)).
void im2col(const double* x, double* col,
            std::size_t n, std::size_t c, std::size_t h, std::size_t w,
            std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad,
            std::size_t oh, std::size_t ow);
// scatter-add transpose of im2col
void col2im(const double* col, double* x,
            std::size_t n, std::size_t c, std::size_t h, std::size_t w,
            std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad,
            std::size_t oh, std::size_t ow);

// Exhaustive SAD block match of one macroblock against a reference frame.
// cur points at the current frame (h x w x c, u8); the block origin is
// (by, bx). Reference reads are clamped to frame bounds. Returns the best
// (dy, dx) within +/-search_range; ties broken by smallest |dy|+|dx|, then
// row-major candidate order (dy outer, dx inner).
void sad_search(const std::uint8_t* cur, const std::uint8_t* ref,
                std::size_t h, std::size_t w, std::size_t c,
                std::size_t by, std::size_t bx, std::size_t mb,
                int search_range, int* best_dy, int* best_dx);

// Best motion vectors for every macroblock of a frame (row-major block order).
void motion_search_frame(const std::uint8_t* cur, const std::uint8_t* ref,
                         std::size_t h, std::size_t w, std::size_t c,
                         std::size_t mb, int search_range,
                         std::vector<int>& dy, std::vector<int>& dx);

namespace serial {
void matmul_nn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n);
void motion_search_frame(const std::uint8_t* cur, const std::uint8_t* ref,
                         std::size_t h, std::size_t w, std::size_t c,
                         std::size_t mb, int search_range,
                         std::vector<int>& dy, std::vector<int>& dx);
}  // namespace serial

}  // namespace mic::kernels
