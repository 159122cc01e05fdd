#pragma once

// Data-parallel inner loops. Every kernel has a serial reference in
// `kernels::ref` and an OpenMP version in `kernels::omp`; the unqualified
// entry points dispatch to the OpenMP path when the work is large enough.
// Parallel versions split only over independent output rows, so results are
// bit-identical to the reference regardless of thread count.

#include "ppad/tensor.hpp"

#include <span>
#include <vector>

namespace ppad::kernels {

/// Grid description for bilinear sampling. Cell (i, j) has its center at
/// (origin_x + j * cell, origin_y + i * cell); i indexes rows (y), j columns (x).
struct GridMeta {
    int height = 0;
    int width = 0;
    int channels = 0;
    double origin_x = 0.0;
    double origin_y = 0.0;
    double cell = 1.0;
};

/// Four bilinear taps of a metric point. Taps outside the grid carry index -1
/// and contribute nothing (zero padding).
struct BilinearTaps {
    int index[4] = {-1, -1, -1, -1};
    double weight[4] = {0, 0, 0, 0};
    // d weight / d x and d weight / d y, for location gradients
    double dwx[4] = {0, 0, 0, 0};
    double dwy[4] = {0, 0, 0, 0};
    double fu = 0, fv = 0; // fractional cell position
};

BilinearTaps bilinear_taps(const GridMeta& g, double x, double y);

namespace ref {
// C (+)= A * B           A: m x k, B: k x n
void gemm_nn(const Mat& a, const Mat& b, Mat& c, bool accumulate);
// C (+)= A * B^T         A: m x k, B: n x k
void gemm_nt(const Mat& a, const Mat& b, Mat& c, bool accumulate);
// C (+)= A^T * B         A: k x m, B: k x n
void gemm_tn(const Mat& a, const Mat& b, Mat& c, bool accumulate);
// D(i, j) = ||q_i - k_j||, q and k given as N x 2 coordinate rows
void pairwise_distance(const Mat& q, const Mat& k, Mat& d);
// Samples grid [H*W x C] at each point row [P x 2] -> [P x C]
void bilinear_sample(const Mat& grid, const GridMeta& meta, const Mat& points, Mat& out);
} // namespace ref

namespace omp {
void gemm_nn(const Mat& a, const Mat& b, Mat& c, bool accumulate);
void gemm_nt(const Mat& a, const Mat& b, Mat& c, bool accumulate);
void gemm_tn(const Mat& a, const Mat& b, Mat& c, bool accumulate);
void pairwise_distance(const Mat& q, const Mat& k, Mat& d);
void bilinear_sample(const Mat& grid, const GridMeta& meta, const Mat& points, Mat& out);
} // namespace omp

void gemm_nn(const Mat& a, const Mat& b, Mat& c, bool accumulate = false);
void gemm_nt(const Mat& a, const Mat& b, Mat& c, bool accumulate = false);
void gemm_tn(const Mat& a, const Mat& b, Mat& c, bool accumulate = false);
void pairwise_distance(const Mat& q, const Mat& k, Mat& d);
void bilinear_sample(const Mat& grid, const GridMeta& meta, const Mat& points, Mat& out);

/// Number of threads the OpenMP path would use (1 when built without OpenMP).
int max_threads();

} // namespace ppad::kernels
