#include "ppad/kernels.hpp"

#include <cmath>
#include <stdexcept>

#ifdef PPAD_HAVE_OPENMP
#include <omp.h>
#endif

namespace ppad::kernels {

namespace {

void prepare_output(Mat& c, int rows, int cols, bool accumulate)
{
    if (accumulate) {
        if (c.rows() != rows || c.cols() != cols) {
            throw std::invalid_argument("gemm: accumulate target has shape " + c.shape_str());
        }
    } else if (c.rows() != rows || c.cols() != cols) {
        c = Mat(rows, cols);
    } else {
        std::fill(c.values().begin(), c.values().end(), 0.0);
    }
}

// Row kernels shared by the serial and parallel drivers. Each writes one
// output row with a fixed summation order.
inline void row_nn(const Mat& a, const Mat& b, Mat& c, int i)
{
    const int k = a.cols();
    const int n = b.cols();
    double* ci = c.data() + static_cast<std::size_t>(i) * n;
    const double* ai = a.data() + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
        const double av = ai[p];
        if (av == 0.0) continue;
        const double* bp = b.data() + static_cast<std::size_t>(p) * n;
        for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
}

inline void row_nt(const Mat& a, const Mat& b, Mat& c, int i)
{
    const int k = a.cols();
    const int n = b.rows();
    double* ci = c.data() + static_cast<std::size_t>(i) * n;
    const double* ai = a.data() + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < n; ++j) {
        const double* bj = b.data() + static_cast<std::size_t>(j) * k;
        double s = 0.0;
        for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
        ci[j] += s;
    }
}

// Row i of A^T B = sum_p A(p, i) * B(p, :)
inline void row_tn(const Mat& a, const Mat& b, Mat& c, int i)
{
    const int k = a.rows();
    const int m = a.cols();
    const int n = b.cols();
    double* ci = c.data() + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
        const double av = a.data()[static_cast<std::size_t>(p) * m + i];
        if (av == 0.0) continue;
        const double* bp = b.data() + static_cast<std::size_t>(p) * n;
        for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
}

inline void row_dist(const Mat& q, const Mat& k, Mat& d, int i)
{
    for (int j = 0; j < k.rows(); ++j) {
        const double dx = q(i, 0) - k(j, 0);
        const double dy = q(i, 1) - k(j, 1);
        d(i, j) = std::sqrt(dx * dx + dy * dy);
    }
}

inline void row_sample(const Mat& grid, const GridMeta& meta, const Mat& points, Mat& out, int i)
{
    const BilinearTaps taps = bilinear_taps(meta, points(i, 0), points(i, 1));
    double* o = out.data() + static_cast<std::size_t>(i) * meta.channels;
    const double* g[4];
    for (int t = 0; t < 4; ++t)
        g[t] = taps.index[t] < 0 ? nullptr : grid.data() + static_cast<std::size_t>(taps.index[t]) * meta.channels;
    // Nested lerps: equal corner values give that value exactly, so flat
    // regions of the grid stay flat under rounding too.
    const double fu = taps.fu, fv = taps.fv;
    for (int c = 0; c < meta.channels; ++c) {
        const double v00 = g[0] ? g[0][c] : 0.0, v01 = g[1] ? g[1][c] : 0.0;
        const double v10 = g[2] ? g[2][c] : 0.0, v11 = g[3] ? g[3][c] : 0.0;
        const double top = v00 + fu * (v01 - v00);
        const double bottom = v10 + fu * (v11 - v10);
        o[c] = top + fv * (bottom - top);
    }
}

void check_nn(const Mat& a, const Mat& b)
{
    if (a.cols() != b.rows()) throw std::invalid_argument("gemm_nn: inner dims " + a.shape_str() + " * " + b.shape_str());
}
void check_nt(const Mat& a, const Mat& b)
{
    if (a.cols() != b.cols()) throw std::invalid_argument("gemm_nt: inner dims " + a.shape_str() + " * " + b.shape_str() + "^T");
}
void check_tn(const Mat& a, const Mat& b)
{
    if (a.rows() != b.rows()) throw std::invalid_argument("gemm_tn: inner dims " + a.shape_str() + "^T * " + b.shape_str());
}
void check_points(const Mat& p, const char* what)
{
    if (p.cols() != 2) throw std::invalid_argument(std::string(what) + ": expected N x 2 coordinates");
}
void check_grid(const Mat& grid, const GridMeta& meta)
{
    if (grid.rows() != meta.height * meta.width || grid.cols() != meta.channels) {
        throw std::invalid_argument("bilinear_sample: grid shape " + grid.shape_str() + " does not match meta");
    }
}

// Below this many multiply-adds the OpenMP fork costs more than it saves.
constexpr long kParallelWork = 1L << 15;

} // namespace

BilinearTaps bilinear_taps(const GridMeta& g, double x, double y)
{
    BilinearTaps taps;
    const double u = (x - g.origin_x) / g.cell;
    const double v = (y - g.origin_y) / g.cell;
    if (!std::isfinite(u) || !std::isfinite(v)) return taps;
    // Entirely outside: no tap can land on the grid.
    if (u <= -1.0 || v <= -1.0 || u >= g.width || v >= g.height) return taps;
    const double fj = std::floor(u);
    const double fi = std::floor(v);
    const int j0 = static_cast<int>(fj);
    const int i0 = static_cast<int>(fi);
    const double fu = u - fj;
    const double fv = v - fi;
    taps.fu = fu;
    taps.fv = fv;
    const int di[4] = {0, 0, 1, 1};
    const int dj[4] = {0, 1, 0, 1};
    const double w[4] = {(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv};
    const double wu[4] = {-(1 - fv), (1 - fv), -fv, fv};
    const double wv[4] = {-(1 - fu), -fu, (1 - fu), fu};
    for (int t = 0; t < 4; ++t) {
        const int i = i0 + di[t];
        const int j = j0 + dj[t];
        taps.weight[t] = w[t];
        taps.dwx[t] = wu[t] / g.cell;
        taps.dwy[t] = wv[t] / g.cell;
        if (i >= 0 && i < g.height && j >= 0 && j < g.width) {
            taps.index[t] = i * g.width + j;
        }
    }
    return taps;
}

namespace ref {

void gemm_nn(const Mat& a, const Mat& b, Mat& c, bool accumulate)
{
    check_nn(a, b);
    prepare_output(c, a.rows(), b.cols(), accumulate);
    for (int i = 0; i < a.rows(); ++i) row_nn(a, b, c, i);
}

void gemm_nt(const Mat& a, const Mat& b, Mat& c, bool accumulate)
{
    check_nt(a, b);
    prepare_output(c, a.rows(), b.rows(), accumulate);
    for (int i = 0; i < a.rows(); ++i) row_nt(a, b, c, i);
}

void gemm_tn(const Mat& a, const Mat& b, Mat& c, bool accumulate)
{
    check_tn(a, b);
    prepare_output(c, a.cols(), b.cols(), accumulate);
    for (int i = 0; i < a.cols(); ++i) row_tn(a, b, c, i);
}

void pairwise_distance(const Mat& q, const Mat& k, Mat& d)
{
    check_points(q, "pairwise_distance");
    check_points(k, "pairwise_distance");
    d = Mat(q.rows(), k.rows());
    for (int i = 0; i < q.rows(); ++i) row_dist(q, k, d, i);
}

void bilinear_sample(const Mat& grid, const GridMeta& meta, const Mat& points, Mat& out)
{
    check_grid(grid, meta);
    check_points(points, "bilinear_sample");
    out = Mat(points.rows(), meta.channels);
    for (int i = 0; i < points.rows(); ++i) row_sample(grid, meta, points, out, i);
}

} // namespace ref

namespace omp {

void gemm_nn(const Mat& a, const Mat& b, Mat& c, bool accumulate)
{
    check_nn(a, b);
    prepare_output(c, a.rows(), b.cols(), accumulate);
    const int m = a.rows();
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) row_nn(a, b, c, i);
}

void gemm_nt(const Mat& a, const Mat& b, Mat& c, bool accumulate)
{
    check_nt(a, b);
    prepare_output(c, a.rows(), b.rows(), accumulate);
    const int m = a.rows();
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) row_nt(a, b, c, i);
}

void gemm_tn(const Mat& a, const Mat& b, Mat& c, bool accumulate)
{
    check_tn(a, b);
    prepare_output(c, a.cols(), b.cols(), accumulate);
    const int m = a.cols();
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) row_tn(a, b, c, i);
}

void pairwise_distance(const Mat& q, const Mat& k, Mat& d)
{
    check_points(q, "pairwise_distance");
    check_points(k, "pairwise_distance");
    d = Mat(q.rows(), k.rows());
    const int m = q.rows();
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) row_dist(q, k, d, i);
}

void bilinear_sample(const Mat& grid, const GridMeta& meta, const Mat& points, Mat& out)
{
    check_grid(grid, meta);
    check_points(points, "bilinear_sample");
    out = Mat(points.rows(), meta.channels);
    const int m = points.rows();
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) row_sample(grid, meta, points, out, i);
}

} // namespace omp

int max_threads()
{
#ifdef PPAD_HAVE_OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace {
bool go_parallel(long work)
{
    return work >= kParallelWork && max_threads() > 1;
}
} // namespace

void gemm_nn(const Mat& a, const Mat& b, Mat& c, bool accumulate)
{
    const long work = static_cast<long>(a.rows()) * a.cols() * b.cols();
    go_parallel(work) ? omp::gemm_nn(a, b, c, accumulate) : ref::gemm_nn(a, b, c, accumulate);
}

void gemm_nt(const Mat& a, const Mat& b, Mat& c, bool accumulate)
{
    const long work = static_cast<long>(a.rows()) * a.cols() * b.rows();
    go_parallel(work) ? omp::gemm_nt(a, b, c, accumulate) : ref::gemm_nt(a, b, c, accumulate);
}

void gemm_tn(const Mat& a, const Mat& b, Mat& c, bool accumulate)
{
    const long work = static_cast<long>(a.rows()) * a.cols() * b.cols();
    go_parallel(work) ? omp::gemm_tn(a, b, c, accumulate) : ref::gemm_tn(a, b, c, accumulate);
}

void pairwise_distance(const Mat& q, const Mat& k, Mat& d)
{
    const long work = 4L * q.rows() * k.rows();
    go_parallel(work) ? omp::pairwise_distance(q, k, d) : ref::pairwise_distance(q, k, d);
}

void bilinear_sample(const Mat& grid, const GridMeta& meta, const Mat& points, Mat& out)
{
    const long work = 4L * points.rows() * meta.channels;
    go_parallel(work) ? omp::bilinear_sample(grid, meta, points, out)
                      : ref::bilinear_sample(grid, meta, points, out);
}

} // namespace ppad::kernels
