// Serial reference kernels against their OpenMP counterparts, plus one full
// rollout per iteration count. Run with --benchmark_filter to pick a group.

#include "ppad/kernels.hpp"
#include "ppad/model.hpp"
#include "ppad/rng.hpp"

#include <benchmark/benchmark.h>

using namespace ppad;

namespace {

Mat random(int r, int c, std::uint64_t seed)
{
    CounterRng rng(seed);
    Mat m(r, c);
    for (double& v : m.values()) v = rng.uniform(-1, 1);
    return m;
}

template <void (*Gemm)(const Mat&, const Mat&, Mat&, bool)>
void gemm(benchmark::State& st)
{
    const int n = static_cast<int>(st.range(0));
    const Mat a = random(n, n, 1), b = random(n, n, 2);
    Mat c(n, n);
    for (auto _ : st) {
        Gemm(a, b, c, false);
        benchmark::DoNotOptimize(c.values().data());
    }
    st.SetItemsProcessed(st.iterations() * 2LL * n * n * n);
}

template <void (*Dist)(const Mat&, const Mat&, Mat&)>
void distance(benchmark::State& st)
{
    const int n = static_cast<int>(st.range(0));
    const Mat q = random(n, 2, 3), k = random(4 * n, 2, 4);
    Mat d(n, 4 * n);
    for (auto _ : st) {
        Dist(q, k, d);
        benchmark::DoNotOptimize(d.values().data());
    }
}

template <void (*Sample)(const Mat&, const kernels::GridMeta&, const Mat&, Mat&)>
void bilinear(benchmark::State& st)
{
    const int n = static_cast<int>(st.range(0));
    kernels::GridMeta meta{32, 64, 32, -30.0, -15.0, 60.0 / 64};
    const Mat grid = random(meta.height * meta.width, meta.channels, 5);
    Mat pts = random(n, 2, 6);
    for (double& v : pts.values()) v *= 28.0;
    Mat out(n, meta.channels);
    for (auto _ : st) {
        Sample(grid, meta, pts, out);
        benchmark::DoNotOptimize(out.values().data());
    }
}

void rollout(benchmark::State& st)
{
    model::PpadConfig cfg;
    cfg.iterations = static_cast<int>(st.range(0));
    model::Params p(cfg);
    model::init_params(p, 0, false);
    const scene::SceneConfig scfg;
    const scene::Scene sc = scene::generate_scene(scene::Scenario::lane_change_merge, 3, scfg);
    for (auto _ : st) benchmark::DoNotOptimize(model::rollout(sc, scfg, p).plan_offsets.values().data());
}

} // namespace

BENCHMARK(gemm<kernels::ref::gemm_nn>)->Name("gemm_nn/ref")->Arg(32)->Arg(128);
BENCHMARK(gemm<kernels::omp::gemm_nn>)->Name("gemm_nn/omp")->Arg(32)->Arg(128);
BENCHMARK(gemm<kernels::ref::gemm_nt>)->Name("gemm_nt/ref")->Arg(32)->Arg(128);
BENCHMARK(gemm<kernels::omp::gemm_nt>)->Name("gemm_nt/omp")->Arg(32)->Arg(128);
BENCHMARK(gemm<kernels::ref::gemm_tn>)->Name("gemm_tn/ref")->Arg(32)->Arg(128);
BENCHMARK(gemm<kernels::omp::gemm_tn>)->Name("gemm_tn/omp")->Arg(32)->Arg(128);
BENCHMARK(distance<kernels::ref::pairwise_distance>)->Name("distance/ref")->Arg(64)->Arg(512);
BENCHMARK(distance<kernels::omp::pairwise_distance>)->Name("distance/omp")->Arg(64)->Arg(512);
BENCHMARK(bilinear<kernels::ref::bilinear_sample>)->Name("bilinear/ref")->Arg(64)->Arg(4096);
BENCHMARK(bilinear<kernels::omp::bilinear_sample>)->Name("bilinear/omp")->Arg(64)->Arg(4096);
BENCHMARK(rollout)->Name("rollout")->Arg(2)->Arg(3)->Arg(6)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
