#include "kam/autocorr.hpp"
#include "kam/eval.hpp"
#include "kam/projector.hpp"
#include "kam/retrieval.hpp"
#include "kam/so3.hpp"
#include "kam/volume.hpp"

#include <Eigen/QR>
#include <benchmark/benchmark.h>

#include <random>

using namespace kam;

namespace {

const BasisSpec& basisFor(int maxDegree) {
    static std::vector<BasisSpec> cache;
    for (const auto& b : cache)
        if (b.maxDegree == maxDegree) return b;
    cache.push_back(BasisSpec::make(0.25, 32.0, maxDegree));
    return cache.back();
}

StiefelPoint randomHalves(int maxDegree, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    StiefelPoint x;
    for (int l = 1; l <= maxDegree; ++l) {
        Eigen::MatrixXd g(2 * l + 1, l + 1);
        for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = nd(rng);
        x.push_back(Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ() * Eigen::MatrixXd::Identity(2 * l + 1, l + 1));
    }
    return x;
}

} // namespace

static void BM_WignerDAll(benchmark::State& state) {
    const int l = static_cast<int>(state.range(0));
    const Rotation r = sampleUniformRotations(1, 1).front();
    for (auto _ : state) benchmark::DoNotOptimize(realWignerDAll(l, r));
}
BENCHMARK(BM_WignerDAll)->Arg(6)->Arg(10)->Arg(20);

static void BM_ProjectClean(benchmark::State& state) {
    const auto& basis = basisFor(static_cast<int>(state.range(0)));
    const auto a = randomCoefficients(basis, 2);
    const auto grid = PolarGridSpec::forBasis(basis);
    const Rotation r = sampleUniformRotations(1, 3).front();
    for (auto _ : state) benchmark::DoNotOptimize(projectClean(a, r, grid));
}
BENCHMARK(BM_ProjectClean)->Arg(6)->Arg(10);

static void BM_MatchingCostGradient(benchmark::State& state) {
    const int L = static_cast<int>(state.range(0));
    const auto& basis = basisFor(L);
    const auto a = randomCoefficients(basis, 4);
    const auto f = factorize(clFromCoefficients(a));
    const auto grid = PolarGridSpec::forBasis(basis);
    const SliceDesign design(f, grid);
    const MatchingCost cost(design, projectClean(a, Rotation::identity(), grid), a.block(0).col(0));
    const auto x = randomHalves(L, 5);
    StiefelPoint g;
    for (auto _ : state) benchmark::DoNotOptimize(cost(x, &g));
}
BENCHMARK(BM_MatchingCostGradient)->Arg(6)->Arg(10);

static void BM_MatchSingleImage(benchmark::State& state) {
    const auto& basis = basisFor(6);
    const auto a = randomCoefficients(basis, 6);
    const auto f = factorize(clFromCoefficients(a));
    const auto grid = PolarGridSpec::forBasis(basis);
    const auto image = projectClean(a, Rotation::identity(), grid);
    for (auto _ : state)
        benchmark::DoNotOptimize(matchSingleImage(f, image, a.block(0).col(0), {.starts = 1, .maxStarts = 0}));
}
BENCHMARK(BM_MatchSingleImage)->Unit(benchmark::kMillisecond);

static void BM_MergeGridSearch(benchmark::State& state) {
    HalfAssignment h1, h2;
    h1.halves = randomHalves(6, 7);
    h2.halves = randomHalves(6, 8);
    const auto grid = so3Grid(state.range(0) / 100.0);
    state.counters["rotations"] = static_cast<double>(grid.size());
    for (auto _ : state) benchmark::DoNotOptimize(mergeByGridSearch(h1, h2, grid, {.candidates = 5}));
}
BENCHMARK(BM_MergeGridSearch)->Arg(30)->Arg(15)->Unit(benchmark::kMillisecond);

static void BM_Fsc(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    std::mt19937_64 rng(9);
    std::normal_distribution<double> nd;
    VolumeGrid a(n), b(n);
    for (auto& v : a.data) v = nd(rng);
    for (auto& v : b.data) v = nd(rng);
    for (auto _ : state) benchmark::DoNotOptimize(fsc(a, b));
}
BENCHMARK(BM_Fsc)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

static void BM_AlignGlobally(benchmark::State& state) {
    const auto& basis = basisFor(6);
    const auto a = randomCoefficients(basis, 10);
    const auto b = rotateCoefficients(a, sampleUniformRotations(1, 11).front());
    for (auto _ : state) benchmark::DoNotOptimize(alignGlobally(a, b));
}
BENCHMARK(BM_AlignGlobally)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
