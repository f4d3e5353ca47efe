// Serial reference kernels against their OpenMP counterparts.
//
//   ./bench_kernels --benchmark_filter=solve_note
//   OMP_NUM_THREADS=4 ./bench_kernels

#include <benchmark/benchmark.h>

#include <map>
#include <random>

#include "notehelp/fusion_kernels.hpp"
#include "notehelp/mf_kernels.hpp"
#include "oracles.hpp"

using namespace notehelp;

namespace {

// Every rater rates a random ~density share of notes; values are drawn from
// {0, 0.5, 1} around a per-note bias so the fit has something to find.
SparseRatingMatrix synthetic_matrix(std::size_t notes, std::size_t raters, double density) {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::string> noteIds(notes), raterIds(raters);
    for (std::size_t i = 0; i < notes; ++i) noteIds[i] = "n" + std::to_string(1000000 + i);
    for (std::size_t j = 0; j < raters; ++j) raterIds[j] = "r" + std::to_string(1000000 + j);
    std::vector<MatrixEntry> entries;
    for (std::size_t i = 0; i < notes; ++i) {
        const double bias = u(rng);
        for (std::size_t j = 0; j < raters; ++j) {
            if (u(rng) >= density) continue;
            const double x = bias + 0.3 * (u(rng) - 0.5);
            entries.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j),
                               x < 0.33 ? 0.0 : x < 0.66 ? 0.5 : 1.0});
        }
    }
    return make_matrix(std::move(noteIds), std::move(raterIds), std::move(entries));
}

struct MfFixture {
    SparseRatingMatrix m;
    kernels::RatingIndex idx;
    MfConfig config;
    MfParams params;

    explicit MfFixture(std::size_t notes) : m(synthetic_matrix(notes, notes / 2, 0.05)) {
        idx = kernels::RatingIndex::build(m);
        config.k = 1;
        config.maxEpochs = 5;
        params = fit_mf(m, config);
    }
};

const MfFixture& mf_fixture(std::size_t notes) {
    static std::map<std::size_t, MfFixture> cache;
    auto it = cache.find(notes);
    if (it == cache.end()) it = cache.try_emplace(notes, notes).first;
    return it->second;
}

void set_rating_counters(benchmark::State& state, const MfFixture& f) {
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * f.m.entries.size()));
    state.counters["ratings"] = static_cast<double>(f.m.entries.size());
}

void BM_solve_note_blocks_reference(benchmark::State& state) {
    const auto& f = mf_fixture(static_cast<std::size_t>(state.range(0)));
    auto p = f.params;
    for (auto _ : state) {
        kernels::reference::solve_note_blocks(f.m, p, f.config);
        benchmark::DoNotOptimize(p.noteIntercept.data());
    }
    set_rating_counters(state, f);
}

void BM_solve_note_blocks_parallel(benchmark::State& state) {
    const auto& f = mf_fixture(static_cast<std::size_t>(state.range(0)));
    auto p = f.params;
    for (auto _ : state) {
        kernels::parallel::solve_note_blocks(f.idx, p, f.config);
        benchmark::DoNotOptimize(p.noteIntercept.data());
    }
    set_rating_counters(state, f);
}

void BM_solve_rater_blocks_reference(benchmark::State& state) {
    const auto& f = mf_fixture(static_cast<std::size_t>(state.range(0)));
    auto p = f.params;
    for (auto _ : state) {
        kernels::reference::solve_rater_blocks(f.m, p, f.config);
        benchmark::DoNotOptimize(p.raterIntercept.data());
    }
    set_rating_counters(state, f);
}

void BM_solve_rater_blocks_parallel(benchmark::State& state) {
    const auto& f = mf_fixture(static_cast<std::size_t>(state.range(0)));
    auto p = f.params;
    for (auto _ : state) {
        kernels::parallel::solve_rater_blocks(f.idx, p, f.config);
        benchmark::DoNotOptimize(p.raterIntercept.data());
    }
    set_rating_counters(state, f);
}

void BM_squared_error_reference(benchmark::State& state) {
    const auto& f = mf_fixture(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(kernels::reference::squared_error(f.m, f.params));
    set_rating_counters(state, f);
}

void BM_squared_error_parallel(benchmark::State& state) {
    const auto& f = mf_fixture(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(kernels::parallel::squared_error(f.idx, f.params));
    set_rating_counters(state, f);
}

void BM_gradient_reference(benchmark::State& state) {
    const auto& f = mf_fixture(static_cast<std::size_t>(state.range(0)));
    kernels::MfGradient g;
    for (auto _ : state) {
        kernels::reference::gradient(f.m, f.params, f.config, g);
        benchmark::DoNotOptimize(g.mu);
    }
    set_rating_counters(state, f);
}

void BM_gradient_parallel(benchmark::State& state) {
    const auto& f = mf_fixture(static_cast<std::size_t>(state.range(0)));
    kernels::MfGradient g;
    for (auto _ : state) {
        kernels::parallel::gradient(f.idx, f.params, f.config, g);
        benchmark::DoNotOptimize(g.mu);
    }
    set_rating_counters(state, f);
}

void BM_pseudo_bounds_reference(benchmark::State& state) {
    const auto& f = mf_fixture(static_cast<std::size_t>(state.range(0)));
    std::vector<NoteBounds> out;
    for (auto _ : state) {
        kernels::reference::pseudo_bounds(f.m, f.params, f.config, 1, out);
        benchmark::DoNotOptimize(out.data());
    }
    set_rating_counters(state, f);
}

void BM_pseudo_bounds_parallel(benchmark::State& state) {
    const auto& f = mf_fixture(static_cast<std::size_t>(state.range(0)));
    std::vector<NoteBounds> out;
    for (auto _ : state) {
        kernels::parallel::pseudo_bounds(f.idx, f.params, f.config, 1, out);
        benchmark::DoNotOptimize(out.data());
    }
    set_rating_counters(state, f);
}

struct FusionFixture {
    FusionModel model;
    std::vector<std::vector<double>> reasons;
    std::vector<FusionExample> batch;

    explicit FusionFixture(std::size_t n)
        : model(FusionModel::random(32, 4, 5)),
          reasons(testing::random_reason_embeddings(32, 6)),
          batch(testing::separable_batch(n, 32, 7)) {}
};

const FusionFixture& fusion_fixture(std::size_t n) {
    static std::map<std::size_t, FusionFixture> cache;
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.try_emplace(n, n).first;
    return it->second;
}

void BM_fusion_loss_grad_reference(benchmark::State& state) {
    const auto& f = fusion_fixture(static_cast<std::size_t>(state.range(0)));
    auto grad = FusionModel::zeros(f.model.dim, f.model.heads);
    for (auto _ : state) {
        benchmark::DoNotOptimize(kernels::reference::fusion_loss_grad(f.model, f.reasons, f.batch, {}, &grad));
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * f.batch.size()));
}

void BM_fusion_loss_grad_parallel(benchmark::State& state) {
    const auto& f = fusion_fixture(static_cast<std::size_t>(state.range(0)));
    auto grad = FusionModel::zeros(f.model.dim, f.model.heads);
    for (auto _ : state) {
        benchmark::DoNotOptimize(kernels::parallel::fusion_loss_grad(f.model, f.reasons, f.batch, {}, &grad));
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * f.batch.size()));
}

}  // namespace

#define MF_SIZES ->Arg(2000)->Arg(20000)->Unit(benchmark::kMillisecond)
BENCHMARK(BM_solve_note_blocks_reference) MF_SIZES;
BENCHMARK(BM_solve_note_blocks_parallel) MF_SIZES;
BENCHMARK(BM_solve_rater_blocks_reference) MF_SIZES;
BENCHMARK(BM_solve_rater_blocks_parallel) MF_SIZES;
BENCHMARK(BM_squared_error_reference) MF_SIZES;
BENCHMARK(BM_squared_error_parallel) MF_SIZES;
BENCHMARK(BM_gradient_reference) MF_SIZES;
BENCHMARK(BM_gradient_parallel) MF_SIZES;
BENCHMARK(BM_pseudo_bounds_reference) MF_SIZES;
BENCHMARK(BM_pseudo_bounds_parallel) MF_SIZES;

#define FUSION_SIZES ->Arg(64)->Arg(512)->Unit(benchmark::kMillisecond)
BENCHMARK(BM_fusion_loss_grad_reference) FUSION_SIZES;
BENCHMARK(BM_fusion_loss_grad_parallel) FUSION_SIZES;

BENCHMARK_MAIN();
