// Serial reference vs OpenMP kernels at desk-scale shapes.
// Run: ./build/bench/bench_kernels  (BYTEVEIL_THREADS / OMP_NUM_THREADS cap workers)

#include "byteveil/attack.hpp"
#include "byteveil/kernels.hpp"
#include "byteveil/malconv.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

using namespace byteveil;

struct Fixture {
    ModelParams params;
    InputVector x;
    std::vector<double> z;
    std::vector<double> grad;

    Fixture()
    {
        Hyper h;  // desk defaults
        params = ModelParams::random(h, 7);
        std::mt19937_64 rng(11);
        x.values.resize(h.d);
        x.informative_len = h.d / 2;
        for (std::size_t i = 0; i < h.d; ++i)
            x.values[i] = static_cast<std::uint8_t>(rng());
        z = embed(params, x);
        grad = grad_wrt_embedding(params, forward(params, x).trace);
    }
};

const Fixture& fixture()
{
    static const Fixture f;
    return f;
}

template <Exec exec>
void BM_GatedConv(benchmark::State& state)
{
    const auto& f = fixture();
    const Hyper& h = f.params.hyper;
    std::vector<double> a(h.n_windows() * h.n_filters), b(a.size());
    for (auto _ : state) {
        kernels::gated_conv_forward(exec, f.z, h.conv_shape(), {f.params.conv_relu_w, f.params.conv_relu_b},
                                    {f.params.conv_sigm_w, f.params.conv_sigm_b}, {}, a, b);
        benchmark::DoNotOptimize(a.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long>(h.n_windows() * h.n_filters));
}
BENCHMARK(BM_GatedConv<Exec::Serial>)->Name("gated_conv/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GatedConv<Exec::Parallel>)->Name("gated_conv/omp")->Unit(benchmark::kMillisecond);

template <Exec exec>
void BM_Sweep(benchmark::State& state)
{
    const auto& f = fixture();
    const Hyper& h = f.params.hyper;
    for (auto _ : state) {
        std::vector<std::uint8_t> values = f.x.values;
        auto stats = kernels::projection_sweep(exec, values, f.x.informative_len, h.d, f.grad,
                                               f.params.embedding, h.e);
        benchmark::DoNotOptimize(stats);
    }
}
BENCHMARK(BM_Sweep<Exec::Serial>)->Name("projection_sweep/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Sweep<Exec::Parallel>)->Name("projection_sweep/omp")->Unit(benchmark::kMillisecond);

template <Exec exec>
void BM_Forward(benchmark::State& state)
{
    const auto& f = fixture();
    for (auto _ : state)
        benchmark::DoNotOptimize(forward(f.params, f.x, exec).f);
}
BENCHMARK(BM_Forward<Exec::Serial>)->Name("forward/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Forward<Exec::Parallel>)->Name("forward/omp")->Unit(benchmark::kMillisecond);

void BM_GradWrtEmbedding(benchmark::State& state)
{
    const auto& f = fixture();
    const auto trace = forward(f.params, f.x).trace;
    for (auto _ : state)
        benchmark::DoNotOptimize(grad_wrt_embedding(f.params, trace).data());
}
BENCHMARK(BM_GradWrtEmbedding)->Name("grad_wrt_embedding")->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
