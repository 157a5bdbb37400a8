// Serial reference vs OpenMP for the hot kernels. The two policies run the
// same code path and produce bit-identical results; only the schedule
// differs. Set OMP_NUM_THREADS to control the parallel width.

#include <benchmark/benchmark.h>

#include <numeric>

#include "b2diff/branch_sampler.hpp"
#include "b2diff/metrics.hpp"
#include "b2diff/objectives.hpp"
#include "b2diff/trainer.hpp"

using namespace b2diff;

namespace {

ExecPolicy policy_of(const benchmark::State& state) {
  return state.range(0) ? ExecPolicy::Parallel : ExecPolicy::Serial;
}

struct Fixture {
  ExperimentConfig cfg;
  NoiseSchedule sched = cfg.schedule();
  DenoiserParams params = init_params(cfg.resolved_arch(), 1);
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_SampleRound(benchmark::State& state) {
  const auto& f = fixture();
  const SamplingContext ctx{f.sched, f.cfg.sampler, kTrainSigmaFloor};
  const RoundSamplingConfig rc{64, 3, 14};
  const auto conds = f.cfg.world.conditions();
  std::uint64_t round = 0;
  for (auto _ : state) {
    auto branches = sample_round(f.params, conds, rc, ctx, 0, round++, policy_of(state));
    benchmark::DoNotOptimize(branches);
  }
  state.SetItemsProcessed(state.iterations() * 64);
}

// Per-sample gradients computed independently, then reduced in order: the
// trainer's accumulation pattern.
void BM_GradientAccumulation(benchmark::State& state) {
  const auto& f = fixture();
  const SamplingContext sctx{f.sched, f.cfg.sampler, kTrainSigmaFloor};
  auto branches = sample_round(f.params, f.cfg.world.conditions(), {64, 3, 14}, sctx, 0, 0);
  std::vector<TrainingSample> samples;
  for (auto& br : branches) {
    for (std::size_t k = 0; k < br.trajectories.size(); ++k)
      br.trajectories[k].normalized_reward = static_cast<double>(k) - 1.0;
    samples.push_back(select_training_samples(br, 0.5));
  }
  const PolicyContext pctx{f.params, f.sched, f.cfg.sampler, kTrainSigmaFloor};
  std::vector<double> grad(f.params.size());
  for (auto _ : state) {
    std::vector<StepGradient> partial(samples.size());
    parallel_for(policy_of(state), samples.size(), [&](std::size_t i) {
      partial[i] = StepGradient(f.params.size());
      accumulate_sample_grad(samples[i], pctx, f.cfg.objective, {}, partial[i]);
    });
    std::fill(grad.begin(), grad.end(), 0.0);
    for (const auto& p : partial)
      for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += p.param_grad[k];
    benchmark::DoNotOptimize(grad.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(samples.size()));
}

void BM_PretrainSteps(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) {
    auto p = pretrain(f.cfg.world, f.cfg, 10, 0, nullptr, policy_of(state));
    benchmark::DoNotOptimize(p.values.data());
  }
  state.SetItemsProcessed(state.iterations() * 10 * static_cast<std::int64_t>(f.cfg.pretrain.batch_size));
}

void BM_InceptionScore(benchmark::State& state) {
  const auto& f = fixture();
  const auto xs = sample_final(f.params, f.cfg.world.conditions(), 4096, f.sched, f.cfg.sampler, 3);
  for (auto _ : state) benchmark::DoNotOptimize(inception_score(xs, f.cfg.world, policy_of(state)));
  state.SetItemsProcessed(state.iterations() * 4096);
}

}  // namespace

BENCHMARK(BM_SampleRound)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GradientAccumulation)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PretrainSteps)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_InceptionScore)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
