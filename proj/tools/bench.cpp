#include <chrono>
#include <cstdio>
#include <cstdlib>

#include "dem/evolution.hpp"

int main(int argc, char** argv) {
  using namespace dem;
  const int seeds = argc > 1 ? std::atoi(argv[1]) : 1;
  const int iters = argc > 2 ? std::atoi(argv[2]) : 30;
  for (int s = 0; s < seeds; ++s) {
    ShiftSpec spec = benchmark_spec(100 + static_cast<std::uint64_t>(s) + (std::getenv("SEED0") ? std::atoi(std::getenv("SEED0")) : 0));
    if (const char* v = std::getenv("SEP")) spec.class_separation = std::atof(v);
    if (const char* v = std::getenv("OFFSET")) spec.class0_offset = std::atof(v);
    if (const char* v = std::getenv("PRIOR")) spec.class_prior_target = std::atof(v);
    auto [src, tgt] = generate_domain_pair(spec);
    LoopConfig cfg;
    cfg.seed = spec.seed;
    cfg.screening_iterations = cfg.evolving_iterations = iters;
    if (const char* v = std::getenv("ALR")) cfg.adapt_learning_rate = std::atof(v);
    if (const char* v = std::getenv("PRE")) cfg.pretrain_epochs = std::atoi(v);
    auto t0 = std::chrono::steady_clock::now();
    auto base = source_only_baseline(src, tgt, cfg);
    auto t1 = std::chrono::steady_clock::now();
    std::printf("seed %d baseline src %.2f tgt %.2f epochs %d (%.1fs)\n", s, base.source_test.accuracy.point,
                base.target_test.accuracy.point, base.history.epochs_run, std::chrono::duration<double>(t1 - t0).count());
    DemRun run(prepare_data(src, tgt, cfg), cfg, LossWeights{});
    run.pretrain();
    auto t2 = std::chrono::steady_clock::now();
    std::printf("  pretrain epochs %d init pl acc %.3f (%.1fs)\n", run.pretrain_result().history.epochs_run,
                label_accuracy(run.pretrain_result().pseudo_labels, run.data().target_pool_hidden),
                std::chrono::duration<double>(t2 - t1).count());
    if (std::getenv("NODEM")) continue;
    auto rep = run.run();
    auto t3 = std::chrono::steady_clock::now();
    for (const auto& l : rep.iterations)
      std::printf("  %s %2d best %.4f beam %.4f size %zu pl %.3f conf %.3f\n", l.phase.c_str(), l.iteration, l.best_reward,
                  l.beam_best_reward, l.beam_size, l.pseudo_label_accuracy, l.mean_confidence);
    std::printf("  src-col tgt %.2f | screening tgt %.2f src %.2f | evolving tgt %.2f src %.2f (%.1fs)\n",
                rep.source_column_target_test.accuracy.point, rep.screening.target_test.accuracy.point,
                rep.screening.source_test.accuracy.point, rep.evolving.target_test.accuracy.point,
                rep.evolving.source_test.accuracy.point, std::chrono::duration<double>(t3 - t2).count());
  }
}
