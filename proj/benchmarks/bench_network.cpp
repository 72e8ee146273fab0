#include <benchmark/benchmark.h>

#include <memory>
#include <numeric>

#include "crossrec/corpus.hpp"
#include "crossrec/network.hpp"
#include "crossrec/rng.hpp"
#include "crossrec/synthetic.hpp"
#include "crossrec/training.hpp"

using namespace crossrec;

namespace {

struct BenchSetup {
    NetworkConfig cfg;
    ModelParams params;
    FeatureMatrix ft, fs;
    std::shared_ptr<const InteractionCorpus> corpus;
    SplitCorpus split;

    explicit BenchSetup(const std::vector<int>& hidden, int embed, int fdim) {
        SyntheticConfig sc;
        sc.num_users = 200;
        sc.num_items_per_domain = 400;
        sc.latent_dim = 8;
        sc.interactions_per_user = 12;
        sc.feature_dim = fdim > 0 ? fdim : 8;
        sc.rng_seed = 5;
        SyntheticData data = generate_synthetic_corpus(sc);
        corpus = std::make_shared<InteractionCorpus>(data.corpus);
        split = leave_one_out_split(corpus, 5);

        cfg.mode = fdim > 0 ? Mode::ACDN : Mode::CDN;
        cfg.embed_dim = embed;
        cfg.feature_dim = fdim;
        cfg.hidden_sizes = hidden;
        params = init_params(cfg, corpus->num_users(), corpus->num_target_items(),
                             corpus->num_source_items(), 1);
        if (fdim > 0) {
            ft = FeatureMatrix::resolve(data.target_features, corpus->target_items);
            fs = FeatureMatrix::resolve(data.source_features, corpus->source_items);
        } else {
            ft = FeatureMatrix::none(corpus->target_items.size());
            fs = FeatureMatrix::none(corpus->source_items.size());
        }
    }
};

void BM_forward_joint(benchmark::State& state) {
    BenchSetup s({static_cast<int>(state.range(0)),
                  static_cast<int>(state.range(0)) / 2},
                 8, 32);
    Rng rng(1);
    for (auto _ : state) {
        int u = rng.uniform_index(200), i = rng.uniform_index(400),
            j = rng.uniform_index(400);
        benchmark::DoNotOptimize(forward_joint(s.params, s.cfg, u, i, j, s.ft, s.fs));
    }
}
BENCHMARK(BM_forward_joint)->Arg(32)->Arg(128)->Arg(512);

void BM_backward_batch(benchmark::State& state) {
    BenchSetup s({32, 16}, 8, 32);
    TrainingSampler sampler(s.split, 7, 1);
    TrainingBatch batch = sampler.next_batch(static_cast<int>(state.range(0)));
    for (auto _ : state)
        benchmark::DoNotOptimize(backward(batch, s.params, s.cfg, s.ft, s.fs));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_backward_batch)->Arg(32)->Arg(128)->Arg(512);

void BM_adam_step(benchmark::State& state) {
    BenchSetup s({32, 16}, 8, 32);
    TrainingSampler sampler(s.split, 7, 1);
    TrainingBatch batch = sampler.next_batch(128);
    GradientSet grads = backward(batch, s.params, s.cfg, s.ft, s.fs);
    AdamState adam = make_adam_state(s.params);
    for (auto _ : state) adam_step(s.params, grads, adam, 0.001);
}
BENCHMARK(BM_adam_step);

void BM_score_candidates(benchmark::State& state) {
    BenchSetup s({32, 16}, 8, 32);
    std::vector<int> candidates(100);
    std::iota(candidates.begin(), candidates.end(), 0);
    for (auto _ : state)
        benchmark::DoNotOptimize(score_target_candidates(
            s.params, s.cfg, 3, candidates, s.split.source_context[3], s.ft, s.fs));
    state.SetItemsProcessed(state.iterations() * 100);
}
BENCHMARK(BM_score_candidates);

}  // namespace

BENCHMARK_MAIN();
