#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "crossrec/corpus.hpp"
#include "crossrec/features.hpp"
#include "crossrec/network.hpp"

namespace crossrec {

// Gradients are a shape-mirror of the parameters; reusing the container keeps
// the tensor enumeration order identical on both sides.
using GradientSet = ModelParams;

enum class Optimizer { adam, sgd };

struct TrainConfig {
    NetworkConfig network;  // carries mode and lambda
    double learning_rate = 0.001;
    int batch_size = 128;
    int neg_ratio = 1;
    int epochs = 30;
    Optimizer optimizer = Optimizer::adam;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 1;

    void validate() const;  // throws ConfigInvalid
};

// Scores are clamped to [1e-12, 1 - 1e-12] before the logarithms.
inline constexpr double kScoreClamp = 1e-12;

double binary_cross_entropy(double score, int label);

// lambda * sum over cross matrices of |h|; 0 when the mode has no cross
// matrices.  ACDN_NO_L1 keeps its matrices but trains with the penalty off
// (see effective_lambda).
double l1_penalty(const ModelParams& params, double lambda);

inline double effective_lambda(const NetworkConfig& cfg) {
    return mode_l1_active(cfg.mode) ? cfg.lambda : 0.0;
}

// Mean over elements of [BCE(target) + BCE(source)] plus the l1 penalty at
// the mode's effective lambda.  This is the optimized objective.
double joint_batch_loss(const TrainingBatch& batch, const ModelParams& params,
                        const NetworkConfig& cfg,
                        const FeatureMatrix& target_features,
                        const FeatureMatrix& source_features);

// Exact reverse-mode gradient of joint_batch_loss for every parameter,
// including both cross-transfer directions through each H^l.  The l1 term
// contributes lambda*sign(h) with sign(0) = 0; the ReLU derivative at 0 is 0.
GradientSet backward(const TrainingBatch& batch, const ModelParams& params,
                     const NetworkConfig& cfg,
                     const FeatureMatrix& target_features,
                     const FeatureMatrix& source_features);

struct AdamState {
    ModelParams m, v;  // first/second moment accumulators, zero-initialized
    long step = 0;
};

AdamState make_adam_state(const ModelParams& params);

// Standard bias-corrected Adam update; deterministic for identical inputs.
// Throws ShapeMismatch when state or gradient shapes disagree with params.
void adam_step(ModelParams& params, const GradientSet& grads, AdamState& state,
               double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);
void sgd_step(ModelParams& params, const GradientSet& grads, double lr);

struct TrainHistory {
    struct EpochRow {
        int epoch;        // 1-based
        double loss;      // mean over the epoch's batches of joint_batch_loss
        double l1;        // penalty value at end of epoch
        double val_hr10;  // HR@10 of the held-out validation items
        double seconds;   // wall clock; zeroed in the emitted CSV (reference
                          // mode keeps output files byte-reproducible)
    };
    std::vector<EpochRow> rows;
};

// CSV: `epoch,loss,l1,val_hr10,seconds`.
void write_history_csv(const TrainHistory& history, const std::string& path);

struct TrainResult {
    ModelParams params;
    TrainHistory history;
};

// init_params -> epochs x (sample_training_batch -> backward -> optimizer
// step) -> per-epoch validation HR@10.  Single-threaded, bit-deterministic
// for a fixed config and seed.  Substream seeds are derived from cfg.seed
// (stream 1: init, stream 2: batch sampling).
TrainResult train(const SplitCorpus& split, const FeatureMatrix& target_features,
                  const FeatureMatrix& source_features, const TrainConfig& cfg);

// HR@10 of the validation item ranked against the user's frozen negatives
// (the test item is swapped out for the validation item).
double validation_hr10(const ModelParams& params, const NetworkConfig& cfg,
                       const SplitCorpus& split,
                       const FeatureMatrix& target_features,
                       const FeatureMatrix& source_features);

struct FdCheckReport {
    double max_rel_err = 0.0;
    std::string worst_tensor;
    Eigen::Index worst_row = 0, worst_col = 0;
    int excluded = 0;  // subgradient coordinates skipped (H entry == 0, lambda > 0)
};

// Central finite differences of joint_batch_loss against backward(), per
// coordinate.  Relative error is |fd - analytic| / max(|fd|, |analytic|,
// 1e-6).  corrupt_h_delta, when nonzero, is added to one H-gradient entry
// before comparison (fault-injection hook for the checker's own tests).
FdCheckReport finite_difference_check(const ModelParams& params,
                                      const TrainingBatch& batch,
                                      const NetworkConfig& cfg,
                                      const FeatureMatrix& target_features,
                                      const FeatureMatrix& source_features,
                                      double step = 1e-5,
                                      double corrupt_h_delta = 0.0);

// Smallest |preactivation| produced by the batch; the gradcheck runner uses
// it to re-seed models that sit too close to a ReLU kink.
double min_abs_preactivation(const ModelParams& params, const TrainingBatch& batch,
                             const NetworkConfig& cfg,
                             const FeatureMatrix& target_features,
                             const FeatureMatrix& source_features);

struct GradcheckResult {
    bool pass = false;
    double max_rel_err = 0.0;
    std::string detail;  // offending coordinate on failure
};

// Runs finite_difference_check across `num_models` seeded tiny models
// (widths <= 8, modes cycled), re-seeding any draw whose preactivations come
// within 1e-3 of a ReLU kink.  Passes iff every max relative error <= 1e-4.
GradcheckResult run_gradcheck(int num_models = 20, bool inject_fault = false,
                              std::ostream* log = nullptr);

}  // namespace crossrec
