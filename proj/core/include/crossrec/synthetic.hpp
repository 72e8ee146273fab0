#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "crossrec/corpus.hpp"
#include "crossrec/features.hpp"

namespace crossrec {

struct SyntheticConfig {
    int num_users = 500;
    int num_items_per_domain = 1000;
    int latent_dim = 8;
    int interactions_per_user = 20;
    double aesthetic_correlation = 0.8;  // in [0,1]
    int feature_dim = 32;
    double feature_noise_std = 0.05;
    std::uint64_t rng_seed = 1;

    void validate() const;  // throws ConfigInvalid
};

// The latent state behind a generated corpus, exposed so tests can compute
// affinities directly and so the provenance record can fingerprint the draw.
struct SyntheticTruth {
    Eigen::MatrixXd user_aesthetic;                 // num_users x latent_dim
    std::vector<Eigen::MatrixXd> user_taste;        // per domain
    std::vector<Eigen::MatrixXd> item_aesthetic;    // per domain
    std::vector<Eigen::MatrixXd> item_taste;        // per domain
    Eigen::MatrixXd projection;                     // feature_dim x latent_dim

    std::uint64_t fingerprint() const;
};

struct SyntheticData {
    InteractionCorpus corpus;
    FeatureStore target_features;
    FeatureStore source_features;
    SyntheticTruth truth;
};

// Every user u draws a shared aesthetic vector a_u and one taste vector per
// domain; items draw the same.  affinity(u,i) = c*<a_u,a_i> +
// (1-c)*<t_u,t_i> with c = aesthetic_correlation, and each user's
// interactions_per_user top-affinity items per domain become positives.
// Item features are a fixed seeded random projection of the item's aesthetic
// vector plus Gaussian noise.
SyntheticData generate_synthetic_corpus(const SyntheticConfig& cfg);

// Affinity of user u to item `item` of domain d, computed from the truth.
double synthetic_affinity(const SyntheticTruth& truth, double aesthetic_correlation,
                          int user, Domain d, int item);

}  // namespace crossrec
