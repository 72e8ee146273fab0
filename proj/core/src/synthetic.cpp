#include "crossrec/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "crossrec/error.hpp"
#include "crossrec/rng.hpp"

namespace crossrec {

void SyntheticConfig::validate() const {
    auto fail = [](const std::string& msg) { throw errors::config_invalid(msg); };
    if (num_users <= 0) fail("num_users must be positive");
    if (num_items_per_domain <= 0) fail("num_items_per_domain must be positive");
    if (latent_dim <= 0) fail("latent_dim must be positive");
    if (interactions_per_user <= 0) fail("interactions_per_user must be positive");
    if (interactions_per_user > num_items_per_domain)
        fail("interactions_per_user exceeds the item catalogue");
    if (aesthetic_correlation < 0.0 || aesthetic_correlation > 1.0)
        fail("aesthetic_correlation must lie in [0,1]");
    if (feature_dim <= 0) fail("feature_dim must be positive");
    if (feature_noise_std < 0.0) fail("feature_noise_std must be nonnegative");
}

std::uint64_t SyntheticTruth::fingerprint() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    auto fold = [&h](const Eigen::MatrixXd& m) {
        h = fnv1a64(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()), h);
    };
    fold(user_aesthetic);
    for (const auto& m : user_taste) fold(m);
    for (const auto& m : item_aesthetic) fold(m);
    for (const auto& m : item_taste) fold(m);
    fold(projection);
    return h;
}

double synthetic_affinity(const SyntheticTruth& truth, double aesthetic_correlation,
                          int user, Domain d, int item) {
    int di = d == Domain::target ? 0 : 1;
    double shared = truth.user_aesthetic.row(user).dot(truth.item_aesthetic[di].row(item));
    double taste = truth.user_taste[di].row(user).dot(truth.item_taste[di].row(item));
    return aesthetic_correlation * shared + (1.0 - aesthetic_correlation) * taste;
}

namespace {

Eigen::MatrixXd draw_matrix(Rng& rng, int rows, int cols) {
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = rng.gaussian();
    return m;
}

std::string padded_id(char prefix, int k) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%c%05d", prefix, k);
    return buf;
}

}  // namespace

SyntheticData generate_synthetic_corpus(const SyntheticConfig& cfg) {
    cfg.validate();
    const int n = cfg.num_items_per_domain;

    SyntheticData data;
    SyntheticTruth& truth = data.truth;

    Rng latents(mix_seed(cfg.rng_seed, 0));
    truth.user_aesthetic = draw_matrix(latents, cfg.num_users, cfg.latent_dim);
    truth.user_taste.push_back(draw_matrix(latents, cfg.num_users, cfg.latent_dim));
    truth.user_taste.push_back(draw_matrix(latents, cfg.num_users, cfg.latent_dim));
    for (int d = 0; d < 2; ++d) {
        truth.item_aesthetic.push_back(draw_matrix(latents, n, cfg.latent_dim));
        truth.item_taste.push_back(draw_matrix(latents, n, cfg.latent_dim));
    }
    Rng projection_rng(mix_seed(cfg.rng_seed, 1));
    truth.projection = draw_matrix(projection_rng, cfg.feature_dim, cfg.latent_dim);

    InteractionCorpus& corpus = data.corpus;
    corpus.users.reserve(cfg.num_users);
    for (int u = 0; u < cfg.num_users; ++u) corpus.users.push_back(padded_id('u', u));
    for (int i = 0; i < n; ++i) corpus.target_items.push_back(padded_id('t', i));
    for (int j = 0; j < n; ++j) corpus.source_items.push_back(padded_id('s', j));
    corpus.target_by_user.resize(cfg.num_users);
    corpus.source_by_user.resize(cfg.num_users);

    std::vector<int> order(n);
    for (int u = 0; u < cfg.num_users; ++u) {
        for (int d = 0; d < 2; ++d) {
            Domain dom = d == 0 ? Domain::target : Domain::source;
            std::iota(order.begin(), order.end(), 0);
            std::vector<double> affinity(n);
            for (int i = 0; i < n; ++i)
                affinity[i] = synthetic_affinity(truth, cfg.aesthetic_correlation, u, dom, i);
            // Top-k by affinity; index order breaks exact ties deterministically.
            std::partial_sort(order.begin(), order.begin() + cfg.interactions_per_user,
                              order.end(), [&affinity](int a, int b) {
                                  if (affinity[a] != affinity[b])
                                      return affinity[a] > affinity[b];
                                  return a < b;
                              });
            auto& row = d == 0 ? corpus.target_by_user[u] : corpus.source_by_user[u];
            row.assign(order.begin(), order.begin() + cfg.interactions_per_user);
            std::sort(row.begin(), row.end());
        }
    }

    Rng noise(mix_seed(cfg.rng_seed, 2));
    for (int d = 0; d < 2; ++d) {
        FeatureStore& store = d == 0 ? data.target_features : data.source_features;
        store.dim = cfg.feature_dim;
        const auto& vocab = d == 0 ? corpus.target_items : corpus.source_items;
        for (int i = 0; i < n; ++i) {
            Eigen::VectorXd f = truth.projection * truth.item_aesthetic[d].row(i).transpose();
            for (int k = 0; k < cfg.feature_dim; ++k)
                f[k] += noise.gaussian(0.0, cfg.feature_noise_std);
            store.insert(vocab[i], f);
        }
    }
    return data;
}

}  // namespace crossrec
