#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "crossrec/error.hpp"
#include "crossrec/network.hpp"
#include "crossrec/rng.hpp"
#include "test_util.hpp"

using namespace crossrec;

namespace {

NetworkConfig tiny_config(Mode mode, int feature_dim = 3) {
    NetworkConfig cfg;
    cfg.mode = mode;
    cfg.embed_dim = 2;
    cfg.feature_dim = mode_uses_features(mode) ? feature_dim : 0;
    cfg.hidden_sizes = mode == Mode::CSN_SCALAR ? std::vector<int>{4, 4}
                                                : std::vector<int>{4, 3};
    return cfg;
}

FeatureMatrix random_features(int items, int dim, std::uint64_t seed) {
    FeatureMatrix fm;
    fm.dim = dim;
    fm.rows.resize(items, dim);
    Rng rng(seed);
    for (int r = 0; r < items; ++r)
        for (int c = 0; c < dim; ++c) fm.rows(r, c) = rng.gaussian();
    return fm;
}

// Independent enumeration of every learnable tensor, walking the public
// fields directly.
std::int64_t enumerate_params(const ModelParams& p) {
    std::int64_t n = p.P.size() + p.P_src.size() + p.Q_t.size() + p.Q_s.size();
    for (const auto& w : p.W_t) n += w.size();
    for (const auto& w : p.W_s) n += w.size();
    for (const auto& b : p.b_t) n += b.size();
    for (const auto& b : p.b_s) n += b.size();
    for (const auto& h : p.H) n += h.size();
    n += p.cross_scalars.size();
    n += p.out_w_t.size() + p.out_w_s.size() + 2;
    return n;
}

}  // namespace

TEST_CASE("init_params is deterministic and N(0, 0.01)-distributed") {
    NetworkConfig cfg;  // defaults: embed 64, feature 1024, hidden 512,256,128
    cfg.hidden_sizes = {512};
    ModelParams a = init_params(cfg, 40, 50, 60, 99);
    ModelParams b = init_params(cfg, 40, 50, 60, 99);
    CHECK(a.W_t[0] == b.W_t[0]);
    CHECK(a.P == b.P);

    // First weight is 512 x 1152: large enough for tight moment bounds.
    CHECK(a.W_t[0].rows() == 512);
    CHECK(a.W_t[0].cols() == 1152);
    double mean = a.W_t[0].mean();
    double sq = (a.W_t[0].array() - mean).square().mean();
    CHECK(std::abs(mean) < 0.001);
    CHECK(std::sqrt(sq) > 0.009);
    CHECK(std::sqrt(sq) < 0.011);
}

TEST_CASE("input width follows 2*embed_dim + feature_dim") {
    NetworkConfig cfg;
    cfg.embed_dim = 64;
    cfg.feature_dim = 32;
    cfg.hidden_sizes = {512, 256, 128};
    CHECK(cfg.input_width() == 160);
    ModelParams p = init_params(cfg, 500, 1000, 1000, 1);
    CHECK(p.W_t[0].rows() == 512);
    CHECK(p.W_t[0].cols() == 160);
}

TEST_CASE("hand-built coupled forward matches the pencil-and-paper oracle") {
    NetworkConfig cfg;
    cfg.mode = Mode::CDN;
    cfg.embed_dim = 1;
    cfg.feature_dim = 0;
    cfg.hidden_sizes = {2};
    ModelParams p = init_params(cfg, 1, 1, 1, 0);
    p.P << 0.1;
    p.Q_t << 0.2;
    p.Q_s << -0.3;
    p.W_t[0] << 0.5, -0.25, 0.75, 0.5;
    p.b_t[0] << 0.05, -0.1;
    p.W_s[0] << -0.5, 0.25, 0.25, 1.0;
    p.b_s[0] << 0.2, 0.0;
    p.H[0] << 0.3, -0.2, 0.1, 0.4;
    p.out_w_t << 1.5, -2.0;
    p.out_b_t = 0.25;
    p.out_w_s << -1.0, 0.5;
    p.out_b_s = -0.15;

    FeatureMatrix none = FeatureMatrix::none(1);
    ForwardTrace tr = forward_joint(p, cfg, 0, 0, 0, none, none);

    // Unrolled arithmetic, written independently of the implementation:
    //   z_t = W_t*[0.1,0.2] + b_t + H*[0.1,-0.3] = [0.14, -0.035]
    //   z_s = W_s*[0.1,-0.3] + b_s + H*[0.1,0.2] = [0.065, -0.185]
    //   relu, heads: o_t = 1.5*0.14 + 0.25 = 0.46; o_s = -1.0*0.065 - 0.15.
    CHECK(tr.preactivations_t[0][0] == doctest::Approx(0.14).epsilon(1e-12));
    CHECK(tr.preactivations_t[0][1] == doctest::Approx(-0.035).epsilon(1e-12));
    CHECK(tr.activations_t[1][1] == 0.0);  // ReLU clips the negative entry
    CHECK(tr.output_t == doctest::Approx(0.46).epsilon(1e-12));
    CHECK(tr.output_s == doctest::Approx(-0.215).epsilon(1e-12));
    CHECK(tr.score_t == doctest::Approx(0.61301417613933551).epsilon(1e-12));
    CHECK(tr.score_s == doctest::Approx(0.44645609684888171).epsilon(1e-12));
}

TEST_CASE("scores stay strictly inside (0,1)") {
    NetworkConfig cfg = tiny_config(Mode::ACDN);
    ModelParams p = init_params(cfg, 6, 7, 8, 5);
    FeatureMatrix ft = random_features(7, 3, 1), fs = random_features(8, 3, 2);
    for (int k = 0; k < 20; ++k) {
        ForwardTrace tr = forward_joint(p, cfg, k % 6, k % 7, k % 8, ft, fs);
        CHECK(tr.score_t > 0.0);
        CHECK(tr.score_t < 1.0);
        CHECK(tr.score_s > 0.0);
        CHECK(tr.score_s < 1.0);
    }
}

TEST_CASE("ACDN with zeroed cross matrices reduces to MLPPP exactly") {
    // Compare at feature_dim 0 so the towers share identical widths.
    NetworkConfig acdn0 = tiny_config(Mode::ACDN, 3);
    acdn0.feature_dim = 0;
    ModelParams pa0 = init_params(acdn0, 9, 11, 13, 77);
    for (auto& h : pa0.H) h.setZero();
    NetworkConfig mlppp0 = tiny_config(Mode::MLPPP);
    ModelParams copy = init_params(mlppp0, 9, 11, 13, 1);
    copy.P = pa0.P;
    copy.Q_t = pa0.Q_t;
    copy.Q_s = pa0.Q_s;
    copy.W_t = pa0.W_t;
    copy.W_s = pa0.W_s;
    copy.b_t = pa0.b_t;
    copy.b_s = pa0.b_s;
    copy.out_w_t = pa0.out_w_t;
    copy.out_w_s = pa0.out_w_s;
    copy.out_b_t = pa0.out_b_t;
    copy.out_b_s = pa0.out_b_s;

    FeatureMatrix none_t = FeatureMatrix::none(11), none_s = FeatureMatrix::none(13);
    Rng rng(5);
    for (int k = 0; k < 200; ++k) {
        int u = rng.uniform_index(9), i = rng.uniform_index(11), j = rng.uniform_index(13);
        ForwardTrace a = forward_joint(pa0, acdn0, u, i, j, none_t, none_s);
        ForwardTrace b = forward_joint(copy, mlppp0, u, i, j, none_t, none_s);
        CHECK(a.score_t == b.score_t);  // bit-for-bit
        CHECK(a.score_s == b.score_s);
    }
}

TEST_CASE("cross-symmetry: swapping tower roles swaps the scores") {
    // H is shared by both directions, so relabelling (target<->source)
    // while swapping the tower parameters must swap the two outputs.
    NetworkConfig cfg = tiny_config(Mode::CDN);
    ModelParams p = init_params(cfg, 5, 6, 7, 31);

    NetworkConfig swapped_cfg = cfg;
    ModelParams s = p;
    std::swap(s.Q_t, s.Q_s);
    std::swap(s.W_t, s.W_s);
    std::swap(s.b_t, s.b_s);
    std::swap(s.out_w_t, s.out_w_s);
    std::swap(s.out_b_t, s.out_b_s);

    FeatureMatrix none6 = FeatureMatrix::none(6), none7 = FeatureMatrix::none(7);
    Rng rng(8);
    for (int k = 0; k < 50; ++k) {
        int u = rng.uniform_index(5), i = rng.uniform_index(6), j = rng.uniform_index(7);
        ForwardTrace orig = forward_joint(p, cfg, u, i, j, none6, none7);
        ForwardTrace swap = forward_joint(s, swapped_cfg, u, j, i, none7, none6);
        CHECK(swap.score_t == orig.score_s);
        CHECK(swap.score_s == orig.score_t);
    }
}

TEST_CASE("candidate scoring ranks by score with index tie-breaks") {
    NetworkConfig cfg = tiny_config(Mode::MLPPP);
    ModelParams p = init_params(cfg, 4, 120, 5, 3);
    FeatureMatrix none_t = FeatureMatrix::none(120), none_s = FeatureMatrix::none(5);

    std::vector<int> candidates(100);
    std::iota(candidates.begin(), candidates.end(), 5);
    auto scored = score_target_candidates(p, cfg, 1, candidates, 2, none_t, none_s);

    CHECK(scored.size() == 100);
    std::vector<int> ranks;
    for (const auto& s : scored) ranks.push_back(s.rank);
    std::vector<int> expected(100);
    std::iota(expected.begin(), expected.end(), 1);
    CHECK(ranks == expected);  // exactly the permutation 1..100

    // Brute force: rescore one by one and sort the same way.
    std::vector<std::pair<double, int>> brute;
    for (int item : candidates) {
        ForwardTrace tr = forward_joint(p, cfg, 1, item, 2, none_t, none_s);
        brute.push_back({-tr.score_t, item});
    }
    std::sort(brute.begin(), brute.end());
    for (std::size_t k = 0; k < brute.size(); ++k) CHECK(scored[k].item == brute[k].second);

    // Constant scorer: zero the item-dependent paths; order falls back to
    // ascending item index.
    ModelParams flat = p;
    flat.Q_t.setZero();
    auto tied = score_target_candidates(flat, cfg, 1, {42, 7, 9}, 2, none_t, none_s);
    CHECK(tied[0].item == 7);
    CHECK(tied[1].item == 9);
    CHECK(tied[2].item == 42);
    CHECK(tied[0].rank == 1);
}

TEST_CASE("adding a constant to the output head preserves the ordering") {
    NetworkConfig cfg = tiny_config(Mode::ACDN);
    ModelParams p = init_params(cfg, 4, 60, 5, 13);
    FeatureMatrix ft = random_features(60, 3, 4), fs = random_features(5, 3, 5);
    std::vector<int> candidates(60);
    std::iota(candidates.begin(), candidates.end(), 0);

    auto before = score_target_candidates(p, cfg, 0, candidates, 1, ft, fs);
    ModelParams shifted = p;
    shifted.out_b_t += 2.5;  // strictly increasing transform of every score
    auto after = score_target_candidates(shifted, cfg, 0, candidates, 1, ft, fs);
    for (std::size_t k = 0; k < before.size(); ++k) {
        CHECK(before[k].item == after[k].item);
        CHECK(before[k].rank == after[k].rank);
    }
}

TEST_CASE("param_count matches exhaustive enumeration on random configs") {
    Rng rng(2024);
    const Mode modes[] = {Mode::ACDN, Mode::ACDN_NO_L1, Mode::CDN, Mode::MLP,
                          Mode::MLPPP};
    for (int trial = 0; trial < 5; ++trial) {
        NetworkConfig cfg;
        cfg.mode = modes[trial % 5];
        cfg.embed_dim = 1 + rng.uniform_index(6);
        cfg.feature_dim = mode_uses_features(cfg.mode) ? rng.uniform_index(9) : 0;
        cfg.hidden_sizes = {2 + rng.uniform_index(6), 1 + rng.uniform_index(5)};
        cfg.cross_input_transition = trial % 2 == 0;
        int m = 3 + rng.uniform_index(20);
        int n_t = 3 + rng.uniform_index(20);
        int n_s = 3 + rng.uniform_index(20);
        ModelParams p = init_params(cfg, m, n_t, n_s, 1000 + trial);
        CHECK(param_count(cfg, m, n_t, n_s) == enumerate_params(p));
    }
    // CSN_SCALAR with its width constraint.
    NetworkConfig csn;
    csn.mode = Mode::CSN_SCALAR;
    csn.embed_dim = 3;
    csn.feature_dim = 0;
    csn.hidden_sizes = {6, 6};
    ModelParams p = init_params(csn, 10, 11, 12, 5);
    CHECK(param_count(csn, 10, 11, 12) == enumerate_params(p));
}

TEST_CASE("param_count is affine in feature_dim with slope 3*hidden[0]") {
    NetworkConfig cfg;
    cfg.mode = Mode::ACDN;
    cfg.embed_dim = 16;
    cfg.hidden_sizes = {64, 32};
    const int m = 100, n_t = 200, n_s = 300;
    cfg.feature_dim = 10;
    std::int64_t at10 = param_count(cfg, m, n_t, n_s);
    cfg.feature_dim = 11;
    std::int64_t at11 = param_count(cfg, m, n_t, n_s);
    cfg.feature_dim = 30;
    std::int64_t at30 = param_count(cfg, m, n_t, n_s);
    CHECK(at11 - at10 == 3 * 64);  // both towers' first layer plus H^0
    CHECK(at30 - at10 == 20 * 3 * 64);

    // Doubling feature_dim only touches the first-transition tensors.
    cfg.feature_dim = 20;
    CHECK(param_count(cfg, m, n_t, n_s) - at10 == 10 * 3 * 64);
}

TEST_CASE("param_count is affine in each vocabulary count") {
    NetworkConfig cfg;
    cfg.mode = Mode::ACDN;
    cfg.embed_dim = 8;
    cfg.feature_dim = 4;
    cfg.hidden_sizes = {16, 8};
    auto f = [&cfg](int m, int n_t, int n_s) { return param_count(cfg, m, n_t, n_s); };
    CHECK(f(20, 10, 10) - f(10, 10, 10) == 10 * 8);      // slope d in m
    CHECK(f(10, 25, 10) - f(10, 10, 10) == 15 * 8);      // slope d in n_T
    CHECK(f(10, 10, 40) - f(10, 10, 10) == 30 * 8);      // slope d in n_S
    CHECK(f(30, 10, 10) - f(20, 10, 10) == f(20, 10, 10) - f(10, 10, 10));
}

TEST_CASE("mode parameter sets: cross tensors and untied embeddings") {
    const int m = 10, n_t = 12, n_s = 14;
    NetworkConfig acdn = tiny_config(Mode::ACDN, 0);
    acdn.feature_dim = 0;
    NetworkConfig mlp = tiny_config(Mode::MLP);
    NetworkConfig mlppp = tiny_config(Mode::MLPPP);
    NetworkConfig csn = tiny_config(Mode::CSN_SCALAR);

    ModelParams pa = init_params(acdn, m, n_t, n_s, 1);
    ModelParams pm = init_params(mlp, m, n_t, n_s, 1);
    ModelParams pp = init_params(mlppp, m, n_t, n_s, 1);
    ModelParams pc = init_params(csn, m, n_t, n_s, 1);

    CHECK(pa.H.size() == 2);
    CHECK(pa.P_src.size() == 0);
    CHECK(pm.H.empty());
    CHECK(pm.P_src.rows() == m);  // untied user embedding
    CHECK(pp.H.empty());
    CHECK(pp.P_src.size() == 0);
    CHECK(pc.H.empty());
    CHECK(pc.cross_scalars.size() == 2);

    // MLP differs from the coupled count by the cross matrices minus the
    // extra user table.
    std::int64_t h_total = 0;
    for (const auto& h : pa.H) h_total += h.size();
    CHECK(param_count(acdn, m, n_t, n_s) - param_count(mlp, m, n_t, n_s) ==
          h_total - static_cast<std::int64_t>(m) * acdn.embed_dim);
    // MLPPP is the coupled model without its cross matrices.
    CHECK(param_count(acdn, m, n_t, n_s) - param_count(mlppp, m, n_t, n_s) == h_total);
}

TEST_CASE("CSN_SCALAR width constraints are enforced") {
    NetworkConfig cfg;
    cfg.mode = Mode::CSN_SCALAR;
    cfg.embed_dim = 3;
    cfg.feature_dim = 0;
    cfg.hidden_sizes = {6, 5};
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg.hidden_sizes = {5, 5};  // != input width 6
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg.hidden_sizes = {6, 6};
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("feature-bearing modes reject feature_dim 0 mismatches") {
    NetworkConfig cfg = tiny_config(Mode::CDN);
    cfg.feature_dim = 8;
    CHECK_THROWS_AS(cfg.validate(), Error);
    CHECK(cfg.normalized().feature_dim == 0);
    CHECK_NOTHROW(cfg.normalized().validate());
}

TEST_CASE("forward_joint validates indices") {
    NetworkConfig cfg = tiny_config(Mode::MLPPP);
    ModelParams p = init_params(cfg, 3, 4, 5, 2);
    FeatureMatrix ft = FeatureMatrix::none(4), fs = FeatureMatrix::none(5);
    CHECK_THROWS_AS(forward_joint(p, cfg, 3, 0, 0, ft, fs), Error);
    CHECK_THROWS_AS(forward_joint(p, cfg, 0, 4, 0, ft, fs), Error);
    CHECK_THROWS_AS(forward_joint(p, cfg, 0, 0, 5, ft, fs), Error);
    try {
        forward_joint(p, cfg, 0, 0, 9, ft, fs);
    } catch (const Error& e) {
        CHECK(e.name() == "IndexOutOfRange");
    }
}

TEST_CASE("zero source context removes all source influence") {
    NetworkConfig cfg = tiny_config(Mode::ACDN);
    ModelParams p = init_params(cfg, 5, 6, 7, 55);
    FeatureMatrix ft = random_features(6, 3, 6), fs = random_features(7, 3, 7);
    ForwardTrace a = forward_joint(p, cfg, 1, 2, 3, ft, fs, true);
    ForwardTrace b = forward_joint(p, cfg, 1, 2, 6, ft, fs, true);
    CHECK(a.score_t == b.score_t);  // source item cannot matter
    for (const auto& act : a.activations_s) CHECK(act.isZero(0.0));
}

TEST_CASE("checkpoints restore scoring bit-exactly") {
    TempDir tmp("ckpt");
    NetworkConfig cfg = tiny_config(Mode::ACDN);
    cfg.lambda = 0.25;
    Checkpoint ckpt;
    ckpt.config = cfg;
    ckpt.num_users = 6;
    ckpt.num_target_items = 7;
    ckpt.num_source_items = 8;
    ckpt.params = init_params(cfg, 6, 7, 8, 1234);
    save_checkpoint(ckpt, tmp.file("model.txt"));

    Checkpoint loaded = load_checkpoint(tmp.file("model.txt"));
    CHECK(loaded.config.lambda == cfg.lambda);
    CHECK(loaded.config.hidden_sizes == cfg.hidden_sizes);
    CHECK(loaded.params.P == ckpt.params.P);
    CHECK(loaded.params.H[0] == ckpt.params.H[0]);

    FeatureMatrix ft = random_features(7, 3, 8), fs = random_features(8, 3, 9);
    ForwardTrace a = forward_joint(ckpt.params, cfg, 2, 3, 4, ft, fs);
    ForwardTrace b = forward_joint(loaded.params, loaded.config, 2, 3, 4, ft, fs);
    CHECK(a.score_t == b.score_t);
    CHECK(a.score_s == b.score_s);

    save_checkpoint(loaded, tmp.file("again.txt"));
    CHECK(slurp(tmp.file("model.txt")) == slurp(tmp.file("again.txt")));
}
