#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "crossrec/features.hpp"

namespace crossrec {

// ACDN        full model: coupled towers + aesthetic features + l1 on H
// ACDN_NO_L1  ACDN with the l1 penalty disabled (same parameters)
// CDN         coupled towers, no aesthetic features (feature_dim = 0)
// MLP         two fully independent towers (untied user embeddings); the
//             target tower is the single-domain baseline
// MLPPP       two towers sharing only the user embedding matrix
// CSN_SCALAR  coupling through one learned scalar per transition (requires
//             equal widths across every coupled transition)
enum class Mode { ACDN, ACDN_NO_L1, CDN, MLP, MLPPP, CSN_SCALAR };

const char* mode_name(Mode m);
Mode mode_from_name(const std::string& name);

inline bool mode_uses_features(Mode m) { return m == Mode::ACDN || m == Mode::ACDN_NO_L1; }
inline bool mode_has_cross_matrices(Mode m) {
    return m == Mode::ACDN || m == Mode::ACDN_NO_L1 || m == Mode::CDN;
}
inline bool mode_has_cross_scalars(Mode m) { return m == Mode::CSN_SCALAR; }
inline bool mode_l1_active(Mode m) { return m == Mode::ACDN || m == Mode::CDN; }
// MLP unties the user embedding; every other mode shares one table.
inline bool mode_shares_user_embedding(Mode m) { return m != Mode::MLP; }

struct NetworkConfig {
    int embed_dim = 64;
    int feature_dim = 1024;
    std::vector<int> hidden_sizes = {512, 256, 128};
    Mode mode = Mode::ACDN;
    double lambda = 0.0;
    // Couple the input->first-hidden transition too (sensitivity knob; the
    // output head is never coupled).
    bool cross_input_transition = true;

    int input_width() const { return 2 * embed_dim + feature_dim; }
    int num_transitions() const { return static_cast<int>(hidden_sizes.size()); }
    // Width of layer l for l in [0, num_transitions()].
    int layer_width(int l) const { return l == 0 ? input_width() : hidden_sizes[l - 1]; }
    bool transition_coupled(int l) const {
        if (!mode_has_cross_matrices(mode) && !mode_has_cross_scalars(mode)) return false;
        return l > 0 || cross_input_transition;
    }

    // Returns a copy with feature_dim forced to 0 for feature-free modes.
    NetworkConfig normalized() const;
    void validate() const;  // throws ConfigInvalid
};

// All learned tensors.  Weight matrices are (next x prev); H^l is shared by
// both transfer directions of transition l.
struct ModelParams {
    Mode mode = Mode::ACDN;
    Eigen::MatrixXd P;      // m x d, user embedding (target tower in MLP mode)
    Eigen::MatrixXd P_src;  // m x d, only in MLP mode (untied source tower)
    Eigen::MatrixXd Q_t;    // n_T x d
    Eigen::MatrixXd Q_s;    // n_S x d
    std::vector<Eigen::MatrixXd> W_t, W_s;
    std::vector<Eigen::VectorXd> b_t, b_s;
    std::vector<Eigen::MatrixXd> H;   // one per coupled transition (may be fewer
                                      // than transitions when the input
                                      // transition is uncoupled)
    Eigen::VectorXd cross_scalars;    // CSN_SCALAR: one per coupled transition
    Eigen::VectorXd out_w_t, out_w_s;
    double out_b_t = 0.0, out_b_s = 0.0;

    bool all_finite() const;
    // Index into H / cross_scalars for transition l, or -1 when uncoupled.
    int cross_index(int l, const NetworkConfig& cfg) const {
        return cfg.transition_coupled(l) ? (cfg.cross_input_transition ? l : l - 1) : -1;
    }
};

// Every parameter drawn i.i.d. from N(0, 0.01^2) in a fixed tensor order.
ModelParams init_params(const NetworkConfig& cfg, int num_users,
                        int num_target_items, int num_source_items,
                        std::uint64_t seed);

// Closed-form number of learnable scalars for the given mode and counts.
std::int64_t param_count(const NetworkConfig& cfg, int num_users,
                         int num_target_items, int num_source_items);

// Activations of one coupled forward pass.  activations_*[0] is the input
// concat; preactivations_*[l] feeds activations_*[l+1].
struct ForwardTrace {
    std::vector<Eigen::VectorXd> activations_t, activations_s;
    std::vector<Eigen::VectorXd> preactivations_t, preactivations_s;
    double output_t = 0.0, output_s = 0.0;  // pre-sigmoid
    double score_t = 0.5, score_s = 0.5;    // sigmoid outputs, in (0,1)
};

// Coupled forward pass for (user u, target item i, source item j):
//   alpha_t[l+1] = relu(W_t[l] alpha_t[l] + b_t[l] + H[l] alpha_s[l])
//   alpha_s[l+1] = relu(W_s[l] alpha_s[l] + b_s[l] + H[l] alpha_t[l])
// with sigmoid output heads.  In CSN_SCALAR the H term is c_l * alpha; in
// MLP/MLPPP it is absent.  zero_source_context forces every source
// activation to zero, which removes all source influence on the target
// tower.
ForwardTrace forward_joint(const ModelParams& params, const NetworkConfig& cfg,
                           int u, int i, int j,
                           const FeatureMatrix& target_features,
                           const FeatureMatrix& source_features,
                           bool zero_source_context = false);

struct ScoredCandidate {
    int item;
    double score;
    int rank;  // 1-based
};

// Scores every candidate against the same fixed source item and assigns
// 1-based ranks (descending score, ties broken by ascending item index).
// source_context == nullopt selects the zero-source-context variant.
std::vector<ScoredCandidate> score_target_candidates(
    const ModelParams& params, const NetworkConfig& cfg, int u,
    const std::vector<int>& candidates, std::optional<int> source_context,
    const FeatureMatrix& target_features, const FeatureMatrix& source_features);

// Checkpoint: text artifact with a config echo, shapes, and row-major values
// printed with %.17g, so reloading restores scoring bit-exactly on the same
// platform.
struct Checkpoint {
    NetworkConfig config;
    int num_users = 0, num_target_items = 0, num_source_items = 0;
    ModelParams params;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

namespace detail {

// Flat view of one tensor; data is column-major as stored by Eigen.
struct TensorRef {
    std::string name;
    double* data;
    Eigen::Index rows, cols;

    Eigen::Index size() const { return rows * cols; }
    double& at(Eigen::Index r, Eigen::Index c) const { return data[c * rows + r]; }
};

// Enumerates every tensor in the canonical order (also the init draw order):
// P, [P_src], Q_t, Q_s, then per transition W_t, b_t, W_s, b_s, [H | c],
// then the two output heads.
template <typename Params, typename F>
void visit_tensors(Params& p, F&& f) {
    auto mat = [&f](const std::string& name, auto& m) {
        f(TensorRef{name, const_cast<double*>(m.data()), m.rows(), m.cols()});
    };
    mat("P", p.P);
    if (p.P_src.size() > 0) mat("P_src", p.P_src);
    mat("Q_t", p.Q_t);
    mat("Q_s", p.Q_s);
    const int L = static_cast<int>(p.W_t.size());
    const int cross_offset = L - static_cast<int>(
        p.H.empty() ? p.cross_scalars.size() : p.H.size());
    for (int l = 0; l < L; ++l) {
        const std::string suffix = std::to_string(l);
        mat("W_t" + suffix, p.W_t[l]);
        mat("b_t" + suffix, p.b_t[l]);
        mat("W_s" + suffix, p.W_s[l]);
        mat("b_s" + suffix, p.b_s[l]);
        int ci = l - cross_offset;
        if (ci >= 0 && ci < static_cast<int>(p.H.size())) mat("H" + suffix, p.H[ci]);
        if (ci >= 0 && ci < static_cast<int>(p.cross_scalars.size()))
            f(TensorRef{"c" + suffix,
                        const_cast<double*>(p.cross_scalars.data()) + ci, 1, 1});
    }
    mat("out_w_t", p.out_w_t);
    f(TensorRef{"out_b_t", const_cast<double*>(&p.out_b_t), 1, 1});
    mat("out_w_s", p.out_w_s);
    f(TensorRef{"out_b_s", const_cast<double*>(&p.out_b_s), 1, 1});
}

ModelParams make_empty_params(const NetworkConfig& cfg, int num_users,
                              int num_target_items, int num_source_items);

std::vector<TensorRef> collect_tensors(const ModelParams& p);

}  // namespace detail
}  // namespace crossrec
