#include "crossrec/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>

#include "crossrec/error.hpp"
#include "crossrec/rng.hpp"

namespace crossrec {

void TrainConfig::validate() const {
    network.validate();
    auto fail = [](const std::string& msg) { throw errors::config_invalid(msg); };
    if (learning_rate <= 0.0) fail("learning_rate must be positive");
    if (batch_size < 2) fail("batch_size must be >= 2");
    if (neg_ratio < 1) fail("neg_ratio must be >= 1");
    if (epochs < 0) fail("epochs must be nonnegative");
}

double binary_cross_entropy(double score, int label) {
    double s = std::clamp(score, kScoreClamp, 1.0 - kScoreClamp);
    return label ? -std::log(s) : -std::log(1.0 - s);
}

double l1_penalty(const ModelParams& params, double lambda) {
    if (params.H.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& h : params.H) sum += h.cwiseAbs().sum();
    return lambda * sum;
}

namespace {

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

// d(BCE(clamp(sigmoid(o)), y))/do.  Inside the clamp band this is the usual
// score - label; a clamped score makes the loss locally constant.
double bce_doutput(double score, int label) {
    if (score < kScoreClamp || score > 1.0 - kScoreClamp) return 0.0;
    return score - label;
}

// Activations of a whole element list, one column per element.
struct BatchTrace {
    std::vector<Eigen::MatrixXd> A_t, A_s;  // [L+1] layers of (width x B)
    std::vector<Eigen::MatrixXd> Z_t, Z_s;  // [L] preactivations
    Eigen::VectorXd output_t, output_s;     // pre-sigmoid, per element
    Eigen::VectorXd score_t, score_s;
};

BatchTrace forward_batch(const TrainingBatch& batch, const ModelParams& params,
                         const NetworkConfig& cfg,
                         const FeatureMatrix& target_features,
                         const FeatureMatrix& source_features) {
    const int B = static_cast<int>(batch.size());
    const int d = cfg.embed_dim;
    const int f = cfg.feature_dim;
    const int L = cfg.num_transitions();
    if (f > 0 && (target_features.dim != f || source_features.dim != f))
        throw errors::shape_mismatch("feature store dim does not match network feature_dim");

    BatchTrace tr;
    tr.A_t.resize(L + 1);
    tr.A_s.resize(L + 1);
    tr.Z_t.resize(L);
    tr.Z_s.resize(L);

    Eigen::MatrixXd X_t(cfg.input_width(), B), X_s(cfg.input_width(), B);
    const Eigen::MatrixXd& src_users =
        mode_shares_user_embedding(cfg.mode) ? params.P : params.P_src;
    for (int e = 0; e < B; ++e) {
        const auto& el = batch.elements[e];
        X_t.col(e).segment(0, d) = params.P.row(el.user);
        X_t.col(e).segment(d, d) = params.Q_t.row(el.target_item);
        X_s.col(e).segment(0, d) = src_users.row(el.user);
        X_s.col(e).segment(d, d) = params.Q_s.row(el.source_item);
        if (f > 0) {
            X_t.col(e).segment(2 * d, f) = target_features.rows.row(el.target_item);
            X_s.col(e).segment(2 * d, f) = source_features.rows.row(el.source_item);
        }
    }
    tr.A_t[0] = std::move(X_t);
    tr.A_s[0] = std::move(X_s);

    for (int l = 0; l < L; ++l) {
        Eigen::MatrixXd z_t = params.W_t[l] * tr.A_t[l];
        Eigen::MatrixXd z_s = params.W_s[l] * tr.A_s[l];
        z_t.colwise() += params.b_t[l];
        z_s.colwise() += params.b_s[l];
        int ci = params.cross_index(l, cfg);
        if (ci >= 0) {
            if (mode_has_cross_matrices(cfg.mode)) {
                z_t.noalias() += params.H[ci] * tr.A_s[l];
                z_s.noalias() += params.H[ci] * tr.A_t[l];
            } else {
                z_t += params.cross_scalars[ci] * tr.A_s[l];
                z_s += params.cross_scalars[ci] * tr.A_t[l];
            }
        }
        tr.A_t[l + 1] = z_t.cwiseMax(0.0);
        tr.A_s[l + 1] = z_s.cwiseMax(0.0);
        tr.Z_t[l] = std::move(z_t);
        tr.Z_s[l] = std::move(z_s);
    }

    tr.output_t = ((tr.A_t[L].transpose() * params.out_w_t).array() + params.out_b_t).matrix();
    tr.output_s = ((tr.A_s[L].transpose() * params.out_w_s).array() + params.out_b_s).matrix();
    tr.score_t = tr.output_t.unaryExpr([](double x) { return sigmoid(x); });
    tr.score_s = tr.output_s.unaryExpr([](double x) { return sigmoid(x); });
    return tr;
}

double batch_data_loss(const TrainingBatch& batch, const BatchTrace& tr) {
    double sum = 0.0;
    for (std::size_t e = 0; e < batch.size(); ++e) {
        sum += binary_cross_entropy(tr.score_t[e], batch.elements[e].target_label);
        sum += binary_cross_entropy(tr.score_s[e], batch.elements[e].source_label);
    }
    return sum / static_cast<double>(batch.size());
}

}  // namespace

double joint_batch_loss(const TrainingBatch& batch, const ModelParams& params,
                        const NetworkConfig& cfg,
                        const FeatureMatrix& target_features,
                        const FeatureMatrix& source_features) {
    if (batch.empty()) throw errors::empty_batch("joint_batch_loss on empty batch");
    BatchTrace tr = forward_batch(batch, params, cfg, target_features, source_features);
    return batch_data_loss(batch, tr) + l1_penalty(params, effective_lambda(cfg));
}

GradientSet backward(const TrainingBatch& batch, const ModelParams& params,
                     const NetworkConfig& cfg,
                     const FeatureMatrix& target_features,
                     const FeatureMatrix& source_features) {
    if (batch.empty()) throw errors::empty_batch("backward on empty batch");
    const int B = static_cast<int>(batch.size());
    const int d = cfg.embed_dim;
    const int L = cfg.num_transitions();
    const double inv_b = 1.0 / static_cast<double>(B);

    BatchTrace tr = forward_batch(batch, params, cfg, target_features, source_features);
    GradientSet g = detail::make_empty_params(
        cfg, static_cast<int>(params.P.rows()), static_cast<int>(params.Q_t.rows()),
        static_cast<int>(params.Q_s.rows()));

    Eigen::VectorXd g_out_t(B), g_out_s(B);
    for (int e = 0; e < B; ++e) {
        g_out_t[e] = bce_doutput(tr.score_t[e], batch.elements[e].target_label) * inv_b;
        g_out_s[e] = bce_doutput(tr.score_s[e], batch.elements[e].source_label) * inv_b;
    }

    g.out_w_t = tr.A_t[L] * g_out_t;
    g.out_w_s = tr.A_s[L] * g_out_s;
    g.out_b_t = g_out_t.sum();
    g.out_b_s = g_out_s.sum();

    // dLoss/dA for the current layer, one column per element.
    Eigen::MatrixXd delta_t = params.out_w_t * g_out_t.transpose();
    Eigen::MatrixXd delta_s = params.out_w_s * g_out_s.transpose();

    for (int l = L - 1; l >= 0; --l) {
        // ReLU gate: derivative is 0 at exactly 0.
        Eigen::MatrixXd gamma_t =
            (tr.Z_t[l].array() > 0.0).select(delta_t, 0.0);
        Eigen::MatrixXd gamma_s =
            (tr.Z_s[l].array() > 0.0).select(delta_s, 0.0);

        g.W_t[l].noalias() = gamma_t * tr.A_t[l].transpose();
        g.W_s[l].noalias() = gamma_s * tr.A_s[l].transpose();
        g.b_t[l] = gamma_t.rowwise().sum();
        g.b_s[l] = gamma_s.rowwise().sum();

        int ci = params.cross_index(l, cfg);
        if (ci >= 0) {
            if (mode_has_cross_matrices(cfg.mode)) {
                // H^l feeds both towers, so it collects both flows.
                g.H[ci].noalias() = gamma_t * tr.A_s[l].transpose();
                g.H[ci].noalias() += gamma_s * tr.A_t[l].transpose();
            } else {
                g.cross_scalars[ci] = (gamma_t.array() * tr.A_s[l].array()).sum() +
                                      (gamma_s.array() * tr.A_t[l].array()).sum();
            }
        }

        delta_t = params.W_t[l].transpose() * gamma_t;
        delta_s = params.W_s[l].transpose() * gamma_s;
        if (ci >= 0) {
            if (mode_has_cross_matrices(cfg.mode)) {
                delta_t.noalias() += params.H[ci].transpose() * gamma_s;
                delta_s.noalias() += params.H[ci].transpose() * gamma_t;
            } else {
                delta_t += params.cross_scalars[ci] * gamma_s;
                delta_s += params.cross_scalars[ci] * gamma_t;
            }
        }
    }

    // Split the input-layer deltas into embedding rows; feature segments have
    // no learnable parameters.
    const bool shared_users = mode_shares_user_embedding(cfg.mode);
    for (int e = 0; e < B; ++e) {
        const auto& el = batch.elements[e];
        g.P.row(el.user) += delta_t.col(e).segment(0, d).transpose();
        if (shared_users)
            g.P.row(el.user) += delta_s.col(e).segment(0, d).transpose();
        else
            g.P_src.row(el.user) += delta_s.col(e).segment(0, d).transpose();
        g.Q_t.row(el.target_item) += delta_t.col(e).segment(d, d).transpose();
        g.Q_s.row(el.source_item) += delta_s.col(e).segment(d, d).transpose();
    }

    const double lambda = effective_lambda(cfg);
    if (lambda > 0.0) {
        for (std::size_t k = 0; k < g.H.size(); ++k) {
            g.H[k] += lambda * params.H[k].unaryExpr([](double h) {
                return h > 0.0 ? 1.0 : (h < 0.0 ? -1.0 : 0.0);
            });
        }
    }
    return g;
}

AdamState make_adam_state(const ModelParams& params) {
    AdamState state;
    auto zero_mirror = [&params]() {
        ModelParams z = params;
        detail::visit_tensors(z, [](const detail::TensorRef& t) {
            std::fill(t.data, t.data + t.size(), 0.0);
        });
        return z;
    };
    state.m = zero_mirror();
    state.v = zero_mirror();
    return state;
}

namespace {

void check_same_shapes(const ModelParams& a, const ModelParams& b, const char* what) {
    auto ta = detail::collect_tensors(a);
    auto tb = detail::collect_tensors(b);
    if (ta.size() != tb.size())
        throw errors::shape_mismatch(std::string(what) + ": tensor count differs");
    for (std::size_t k = 0; k < ta.size(); ++k) {
        if (ta[k].rows != tb[k].rows || ta[k].cols != tb[k].cols ||
            ta[k].name != tb[k].name)
            throw errors::shape_mismatch(std::string(what) + ": tensor " +
                                         ta[k].name + " shape differs");
    }
}

}  // namespace

void adam_step(ModelParams& params, const GradientSet& grads, AdamState& state,
               double lr, double beta1, double beta2, double eps) {
    check_same_shapes(params, grads, "adam_step");
    check_same_shapes(params, state.m, "adam_step state");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));

    auto tp = detail::collect_tensors(params);
    auto tg = detail::collect_tensors(grads);
    auto tm = detail::collect_tensors(state.m);
    auto tv = detail::collect_tensors(state.v);
    for (std::size_t k = 0; k < tp.size(); ++k) {
        double* p = tp[k].data;
        const double* gd = tg[k].data;
        double* m = tm[k].data;
        double* v = tv[k].data;
        const Eigen::Index n = tp[k].size();
        for (Eigen::Index i = 0; i < n; ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * gd[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * gd[i] * gd[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

void sgd_step(ModelParams& params, const GradientSet& grads, double lr) {
    check_same_shapes(params, grads, "sgd_step");
    auto tp = detail::collect_tensors(params);
    auto tg = detail::collect_tensors(grads);
    for (std::size_t k = 0; k < tp.size(); ++k) {
        const Eigen::Index n = tp[k].size();
        for (Eigen::Index i = 0; i < n; ++i) tp[k].data[i] -= lr * tg[k].data[i];
    }
}

void write_history_csv(const TrainHistory& history, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw errors::io_failure("cannot write " + path);
    out << "epoch,loss,l1,val_hr10,seconds\n";
    char buf[40];
    for (const auto& row : history.rows) {
        out << row.epoch << ',';
        std::snprintf(buf, sizeof buf, "%.17g", row.loss);
        out << buf << ',';
        std::snprintf(buf, sizeof buf, "%.17g", row.l1);
        out << buf << ',';
        std::snprintf(buf, sizeof buf, "%.17g", row.val_hr10);
        out << buf << ",0.000\n";  // wall clock stays out of reproducible output
    }
    if (!out) throw errors::io_failure("write failed for " + path);
}

namespace {

int rank_in_scores(const std::vector<double>& scores, const std::vector<int>& items,
                   int wanted) {
    // Rank = 1 + number of candidates strictly better, where "better" is
    // higher score, or equal score with a lower item index.
    std::size_t idx = 0;
    for (std::size_t k = 0; k < items.size(); ++k)
        if (items[k] == wanted) idx = k;
    int rank = 1;
    for (std::size_t k = 0; k < items.size(); ++k) {
        if (k == idx) continue;
        if (scores[k] > scores[idx] ||
            (scores[k] == scores[idx] && items[k] < items[idx]))
            ++rank;
    }
    return rank;
}

}  // namespace

double validation_hr10(const ModelParams& params, const NetworkConfig& cfg,
                       const SplitCorpus& split,
                       const FeatureMatrix& target_features,
                       const FeatureMatrix& source_features) {
    const InteractionCorpus& c = *split.corpus;
    int hits = 0;
    for (int u = 0; u < c.num_users(); ++u) {
        std::vector<int> candidates = split.eval_candidates[u];
        // Same frozen negatives as the test protocol, relevant item swapped.
        for (int& item : candidates)
            if (item == split.test_item[u]) item = split.validation_item[u];

        TrainingBatch probe;
        probe.elements.reserve(candidates.size());
        for (int item : candidates)
            probe.elements.push_back({u, item, 0, split.source_context[u], 0});
        BatchTrace tr = forward_batch(probe, params, cfg, target_features,
                                      source_features);
        std::vector<double> scores(tr.score_t.data(),
                                   tr.score_t.data() + tr.score_t.size());
        if (rank_in_scores(scores, candidates, split.validation_item[u]) <= 10)
            ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(c.num_users());
}

TrainResult train(const SplitCorpus& split, const FeatureMatrix& target_features,
                  const FeatureMatrix& source_features, const TrainConfig& cfg) {
    cfg.validate();
    const InteractionCorpus& corpus = *split.corpus;
    const NetworkConfig& net = cfg.network;

    TrainResult result;
    result.params = init_params(net, corpus.num_users(), corpus.num_target_items(),
                                corpus.num_source_items(), mix_seed(cfg.seed, 1));
    if (cfg.epochs == 0) return result;

    TrainingSampler sampler(split, mix_seed(cfg.seed, 2), cfg.neg_ratio);
    const std::size_t per_epoch = sampler.elements_per_epoch();
    const int batches_per_epoch = static_cast<int>(
        (per_epoch + cfg.batch_size - 1) / static_cast<std::size_t>(cfg.batch_size));

    AdamState adam = make_adam_state(result.params);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        double loss_sum = 0.0;
        for (int b = 0; b < batches_per_epoch; ++b) {
            TrainingBatch batch = sampler.next_batch(cfg.batch_size);
            BatchTrace tr = forward_batch(batch, result.params, net,
                                          target_features, source_features);
            loss_sum += batch_data_loss(batch, tr) +
                        l1_penalty(result.params, effective_lambda(net));
            GradientSet grads = backward(batch, result.params, net,
                                         target_features, source_features);
            if (!grads.all_finite())
                throw errors::non_finite_gradient("epoch " + std::to_string(epoch) +
                                                  " batch " + std::to_string(b + 1));
            if (cfg.optimizer == Optimizer::adam)
                adam_step(result.params, grads, adam, cfg.learning_rate,
                          cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
            else
                sgd_step(result.params, grads, cfg.learning_rate);
        }
        double val = validation_hr10(result.params, net, split, target_features,
                                     source_features);
        auto t1 = std::chrono::steady_clock::now();
        TrainHistory::EpochRow row;
        row.epoch = epoch;
        row.loss = loss_sum / batches_per_epoch;
        row.l1 = l1_penalty(result.params, effective_lambda(net));
        row.val_hr10 = val;
        row.seconds = std::chrono::duration<double>(t1 - t0).count();
        result.history.rows.push_back(row);
    }
    return result;
}

double min_abs_preactivation(const ModelParams& params, const TrainingBatch& batch,
                             const NetworkConfig& cfg,
                             const FeatureMatrix& target_features,
                             const FeatureMatrix& source_features) {
    BatchTrace tr = forward_batch(batch, params, cfg, target_features, source_features);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& z : tr.Z_t) best = std::min(best, z.cwiseAbs().minCoeff());
    for (const auto& z : tr.Z_s) best = std::min(best, z.cwiseAbs().minCoeff());
    return best;
}

FdCheckReport finite_difference_check(const ModelParams& params,
                                      const TrainingBatch& batch,
                                      const NetworkConfig& cfg,
                                      const FeatureMatrix& target_features,
                                      const FeatureMatrix& source_features,
                                      double step, double corrupt_h_delta) {
    ModelParams work = params;
    GradientSet analytic = backward(batch, work, cfg, target_features, source_features);
    if (corrupt_h_delta != 0.0 && !analytic.H.empty())
        analytic.H[0](0, 0) += corrupt_h_delta;

    const double lambda = effective_lambda(cfg);
    FdCheckReport report;
    auto tensors = detail::collect_tensors(work);
    auto grads = detail::collect_tensors(analytic);
    for (std::size_t k = 0; k < tensors.size(); ++k) {
        const bool is_cross = tensors[k].name.rfind("H", 0) == 0;
        for (Eigen::Index r = 0; r < tensors[k].rows; ++r) {
            for (Eigen::Index c = 0; c < tensors[k].cols; ++c) {
                double& coord = tensors[k].at(r, c);
                if (is_cross && lambda > 0.0 && coord == 0.0) {
                    ++report.excluded;  // |h| has no derivative at 0
                    continue;
                }
                const double saved = coord;
                coord = saved + step;
                double up = joint_batch_loss(batch, work, cfg, target_features,
                                             source_features);
                coord = saved - step;
                double down = joint_batch_loss(batch, work, cfg, target_features,
                                               source_features);
                coord = saved;
                const double fd = (up - down) / (2.0 * step);
                const double an = grads[k].at(r, c);
                const double rel =
                    std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
                if (rel > report.max_rel_err) {
                    report.max_rel_err = rel;
                    report.worst_tensor = tensors[k].name;
                    report.worst_row = r;
                    report.worst_col = c;
                }
            }
        }
    }
    return report;
}

GradcheckResult run_gradcheck(int num_models, bool inject_fault, std::ostream* log) {
    const Mode cycle[] = {Mode::ACDN, Mode::CDN, Mode::MLPPP, Mode::MLP,
                          Mode::CSN_SCALAR};
    GradcheckResult result;
    result.pass = true;

    for (int k = 0; k < num_models; ++k) {
        NetworkConfig cfg;
        cfg.mode = cycle[k % 5];
        cfg.embed_dim = 2;
        cfg.feature_dim = mode_uses_features(cfg.mode) ? 3 : 0;
        cfg.hidden_sizes = cfg.mode == Mode::CSN_SCALAR ? std::vector<int>{4, 4}
                                                        : std::vector<int>{4, 3};
        cfg.lambda = (k % 2 == 1) ? 0.25 : 0.0;
        const int m = 5, n_t = 6, n_s = 7;

        // Re-seed until the traces stay clear of ReLU kinks so the central
        // difference cannot straddle one.
        std::uint64_t seed = mix_seed(0xFDC0DE, static_cast<std::uint64_t>(k));
        ModelParams params;
        TrainingBatch batch;
        FeatureMatrix ft = FeatureMatrix::none(n_t), fs = FeatureMatrix::none(n_s);
        if (cfg.feature_dim > 0) {
            Rng fr(mix_seed(seed, 77));
            ft.dim = fs.dim = cfg.feature_dim;
            ft.rows.resize(n_t, cfg.feature_dim);
            fs.rows.resize(n_s, cfg.feature_dim);
            for (int r = 0; r < n_t; ++r)
                for (int c = 0; c < cfg.feature_dim; ++c) ft.rows(r, c) = fr.gaussian();
            for (int r = 0; r < n_s; ++r)
                for (int c = 0; c < cfg.feature_dim; ++c) fs.rows(r, c) = fr.gaussian();
        }
        for (int attempt = 0; attempt < 200; ++attempt) {
            std::uint64_t s = mix_seed(seed, static_cast<std::uint64_t>(attempt));
            params = init_params(cfg, m, n_t, n_s, s);
            Rng br(mix_seed(s, 3));
            batch.elements.clear();
            for (int e = 0; e < 4; ++e)
                batch.elements.push_back({br.uniform_index(m), br.uniform_index(n_t),
                                          e % 2, br.uniform_index(n_s), (e / 2) % 2});
            if (min_abs_preactivation(params, batch, cfg, ft, fs) >= 1e-3) break;
        }

        FdCheckReport rep = finite_difference_check(
            params, batch, cfg, ft, fs, 1e-5, inject_fault ? 0.1 : 0.0);
        if (log) {
            char line[160];
            std::snprintf(line, sizeof line,
                          "gradcheck model %02d mode=%-10s lambda=%.2f "
                          "max_rel_err=%.3e excluded=%d\n",
                          k + 1, mode_name(cfg.mode), cfg.lambda, rep.max_rel_err,
                          rep.excluded);
            *log << line;
        }
        if (rep.max_rel_err > result.max_rel_err) {
            result.max_rel_err = rep.max_rel_err;
            result.detail = "model " + std::to_string(k + 1) + " (" +
                            mode_name(cfg.mode) + ") tensor " + rep.worst_tensor +
                            "[" + std::to_string(rep.worst_row) + "," +
                            std::to_string(rep.worst_col) + "]";
        }
        if (rep.max_rel_err > 1e-4) result.pass = false;
    }
    return result;
}

}  // namespace crossrec
