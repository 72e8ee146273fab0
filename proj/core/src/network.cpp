#include "crossrec/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "crossrec/error.hpp"
#include "crossrec/rng.hpp"

namespace crossrec {

const char* mode_name(Mode m) {
    switch (m) {
        case Mode::ACDN: return "ACDN";
        case Mode::ACDN_NO_L1: return "ACDN_NO_L1";
        case Mode::CDN: return "CDN";
        case Mode::MLP: return "MLP";
        case Mode::MLPPP: return "MLPPP";
        case Mode::CSN_SCALAR: return "CSN_SCALAR";
    }
    return "?";
}

Mode mode_from_name(const std::string& name) {
    for (Mode m : {Mode::ACDN, Mode::ACDN_NO_L1, Mode::CDN, Mode::MLP,
                   Mode::MLPPP, Mode::CSN_SCALAR}) {
        if (name == mode_name(m)) return m;
    }
    throw errors::config_invalid("unknown mode '" + name + "'");
}

NetworkConfig NetworkConfig::normalized() const {
    NetworkConfig out = *this;
    if (!mode_uses_features(mode)) out.feature_dim = 0;
    return out;
}

void NetworkConfig::validate() const {
    auto fail = [](const std::string& msg) { throw errors::config_invalid(msg); };
    if (embed_dim <= 0) fail("embed_dim must be positive");
    if (feature_dim < 0) fail("feature_dim must be nonnegative");
    if (hidden_sizes.empty()) fail("hidden_sizes must be nonempty");
    for (int h : hidden_sizes)
        if (h <= 0) fail("hidden sizes must be positive");
    if (lambda < 0.0) fail("lambda must be nonnegative");
    if (!mode_uses_features(mode) && feature_dim != 0)
        fail(std::string(mode_name(mode)) + " mode requires feature_dim = 0");
    if (mode == Mode::CSN_SCALAR) {
        for (int h : hidden_sizes)
            if (h != hidden_sizes.front())
                fail("CSN_SCALAR requires equal hidden sizes");
        if (cross_input_transition && input_width() != hidden_sizes.front())
            fail("CSN_SCALAR requires input width == hidden width when the "
                 "input transition is coupled (got " +
                 std::to_string(input_width()) + " vs " +
                 std::to_string(hidden_sizes.front()) + ")");
    }
}

bool ModelParams::all_finite() const {
    bool ok = P.allFinite() && Q_t.allFinite() && Q_s.allFinite() &&
              out_w_t.allFinite() && out_w_s.allFinite() &&
              std::isfinite(out_b_t) && std::isfinite(out_b_s);
    if (P_src.size() > 0) ok = ok && P_src.allFinite();
    for (const auto& m : W_t) ok = ok && m.allFinite();
    for (const auto& m : W_s) ok = ok && m.allFinite();
    for (const auto& v : b_t) ok = ok && v.allFinite();
    for (const auto& v : b_s) ok = ok && v.allFinite();
    for (const auto& m : H) ok = ok && m.allFinite();
    if (cross_scalars.size() > 0) ok = ok && cross_scalars.allFinite();
    return ok;
}

namespace detail {

ModelParams make_empty_params(const NetworkConfig& cfg, int m, int n_t, int n_s) {
    const int d = cfg.embed_dim;
    const int L = cfg.num_transitions();
    ModelParams p;
    p.mode = cfg.mode;
    p.P = Eigen::MatrixXd::Zero(m, d);
    if (!mode_shares_user_embedding(cfg.mode)) p.P_src = Eigen::MatrixXd::Zero(m, d);
    p.Q_t = Eigen::MatrixXd::Zero(n_t, d);
    p.Q_s = Eigen::MatrixXd::Zero(n_s, d);
    int num_coupled = 0;
    for (int l = 0; l < L; ++l) {
        const int prev = cfg.layer_width(l);
        const int next = cfg.layer_width(l + 1);
        p.W_t.push_back(Eigen::MatrixXd::Zero(next, prev));
        p.W_s.push_back(Eigen::MatrixXd::Zero(next, prev));
        p.b_t.push_back(Eigen::VectorXd::Zero(next));
        p.b_s.push_back(Eigen::VectorXd::Zero(next));
        if (cfg.transition_coupled(l)) {
            ++num_coupled;
            if (mode_has_cross_matrices(cfg.mode))
                p.H.push_back(Eigen::MatrixXd::Zero(next, prev));
        }
    }
    if (mode_has_cross_scalars(cfg.mode))
        p.cross_scalars = Eigen::VectorXd::Zero(num_coupled);
    p.out_w_t = Eigen::VectorXd::Zero(cfg.hidden_sizes.back());
    p.out_w_s = Eigen::VectorXd::Zero(cfg.hidden_sizes.back());
    return p;
}

std::vector<TensorRef> collect_tensors(const ModelParams& p) {
    std::vector<TensorRef> out;
    visit_tensors(p, [&out](const TensorRef& t) { out.push_back(t); });
    return out;
}

}  // namespace detail

ModelParams init_params(const NetworkConfig& cfg, int num_users,
                        int num_target_items, int num_source_items,
                        std::uint64_t seed) {
    cfg.validate();
    if (num_users <= 0 || num_target_items <= 0 || num_source_items <= 0)
        throw errors::config_invalid("vocabulary counts must be positive");
    ModelParams p = detail::make_empty_params(cfg, num_users, num_target_items,
                                              num_source_items);
    Rng rng(seed);
    detail::visit_tensors(p, [&rng](const detail::TensorRef& t) {
        for (Eigen::Index r = 0; r < t.rows; ++r)
            for (Eigen::Index c = 0; c < t.cols; ++c)
                t.at(r, c) = rng.gaussian(0.0, 0.01);
    });
    return p;
}

std::int64_t param_count(const NetworkConfig& cfg, int num_users,
                         int num_target_items, int num_source_items) {
    cfg.validate();
    const std::int64_t d = cfg.embed_dim;
    std::int64_t count = 0;
    count += static_cast<std::int64_t>(num_users) * d;                      // P
    if (!mode_shares_user_embedding(cfg.mode))
        count += static_cast<std::int64_t>(num_users) * d;                  // P_src
    count += static_cast<std::int64_t>(num_target_items) * d;               // Q_t
    count += static_cast<std::int64_t>(num_source_items) * d;               // Q_s
    for (int l = 0; l < cfg.num_transitions(); ++l) {
        const std::int64_t prev = cfg.layer_width(l);
        const std::int64_t next = cfg.layer_width(l + 1);
        count += 2 * (next * prev + next);  // W_t, b_t, W_s, b_s
        if (cfg.transition_coupled(l))
            count += mode_has_cross_matrices(cfg.mode) ? next * prev : 1;
    }
    count += 2 * (cfg.hidden_sizes.back() + 1);  // output heads
    return count;
}

namespace {

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

void check_index(int v, int bound, const char* what) {
    if (v < 0 || v >= bound)
        throw errors::index_out_of_range(std::string(what) + " index " +
                                         std::to_string(v) + " not in [0, " +
                                         std::to_string(bound) + ")");
}

}  // namespace

ForwardTrace forward_joint(const ModelParams& params, const NetworkConfig& cfg,
                           int u, int i, int j,
                           const FeatureMatrix& target_features,
                           const FeatureMatrix& source_features,
                           bool zero_source_context) {
    check_index(u, static_cast<int>(params.P.rows()), "user");
    check_index(i, static_cast<int>(params.Q_t.rows()), "target item");
    check_index(j, static_cast<int>(params.Q_s.rows()), "source item");
    const int d = cfg.embed_dim;
    const int f = cfg.feature_dim;
    if (f > 0 && (target_features.dim != f || source_features.dim != f))
        throw errors::shape_mismatch(
            "feature store dim (" + std::to_string(target_features.dim) + "/" +
            std::to_string(source_features.dim) + ") does not match network feature_dim " +
            std::to_string(f));

    const int L = cfg.num_transitions();
    ForwardTrace trace;
    trace.activations_t.resize(L + 1);
    trace.activations_s.resize(L + 1);
    trace.preactivations_t.resize(L);
    trace.preactivations_s.resize(L);

    Eigen::VectorXd x_t(cfg.input_width());
    x_t.segment(0, d) = params.P.row(u);
    x_t.segment(d, d) = params.Q_t.row(i);
    if (f > 0) x_t.segment(2 * d, f) = target_features.rows.row(i);
    trace.activations_t[0] = std::move(x_t);

    if (zero_source_context) {
        // Inert source tower: every source activation is zero, so no source
        // information reaches the target tower through the cross terms.
        for (int l = 0; l <= L; ++l)
            trace.activations_s[l] = Eigen::VectorXd::Zero(cfg.layer_width(l));
        for (int l = 0; l < L; ++l)
            trace.preactivations_s[l] = Eigen::VectorXd::Zero(cfg.layer_width(l + 1));
    } else {
        Eigen::VectorXd x_s(cfg.input_width());
        const Eigen::MatrixXd& user_table =
            mode_shares_user_embedding(cfg.mode) ? params.P : params.P_src;
        x_s.segment(0, d) = user_table.row(u);
        x_s.segment(d, d) = params.Q_s.row(j);
        if (f > 0) x_s.segment(2 * d, f) = source_features.rows.row(j);
        trace.activations_s[0] = std::move(x_s);
    }

    for (int l = 0; l < L; ++l) {
        Eigen::VectorXd z_t = params.W_t[l] * trace.activations_t[l] + params.b_t[l];
        int ci = params.cross_index(l, cfg);
        if (ci >= 0 && !zero_source_context) {
            if (mode_has_cross_matrices(cfg.mode))
                z_t.noalias() += params.H[ci] * trace.activations_s[l];
            else
                z_t += params.cross_scalars[ci] * trace.activations_s[l];
        }
        trace.activations_t[l + 1] = z_t.cwiseMax(0.0);
        trace.preactivations_t[l] = std::move(z_t);

        if (!zero_source_context) {
            Eigen::VectorXd z_s = params.W_s[l] * trace.activations_s[l] + params.b_s[l];
            if (ci >= 0) {
                if (mode_has_cross_matrices(cfg.mode))
                    z_s.noalias() += params.H[ci] * trace.activations_t[l];
                else
                    z_s += params.cross_scalars[ci] * trace.activations_t[l];
            }
            trace.activations_s[l + 1] = z_s.cwiseMax(0.0);
            trace.preactivations_s[l] = std::move(z_s);
        }
    }

    trace.output_t = params.out_w_t.dot(trace.activations_t[L]) + params.out_b_t;
    trace.output_s = params.out_w_s.dot(trace.activations_s[L]) + params.out_b_s;
    trace.score_t = sigmoid(trace.output_t);
    trace.score_s = sigmoid(trace.output_s);
    return trace;
}

std::vector<ScoredCandidate> score_target_candidates(
    const ModelParams& params, const NetworkConfig& cfg, int u,
    const std::vector<int>& candidates, std::optional<int> source_context,
    const FeatureMatrix& target_features, const FeatureMatrix& source_features) {
    if (candidates.empty())
        throw errors::index_out_of_range("candidate list is empty");
    std::vector<ScoredCandidate> scored;
    scored.reserve(candidates.size());
    const int j = source_context.value_or(0);
    const bool zero_ctx = !source_context.has_value();
    for (int item : candidates) {
        ForwardTrace t = forward_joint(params, cfg, u, item, j, target_features,
                                       source_features, zero_ctx);
        scored.push_back({item, t.score_t, 0});
    }
    std::sort(scored.begin(), scored.end(),
              [](const ScoredCandidate& a, const ScoredCandidate& b) {
                  if (a.score != b.score) return a.score > b.score;
                  return a.item < b.item;
              });
    for (std::size_t k = 0; k < scored.size(); ++k)
        scored[k].rank = static_cast<int>(k) + 1;
    return scored;
}

namespace {

void write_value(std::ofstream& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf;
}

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t k = 0; k < v.size(); ++k) {
        if (k) out += ',';
        out += std::to_string(v[k]);
    }
    return out;
}

std::vector<int> split_ints(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
    return out;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw errors::io_failure("cannot write " + path);
    out << "# crossrec checkpoint v1\n";
    out << "mode=" << mode_name(ckpt.config.mode) << '\n';
    out << "embed_dim=" << ckpt.config.embed_dim << '\n';
    out << "feature_dim=" << ckpt.config.feature_dim << '\n';
    out << "hidden=" << join_ints(ckpt.config.hidden_sizes) << '\n';
    out << "lambda=";
    write_value(out, ckpt.config.lambda);
    out << '\n';
    out << "cross_input_transition=" << (ckpt.config.cross_input_transition ? 1 : 0)
        << '\n';
    out << "users=" << ckpt.num_users << '\n';
    out << "target_items=" << ckpt.num_target_items << '\n';
    out << "source_items=" << ckpt.num_source_items << '\n';
    detail::visit_tensors(const_cast<ModelParams&>(ckpt.params),
                          [&out](const detail::TensorRef& t) {
                              out << "tensor " << t.name << ' ' << t.rows << ' '
                                  << t.cols << '\n';
                              for (Eigen::Index r = 0; r < t.rows; ++r) {
                                  for (Eigen::Index c = 0; c < t.cols; ++c) {
                                      if (c) out << ' ';
                                      write_value(out, t.at(r, c));
                                  }
                                  out << '\n';
                              }
                          });
    if (!out) throw errors::io_failure("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw errors::io_failure("cannot open " + path);

    Checkpoint ckpt;
    std::string line;
    // Header keys up to the first tensor line.
    std::streampos tensor_start = in.tellg();
    while (std::getline(in, line)) {
        if (line.rfind("tensor ", 0) == 0) break;
        tensor_start = in.tellg();
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw errors::malformed_record(path + ": bad header line '" + line + "'");
        std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        if (key == "mode") ckpt.config.mode = mode_from_name(value);
        else if (key == "embed_dim") ckpt.config.embed_dim = std::stoi(value);
        else if (key == "feature_dim") ckpt.config.feature_dim = std::stoi(value);
        else if (key == "hidden") ckpt.config.hidden_sizes = split_ints(value);
        else if (key == "lambda") ckpt.config.lambda = std::stod(value);
        else if (key == "cross_input_transition")
            ckpt.config.cross_input_transition = value != "0";
        else if (key == "users") ckpt.num_users = std::stoi(value);
        else if (key == "target_items") ckpt.num_target_items = std::stoi(value);
        else if (key == "source_items") ckpt.num_source_items = std::stoi(value);
        else throw errors::malformed_record(path + ": unknown header key '" + key + "'");
    }
    ckpt.config.validate();
    ckpt.params = detail::make_empty_params(ckpt.config, ckpt.num_users,
                                            ckpt.num_target_items,
                                            ckpt.num_source_items);
    in.clear();
    in.seekg(tensor_start);
    detail::visit_tensors(ckpt.params, [&in, &path](const detail::TensorRef& t) {
        std::string word, name;
        Eigen::Index rows = 0, cols = 0;
        if (!(in >> word >> name >> rows >> cols) || word != "tensor")
            throw errors::malformed_record(path + ": expected tensor block for " + t.name);
        if (name != t.name || rows != t.rows || cols != t.cols)
            throw errors::shape_mismatch(path + ": tensor " + name + " is " +
                                         std::to_string(rows) + "x" +
                                         std::to_string(cols) + ", expected " + t.name +
                                         " " + std::to_string(t.rows) + "x" +
                                         std::to_string(t.cols));
        for (Eigen::Index r = 0; r < t.rows; ++r)
            for (Eigen::Index c = 0; c < t.cols; ++c)
                if (!(in >> t.at(r, c)))
                    throw errors::malformed_record(path + ": truncated tensor " + t.name);
    });
    return ckpt;
}

}  // namespace crossrec
