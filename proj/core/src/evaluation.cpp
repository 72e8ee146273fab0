#include "crossrec/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "crossrec/error.hpp"

namespace crossrec {

int rank_of_test_item(const ModelParams& params, const NetworkConfig& cfg,
                      int user, const SplitCorpus& split,
                      const FeatureMatrix& target_features,
                      const FeatureMatrix& source_features,
                      bool zero_source_context) {
    if (user < 0 || user >= static_cast<int>(split.eval_candidates.size()) ||
        split.eval_candidates[user].empty())
        throw errors::missing_candidates("user index " + std::to_string(user) +
                                         " has no frozen candidate list");
    std::optional<int> context;
    if (!zero_source_context) context = split.source_context[user];
    auto scored = score_target_candidates(params, cfg, user,
                                          split.eval_candidates[user], context,
                                          target_features, source_features);
    const int test = split.test_item[user];
    for (const auto& s : scored)
        if (s.item == test) return s.rank;
    throw errors::missing_candidates("test item missing from candidate list of user " +
                                     std::to_string(user));
}

namespace {

void require_ranks(const std::vector<int>& ranks) {
    if (ranks.empty()) throw errors::empty_ranks("rank list is empty");
    for (int r : ranks)
        if (r < 1) throw errors::empty_ranks("ranks are 1-based, got " + std::to_string(r));
}

}  // namespace

double hit_ratio(const std::vector<int>& ranks, int top_n) {
    require_ranks(ranks);
    double hits = 0.0;
    for (int r : ranks)
        if (r <= top_n) hits += 1.0;
    return hits / static_cast<double>(ranks.size());
}

double ndcg(const std::vector<int>& ranks, int top_n) {
    require_ranks(ranks);
    double sum = 0.0;
    for (int r : ranks)
        if (r <= top_n) sum += std::log(2.0) / std::log(static_cast<double>(r) + 1.0);
    return sum / static_cast<double>(ranks.size());
}

double mrr(const std::vector<int>& ranks, int top_n, bool truncated) {
    require_ranks(ranks);
    double sum = 0.0;
    for (int r : ranks)
        if (!truncated || r <= top_n) sum += 1.0 / static_cast<double>(r);
    return sum / static_cast<double>(ranks.size());
}

EvalReport evaluate(const ModelParams& params, const NetworkConfig& cfg,
                    const SplitCorpus& split,
                    const FeatureMatrix& target_features,
                    const FeatureMatrix& source_features,
                    const EvalOptions& options) {
    const int num_users = split.corpus->num_users();
    std::vector<int> ranks(num_users);
    for (int u = 0; u < num_users; ++u)
        ranks[u] = rank_of_test_item(params, cfg, u, split, target_features,
                                     source_features, options.zero_source_context);

    EvalReport report;
    report.num_users = num_users;
    report.mode = mode_name(cfg.mode);
    report.untruncated_mrr = options.untruncated_mrr;
    for (int n : options.cutoffs) {
        EvalReport::Row row;
        row.cutoff = n;
        row.hr = hit_ratio(ranks, n);
        row.ndcg = ndcg(ranks, n);
        row.mrr = mrr(ranks, n, !options.untruncated_mrr);
        report.rows.push_back(row);
    }
    return report;
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void write_report_keyvalue(const EvalReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw errors::io_failure("cannot write " + path);
    for (const auto& row : report.rows) {
        out << "hr@" << row.cutoff << '=' << fmt(row.hr) << '\n';
        out << "ndcg@" << row.cutoff << '=' << fmt(row.ndcg) << '\n';
        out << "mrr@" << row.cutoff << '=' << fmt(row.mrr) << '\n';
    }
    out << "num_users=" << report.num_users << '\n';
    out << "mode=" << report.mode << '\n';
    out << "seed=" << report.seed << '\n';
    out << "checkpoint=" << report.checkpoint_id << '\n';
    out << "manifest_hash=" << report.manifest_hash << '\n';
    out << "mrr_untruncated=" << (report.untruncated_mrr ? 1 : 0) << '\n';
    if (!out) throw errors::io_failure("write failed for " + path);
}

void write_report_csv_row(const EvalReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw errors::io_failure("cannot write " + path);
    out << "mode,seed,checkpoint,manifest_hash,num_users";
    for (const auto& row : report.rows)
        out << ",hr@" << row.cutoff << ",ndcg@" << row.cutoff << ",mrr@" << row.cutoff;
    out << '\n';
    out << report.mode << ',' << report.seed << ',' << report.checkpoint_id << ','
        << report.manifest_hash << ',' << report.num_users;
    for (const auto& row : report.rows)
        out << ',' << fmt(row.hr) << ',' << fmt(row.ndcg) << ',' << fmt(row.mrr);
    out << '\n';
    if (!out) throw errors::io_failure("write failed for " + path);
}

}  // namespace crossrec
