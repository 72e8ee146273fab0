#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crossrec/corpus.hpp"
#include "crossrec/features.hpp"
#include "crossrec/network.hpp"

namespace crossrec {

struct EvalOptions {
    std::vector<int> cutoffs = {5, 10, 20};
    // Eqs. as printed carry no cutoff for the rank-discounted metrics; the
    // truncated form (hit indicator applied) is the default, this flag
    // selects the untruncated MRR variant.
    bool untruncated_mrr = false;
    bool zero_source_context = false;
};

struct EvalReport {
    struct Row {
        int cutoff;
        double hr, ndcg, mrr;
    };
    std::vector<Row> rows;
    int num_users = 0;
    std::string mode;
    std::uint64_t seed = 0;
    std::string checkpoint_id;
    std::uint64_t manifest_hash = 0;
    bool untruncated_mrr = false;
};

// 1-based rank of the test item among the user's frozen candidates, under
// score_target_candidates with the user's fixed source context.
int rank_of_test_item(const ModelParams& params, const NetworkConfig& cfg,
                      int user, const SplitCorpus& split,
                      const FeatureMatrix& target_features,
                      const FeatureMatrix& source_features,
                      bool zero_source_context = false);

// (1/|U|) sum 1[p_u <= topN]
double hit_ratio(const std::vector<int>& ranks, int top_n);
// (1/|U|) sum 1[p_u <= topN] * log(2)/log(p_u + 1)
double ndcg(const std::vector<int>& ranks, int top_n);
// (1/|U|) sum 1[p_u <= topN] * 1/p_u   (indicator dropped when untruncated)
double mrr(const std::vector<int>& ranks, int top_n, bool truncated = true);

// Computes every user's rank once, then all metrics per cutoff.
EvalReport evaluate(const ModelParams& params, const NetworkConfig& cfg,
                    const SplitCorpus& split,
                    const FeatureMatrix& target_features,
                    const FeatureMatrix& source_features,
                    const EvalOptions& options = {});

// Flat `key=value` document: hr@5, ndcg@5, mrr@5, hr@10, ... plus metadata.
void write_report_keyvalue(const EvalReport& report, const std::string& path);
// Single CSV row (with header) for sweep aggregation.
void write_report_csv_row(const EvalReport& report, const std::string& path);

}  // namespace crossrec
