#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace crossrec {

enum class MissingPolicy { zero_fill, reject };

// Per-item feature vectors keyed by external item id.  Immutable after load;
// safe for concurrent reads.  File format: first line `dim=<k>`, then rows
// `item_id<TAB>v1,v2,...,vk`.
struct FeatureStore {
    int dim = 0;
    std::map<std::string, Eigen::VectorXd> table;  // ordered: canonical writes
    MissingPolicy missing_policy = MissingPolicy::zero_fill;

    // Stored vector, or the zero vector under zero_fill (warns once per item
    // on stderr).  Throws MissingItem under reject.
    Eigen::VectorXd get(const std::string& item_id) const;

    void insert(const std::string& item_id, const Eigen::VectorXd& v);  // validates
};

FeatureStore load_feature_table(const std::string& path,
                                MissingPolicy policy = MissingPolicy::zero_fill);
void write_feature_table(const FeatureStore& store, const std::string& path);

// Vocabulary-aligned dense view of a store, resolved once so scoring loops
// avoid per-call map lookups.  rows.row(i) is the feature of vocab[i].
struct FeatureMatrix {
    int dim = 0;
    Eigen::MatrixXd rows;  // vocab_size x dim

    static FeatureMatrix resolve(const FeatureStore& store,
                                 const std::vector<std::string>& vocab);
    // Empty features for feature-free modes (dim 0).
    static FeatureMatrix none(std::size_t vocab_size);
};

}  // namespace crossrec
