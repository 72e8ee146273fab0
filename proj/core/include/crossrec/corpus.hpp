#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "crossrec/rng.hpp"

namespace crossrec {

enum class Domain { target, source };

struct Record {
    std::string user;
    std::string item;
    Domain domain;
};

// Two-domain implicit-feedback corpus.  Users are shared across domains;
// item vocabularies are disjoint.  Vocabularies are sorted lexicographically
// by external id, so indices are platform-independent.  Interactions are kept
// as per-user sorted adjacency lists (a set of (user, item) pairs with no
// duplicates).
struct InteractionCorpus {
    std::vector<std::string> users;
    std::vector<std::string> target_items;
    std::vector<std::string> source_items;
    std::vector<std::vector<int>> target_by_user;  // sorted item indices
    std::vector<std::vector<int>> source_by_user;

    int num_users() const { return static_cast<int>(users.size()); }
    int num_target_items() const { return static_cast<int>(target_items.size()); }
    int num_source_items() const { return static_cast<int>(source_items.size()); }
    std::size_t num_target_interactions() const;
    std::size_t num_source_interactions() const;

    const std::vector<std::vector<int>>& by_user(Domain d) const {
        return d == Domain::target ? target_by_user : source_by_user;
    }
    bool has_interaction(Domain d, int user, int item) const;

    // Flattens back to records (external ids), e.g. for re-ingestion.
    std::vector<Record> to_records() const;
};

// Collapses duplicates, applies the min-5 user/item filter per domain to a
// fixed point, intersects users across domains, and re-runs the filter until
// the joint fixed point is reached, so that every retained user has >= 5
// interactions in each domain, every retained item has >= 5 interactions, and
// every user appears in both domains.  Throws EmptyCorpus if nothing survives.
InteractionCorpus ingest_interactions(const std::vector<Record>& records,
                                      int min_count = 5);

// One record per line: `user_id<TAB>item_id<TAB>{target|source}`.
// Lines starting with '#' are skipped.  Parse failures raise MalformedRecord
// with the 1-based line number.
std::vector<Record> load_interaction_records(const std::string& path);
std::vector<Record> parse_interaction_records(std::istream& in,
                                              const std::string& origin);
void write_interaction_file(const std::vector<Record>& records,
                            const std::string& path);

// Per-user leave-one-out partition of the target domain plus frozen
// evaluation candidate lists.  Immutable after construction.
struct SplitCorpus {
    std::shared_ptr<const InteractionCorpus> corpus;
    std::vector<std::vector<int>> train_target;  // sorted per user
    std::vector<std::vector<int>> train_source;  // all source interactions
    std::vector<int> test_item;        // per user, target domain
    std::vector<int> validation_item;  // per user, target domain
    std::vector<int> source_context;   // per user: lexicographically first
                                       // source training item, used as the
                                       // fixed source input when ranking
    std::vector<std::vector<int>> eval_candidates;  // 100 items incl. test
    std::uint64_t rng_seed = 0;

    std::size_t num_train_target() const;
    std::size_t num_train_source() const;
};

inline constexpr int kEvalCandidates = 100;
inline constexpr int kEvalNegatives = 99;

// Draws 99 negatives uniformly without replacement from target items the user
// never interacted with (train, validation and test all excluded), then
// inserts the test item at a seeded position.  Throws CandidatePoolTooSmall
// if fewer than 99 eligible negatives exist.
std::vector<int> sample_eval_candidates(const InteractionCorpus& corpus,
                                        int user, int test_item,
                                        int validation_item,
                                        std::uint64_t seed);

// Holds out one test and one validation target item per user (seeded), keeps
// every source interaction in train_source, and freezes eval candidates.
// Requires >= 3 target interactions per user (InsufficientHistory otherwise).
SplitCorpus leave_one_out_split(std::shared_ptr<const InteractionCorpus> corpus,
                                std::uint64_t seed);

// Split manifest: replayable text form of a SplitCorpus (external ids).
void write_split_manifest(const SplitCorpus& split, const std::string& path);
SplitCorpus load_split_manifest(const std::string& path,
                                std::shared_ptr<const InteractionCorpus> corpus);
// FNV-1a fingerprint of the manifest bytes as stored on disk.
std::uint64_t split_manifest_hash(const std::string& path);

struct TrainingBatch {
    struct Element {
        int user;
        int target_item;
        int target_label;  // {0,1}
        int source_item;
        int source_label;  // {0,1}
    };
    std::vector<Element> elements;

    bool empty() const { return elements.empty(); }
    std::size_t size() const { return elements.size(); }
};

// Streaming training sampler.  One epoch is a seeded shuffled sweep over the
// union of both domains' train positives; each swept positive yields one
// element pairing it with a uniformly drawn same-user positive of the other
// domain (labels 1,1), followed by neg_ratio all-negative elements whose
// items are drawn uniformly from each domain's non-interacted items
// (labels 0,0).  The stream reshuffles and continues across epoch
// boundaries, so batches never fail.
class TrainingSampler {
public:
    TrainingSampler(const SplitCorpus& split, std::uint64_t seed, int neg_ratio);

    TrainingBatch next_batch(int batch_size);

    // Elements generated by one full sweep: (#positives) * (1 + neg_ratio).
    std::size_t elements_per_epoch() const { return sweep_.size() * (1 + neg_ratio_); }

private:
    struct Positive {
        Domain domain;
        int user;
        int item;
    };

    void refill();
    int draw_negative(Domain d, int user);

    const SplitCorpus& split_;
    Rng rng_;
    int neg_ratio_;
    std::vector<Positive> sweep_;
    std::size_t cursor_ = 0;
    std::deque<TrainingBatch::Element> pending_;
};

}  // namespace crossrec
