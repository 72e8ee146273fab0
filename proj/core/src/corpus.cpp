#include "crossrec/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "crossrec/error.hpp"

namespace crossrec {

namespace {

std::size_t count_interactions(const std::vector<std::vector<int>>& by_user) {
    std::size_t n = 0;
    for (const auto& row : by_user) n += row.size();
    return n;
}

}  // namespace

std::size_t InteractionCorpus::num_target_interactions() const {
    return count_interactions(target_by_user);
}

std::size_t InteractionCorpus::num_source_interactions() const {
    return count_interactions(source_by_user);
}

bool InteractionCorpus::has_interaction(Domain d, int user, int item) const {
    const auto& row = by_user(d)[user];
    return std::binary_search(row.begin(), row.end(), item);
}

std::vector<Record> InteractionCorpus::to_records() const {
    std::vector<Record> out;
    out.reserve(num_target_interactions() + num_source_interactions());
    for (int u = 0; u < num_users(); ++u) {
        for (int i : target_by_user[u])
            out.push_back({users[u], target_items[i], Domain::target});
        for (int j : source_by_user[u])
            out.push_back({users[u], source_items[j], Domain::source});
    }
    return out;
}

namespace {

// Per-domain interaction sets keyed by external ids while filtering runs.
using PairSet = std::set<std::pair<std::string, std::string>>;

struct Degrees {
    std::map<std::string, int> user;
    std::map<std::string, int> item;
};

Degrees count_degrees(const PairSet& pairs) {
    Degrees d;
    for (const auto& [u, i] : pairs) {
        ++d.user[u];
        ++d.item[i];
    }
    return d;
}

// Simultaneously removes every user and item below min_count and repeats
// until stable.  The surviving subgraph is the unique maximal one in which
// all degrees are >= min_count, so the result is order-independent.
bool prune_domain(PairSet& pairs, int min_count) {
    bool changed_any = false;
    for (;;) {
        Degrees deg = count_degrees(pairs);
        PairSet kept;
        for (const auto& p : pairs) {
            if (deg.user[p.first] >= min_count && deg.item[p.second] >= min_count)
                kept.insert(p);
        }
        if (kept.size() == pairs.size()) return changed_any;
        pairs = std::move(kept);
        changed_any = true;
    }
}

std::set<std::string> users_of(const PairSet& pairs) {
    std::set<std::string> out;
    for (const auto& p : pairs) out.insert(p.first);
    return out;
}

void keep_users(PairSet& pairs, const std::set<std::string>& keep) {
    PairSet kept;
    for (const auto& p : pairs) {
        if (keep.count(p.first)) kept.insert(p);
    }
    pairs = std::move(kept);
}

}  // namespace

InteractionCorpus ingest_interactions(const std::vector<Record>& records,
                                      int min_count) {
    PairSet target, source;
    for (const auto& r : records) {
        auto& dst = r.domain == Domain::target ? target : source;
        dst.insert({r.user, r.item});  // duplicates collapse here
    }

    prune_domain(target, min_count);
    prune_domain(source, min_count);

    // Intersect users, re-filter, and repeat: dropping users during the
    // intersection can push items below the threshold and vice versa, so the
    // invariant only holds at the joint fixed point.
    for (;;) {
        std::set<std::string> ut = users_of(target);
        std::set<std::string> us = users_of(source);
        std::set<std::string> shared;
        std::set_intersection(ut.begin(), ut.end(), us.begin(), us.end(),
                              std::inserter(shared, shared.begin()));
        std::size_t before = target.size() + source.size();
        keep_users(target, shared);
        keep_users(source, shared);
        bool changed = (target.size() + source.size()) != before;
        changed |= prune_domain(target, min_count);
        changed |= prune_domain(source, min_count);
        if (!changed) break;
    }

    if (target.empty() || source.empty())
        throw errors::empty_corpus("no user survives min-" +
                                   std::to_string(min_count) + " filtering");

    InteractionCorpus corpus;
    {
        std::set<std::string> shared = users_of(target);
        corpus.users.assign(shared.begin(), shared.end());
        std::set<std::string> ti, si;
        for (const auto& p : target) ti.insert(p.second);
        for (const auto& p : source) si.insert(p.second);
        corpus.target_items.assign(ti.begin(), ti.end());
        corpus.source_items.assign(si.begin(), si.end());
    }

    std::map<std::string, int> uidx, tidx, sidx;
    for (int k = 0; k < corpus.num_users(); ++k) uidx[corpus.users[k]] = k;
    for (int k = 0; k < corpus.num_target_items(); ++k) tidx[corpus.target_items[k]] = k;
    for (int k = 0; k < corpus.num_source_items(); ++k) sidx[corpus.source_items[k]] = k;

    corpus.target_by_user.resize(corpus.num_users());
    corpus.source_by_user.resize(corpus.num_users());
    for (const auto& [u, i] : target)
        corpus.target_by_user[uidx[u]].push_back(tidx[i]);
    for (const auto& [u, j] : source)
        corpus.source_by_user[uidx[u]].push_back(sidx[j]);
    for (auto& row : corpus.target_by_user) std::sort(row.begin(), row.end());
    for (auto& row : corpus.source_by_user) std::sort(row.begin(), row.end());
    return corpus;
}

std::vector<Record> parse_interaction_records(std::istream& in,
                                              const std::string& origin) {
    std::vector<Record> records;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto t1 = line.find('\t');
        auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            throw errors::malformed_record(origin + ":" + std::to_string(lineno) +
                                           ": expected user<TAB>item<TAB>domain");
        std::string user = line.substr(0, t1);
        std::string item = line.substr(t1 + 1, t2 - t1 - 1);
        std::string dom = line.substr(t2 + 1);
        if (user.empty() || item.empty())
            throw errors::malformed_record(origin + ":" + std::to_string(lineno) +
                                           ": empty user or item id");
        Domain d;
        if (dom == "target") {
            d = Domain::target;
        } else if (dom == "source") {
            d = Domain::source;
        } else {
            throw errors::malformed_record(origin + ":" + std::to_string(lineno) +
                                           ": unknown domain '" + dom + "'");
        }
        records.push_back({std::move(user), std::move(item), d});
    }
    return records;
}

std::vector<Record> load_interaction_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw errors::io_failure("cannot open " + path);
    return parse_interaction_records(in, path);
}

void write_interaction_file(const std::vector<Record>& records,
                            const std::string& path) {
    std::ofstream out(path);
    if (!out) throw errors::io_failure("cannot write " + path);
    for (const auto& r : records) {
        out << r.user << '\t' << r.item << '\t'
            << (r.domain == Domain::target ? "target" : "source") << '\n';
    }
    if (!out) throw errors::io_failure("write failed for " + path);
}

std::size_t SplitCorpus::num_train_target() const {
    return count_interactions(train_target);
}

std::size_t SplitCorpus::num_train_source() const {
    return count_interactions(train_source);
}

std::vector<int> sample_eval_candidates(const InteractionCorpus& corpus,
                                        int user, int test_item,
                                        int validation_item,
                                        std::uint64_t seed) {
    const auto& interacted = corpus.target_by_user[user];
    std::vector<int> pool;
    pool.reserve(corpus.num_target_items());
    for (int i = 0; i < corpus.num_target_items(); ++i) {
        if (!std::binary_search(interacted.begin(), interacted.end(), i))
            pool.push_back(i);
    }
    // test/validation are part of `interacted`; the pool is everything the
    // user never touched in the target domain.
    if (static_cast<int>(pool.size()) < kEvalNegatives)
        throw errors::candidate_pool_too_small(
            "user " + corpus.users[user] + " has " + std::to_string(pool.size()) +
            " eligible negatives, need " + std::to_string(kEvalNegatives));
    (void)validation_item;

    Rng rng(seed);
    // Partial Fisher-Yates: the first 99 slots are a uniform draw without
    // replacement.
    for (int k = 0; k < kEvalNegatives; ++k) {
        std::size_t j = k + rng.uniform_int(pool.size() - k);
        std::swap(pool[k], pool[j]);
    }
    std::vector<int> candidates(pool.begin(), pool.begin() + kEvalNegatives);
    std::size_t pos = rng.uniform_int(kEvalCandidates);
    candidates.insert(candidates.begin() + pos, test_item);
    return candidates;
}

SplitCorpus leave_one_out_split(std::shared_ptr<const InteractionCorpus> corpus,
                                std::uint64_t seed) {
    const InteractionCorpus& c = *corpus;
    std::string offenders;
    for (int u = 0; u < c.num_users(); ++u) {
        if (c.target_by_user[u].size() < 3) {
            if (!offenders.empty()) offenders += ", ";
            offenders += c.users[u];
        }
    }
    if (!offenders.empty())
        throw errors::insufficient_history(
            "users with fewer than 3 target interactions: " + offenders);

    SplitCorpus split;
    split.corpus = corpus;
    split.rng_seed = seed;
    split.train_target.resize(c.num_users());
    split.train_source = c.source_by_user;
    split.test_item.resize(c.num_users());
    split.validation_item.resize(c.num_users());
    split.source_context.resize(c.num_users());
    split.eval_candidates.resize(c.num_users());

    for (int u = 0; u < c.num_users(); ++u) {
        const auto& row = c.target_by_user[u];
        // Per-user substream so the result does not depend on user order.
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(u)));
        std::size_t t = rng.uniform_int(row.size());
        std::size_t v = rng.uniform_int(row.size() - 1);
        if (v >= t) ++v;  // distinct from the test slot
        split.test_item[u] = row[t];
        split.validation_item[u] = row[v];
        for (std::size_t k = 0; k < row.size(); ++k) {
            if (k != t && k != v) split.train_target[u].push_back(row[k]);
        }
        // Vocabulary is sorted by external id, so the smallest index is the
        // lexicographically first item.
        split.source_context[u] = split.train_source[u].front();
        split.eval_candidates[u] = sample_eval_candidates(
            c, u, split.test_item[u], split.validation_item[u],
            mix_seed(seed, 0x9000000000000000ULL + static_cast<std::uint64_t>(u)));
    }
    return split;
}

namespace {

std::string join_ids(const std::vector<int>& idx,
                     const std::vector<std::string>& vocab) {
    std::string out;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (k) out += ',';
        out += vocab[idx[k]];
    }
    return out;
}

int lookup(const std::vector<std::string>& vocab, const std::string& id,
           const std::string& what, const std::string& where) {
    auto it = std::lower_bound(vocab.begin(), vocab.end(), id);
    if (it == vocab.end() || *it != id)
        throw errors::malformed_record(where + ": unknown " + what + " id '" + id + "'");
    return static_cast<int>(it - vocab.begin());
}

}  // namespace

void write_split_manifest(const SplitCorpus& split, const std::string& path) {
    const InteractionCorpus& c = *split.corpus;
    std::ofstream out(path);
    if (!out) throw errors::io_failure("cannot write " + path);
    out << "# crossrec split manifest v1\n";
    out << "seed=" << split.rng_seed << '\n';
    out << "users=" << c.num_users() << '\n';
    out << "# user<TAB>test<TAB>validation<TAB>source_context<TAB>candidates\n";
    for (int u = 0; u < c.num_users(); ++u) {
        out << c.users[u] << '\t' << c.target_items[split.test_item[u]] << '\t'
            << c.target_items[split.validation_item[u]] << '\t'
            << c.source_items[split.source_context[u]] << '\t'
            << join_ids(split.eval_candidates[u], c.target_items) << '\n';
    }
    if (!out) throw errors::io_failure("write failed for " + path);
}

SplitCorpus load_split_manifest(const std::string& path,
                                std::shared_ptr<const InteractionCorpus> corpus) {
    const InteractionCorpus& c = *corpus;
    std::ifstream in(path);
    if (!in) throw errors::io_failure("cannot open " + path);

    SplitCorpus split;
    split.corpus = corpus;
    split.train_source = c.source_by_user;
    split.train_target.resize(c.num_users());
    split.test_item.assign(c.num_users(), -1);
    split.validation_item.assign(c.num_users(), -1);
    split.source_context.assign(c.num_users(), -1);
    split.eval_candidates.resize(c.num_users());

    std::string line;
    std::size_t lineno = 0;
    int seen = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const std::string where = path + ":" + std::to_string(lineno);
        if (line.rfind("seed=", 0) == 0) {
            split.rng_seed = std::stoull(line.substr(5));
            continue;
        }
        if (line.rfind("users=", 0) == 0) continue;

        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, '\t')) cols.push_back(col);
        if (cols.size() != 5)
            throw errors::malformed_record(where + ": expected 5 tab-separated columns");

        int u = lookup(c.users, cols[0], "user", where);
        split.test_item[u] = lookup(c.target_items, cols[1], "item", where);
        split.validation_item[u] = lookup(c.target_items, cols[2], "item", where);
        split.source_context[u] = lookup(c.source_items, cols[3], "item", where);

        std::stringstream cs(cols[4]);
        std::string id;
        while (std::getline(cs, id, ','))
            split.eval_candidates[u].push_back(lookup(c.target_items, id, "item", where));
        if (split.eval_candidates[u].size() != kEvalCandidates)
            throw errors::malformed_record(where + ": expected " +
                                           std::to_string(kEvalCandidates) +
                                           " candidates");
        ++seen;
    }
    if (seen != c.num_users())
        throw errors::malformed_record(path + ": manifest covers " +
                                       std::to_string(seen) + " of " +
                                       std::to_string(c.num_users()) + " users");

    for (int u = 0; u < c.num_users(); ++u) {
        for (int i : c.target_by_user[u]) {
            if (i != split.test_item[u] && i != split.validation_item[u])
                split.train_target[u].push_back(i);
        }
    }
    return split;
}

std::uint64_t split_manifest_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw errors::io_failure("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string blob = ss.str();
    return fnv1a64(blob.data(), blob.size());
}

TrainingSampler::TrainingSampler(const SplitCorpus& split, std::uint64_t seed,
                                 int neg_ratio)
    : split_(split), rng_(seed), neg_ratio_(neg_ratio) {
    const InteractionCorpus& c = *split.corpus;
    for (int u = 0; u < c.num_users(); ++u) {
        for (int i : split.train_target[u]) sweep_.push_back({Domain::target, u, i});
        for (int j : split.train_source[u]) sweep_.push_back({Domain::source, u, j});
    }
    rng_.shuffle(sweep_);
}

int TrainingSampler::draw_negative(Domain d, int user) {
    const InteractionCorpus& c = *split_.corpus;
    int n = d == Domain::target ? c.num_target_items() : c.num_source_items();
    const auto& row = d == Domain::target ? split_.train_target[user]
                                          : split_.train_source[user];
    // Rejection sampling; training rows are tiny relative to the catalogue.
    for (;;) {
        int item = rng_.uniform_index(n);
        if (!std::binary_search(row.begin(), row.end(), item)) return item;
    }
}

void TrainingSampler::refill() {
    if (cursor_ == sweep_.size()) {
        rng_.shuffle(sweep_);
        cursor_ = 0;
    }
    const Positive& p = sweep_[cursor_++];
    TrainingBatch::Element pos;
    pos.user = p.user;
    if (p.domain == Domain::target) {
        const auto& other = split_.train_source[p.user];
        pos.target_item = p.item;
        pos.source_item = other[rng_.uniform_int(other.size())];
    } else {
        const auto& other = split_.train_target[p.user];
        pos.target_item = other[rng_.uniform_int(other.size())];
        pos.source_item = p.item;
    }
    pos.target_label = 1;
    pos.source_label = 1;
    pending_.push_back(pos);
    for (int k = 0; k < neg_ratio_; ++k) {
        TrainingBatch::Element neg;
        neg.user = p.user;
        neg.target_item = draw_negative(Domain::target, p.user);
        neg.source_item = draw_negative(Domain::source, p.user);
        neg.target_label = 0;
        neg.source_label = 0;
        pending_.push_back(neg);
    }
}

TrainingBatch TrainingSampler::next_batch(int batch_size) {
    TrainingBatch batch;
    batch.elements.reserve(batch_size);
    while (static_cast<int>(batch.elements.size()) < batch_size) {
        if (pending_.empty()) refill();
        batch.elements.push_back(pending_.front());
        pending_.pop_front();
    }
    return batch;
}

}  // namespace crossrec
