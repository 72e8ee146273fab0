#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "crossrec/corpus.hpp"
#include "crossrec/error.hpp"
#include "crossrec/synthetic.hpp"
#include "test_util.hpp"

using namespace crossrec;

namespace {

Record rec(const std::string& u, const std::string& i, Domain d) { return {u, i, d}; }

// Fixture with a deliberate filtering cascade: T6 has only 4 users, and
// dropping it pushes u06 below 5, which in turn trims T1..T4 back to 5.
// u07..u09 ride only on T6; u10 exists only in the source domain.
std::vector<Record> cascade_log() {
    std::vector<Record> log;
    auto add_target = [&log](const std::string& u, const std::string& i) {
        log.push_back(rec(u, i, Domain::target));
    };
    auto add_source = [&log](const std::string& u, const std::string& i) {
        log.push_back(rec(u, i, Domain::source));
    };
    for (const char* u : {"u01", "u02", "u03", "u04", "u05"})
        for (const char* i : {"T1", "T2", "T3", "T4", "T5"}) add_target(u, i);
    for (const char* i : {"T1", "T2", "T3", "T4", "T6"}) add_target("u06", i);
    for (const char* u : {"u07", "u08", "u09"}) add_target(u, "T6");
    for (const char* u : {"u01", "u02", "u03", "u04", "u05", "u06", "u10"})
        for (const char* i : {"S1", "S2", "S3", "S4", "S5"}) add_source(u, i);
    add_source("u07", "S1");
    add_source("u07", "S2");
    return log;
}

// Independent oracle: literal restatement of the filtering rules, iterated
// until nothing changes.  Kept free of any corpus code.
struct OraclePairs {
    std::set<std::pair<std::string, std::string>> target, source;
};

OraclePairs brute_force_filter(const std::vector<Record>& log, int min_count) {
    OraclePairs p;
    for (const auto& r : log)
        (r.domain == Domain::target ? p.target : p.source).insert({r.user, r.item});
    for (;;) {
        bool changed = false;
        for (auto* dom : {&p.target, &p.source}) {
            std::map<std::string, int> ud, id;
            for (const auto& [u, i] : *dom) {
                ud[u]++;
                id[i]++;
            }
            std::set<std::pair<std::string, std::string>> kept;
            for (const auto& pr : *dom)
                if (ud[pr.first] >= min_count && id[pr.second] >= min_count)
                    kept.insert(pr);
            if (kept != *dom) {
                *dom = kept;
                changed = true;
            }
        }
        std::set<std::string> tu, su;
        for (const auto& pr : p.target) tu.insert(pr.first);
        for (const auto& pr : p.source) su.insert(pr.first);
        for (auto* dom : {&p.target, &p.source}) {
            std::set<std::pair<std::string, std::string>> kept;
            for (const auto& pr : *dom)
                if (tu.count(pr.first) && su.count(pr.first)) kept.insert(pr);
            if (kept != *dom) {
                *dom = kept;
                changed = true;
            }
        }
        if (!changed) return p;
    }
}

std::shared_ptr<const InteractionCorpus> small_synthetic(int users = 50, int items = 120,
                                                         int per_user = 8,
                                                         std::uint64_t seed = 11) {
    SyntheticConfig cfg;
    cfg.num_users = users;
    cfg.num_items_per_domain = items;
    cfg.latent_dim = 4;
    cfg.interactions_per_user = per_user;
    cfg.feature_dim = 4;
    cfg.rng_seed = seed;
    return std::make_shared<InteractionCorpus>(generate_synthetic_corpus(cfg).corpus);
}

}  // namespace

TEST_CASE("cascading min-5 filter reaches the hand-derived fixed point") {
    InteractionCorpus corpus = ingest_interactions(cascade_log());

    // Frozen expectation, derived by iterating the rules by hand:
    //   pass 1 drops T6 (4 users) and u07..u09 (1 interaction each);
    //   pass 2 drops u06 (down to T1..T4);
    //   user intersection then removes u06/u10 leftovers from the source side.
    CHECK(corpus.users == std::vector<std::string>{"u01", "u02", "u03", "u04", "u05"});
    CHECK(corpus.target_items == std::vector<std::string>{"T1", "T2", "T3", "T4", "T5"});
    CHECK(corpus.source_items == std::vector<std::string>{"S1", "S2", "S3", "S4", "S5"});
    CHECK(corpus.num_target_interactions() == 25);
    CHECK(corpus.num_source_interactions() == 25);

    // Cross-check against the independent brute-force oracle.
    OraclePairs oracle = brute_force_filter(cascade_log(), 5);
    CHECK(oracle.target.size() == corpus.num_target_interactions());
    CHECK(oracle.source.size() == corpus.num_source_interactions());
    for (int u = 0; u < corpus.num_users(); ++u) {
        for (int i : corpus.target_by_user[u])
            CHECK(oracle.target.count({corpus.users[u], corpus.target_items[i]}) == 1);
        for (int j : corpus.source_by_user[u])
            CHECK(oracle.source.count({corpus.users[u], corpus.source_items[j]}) == 1);
    }
}

TEST_CASE("a user with four target interactions is filtered out") {
    std::vector<Record> log = cascade_log();
    for (const char* i : {"T1", "T2", "T3", "T4"})
        log.push_back(rec("u99", i, Domain::target));
    for (const char* i : {"S1", "S2", "S3", "S4", "S5"})
        log.push_back(rec("u99", i, Domain::source));
    InteractionCorpus corpus = ingest_interactions(log);
    CHECK(std::find(corpus.users.begin(), corpus.users.end(), "u99") ==
          corpus.users.end());
}

TEST_CASE("duplicates collapse and vocabularies sort lexicographically") {
    std::vector<Record> log = cascade_log();
    std::vector<Record> doubled = log;
    doubled.insert(doubled.end(), log.begin(), log.end());
    InteractionCorpus a = ingest_interactions(log);
    InteractionCorpus b = ingest_interactions(doubled);
    CHECK(a.users == b.users);
    CHECK(a.num_target_interactions() == b.num_target_interactions());
    CHECK(std::is_sorted(a.users.begin(), a.users.end()));
    CHECK(std::is_sorted(a.target_items.begin(), a.target_items.end()));
    CHECK(std::is_sorted(a.source_items.begin(), a.source_items.end()));
}

TEST_CASE("ingest is idempotent on its own output") {
    InteractionCorpus once = ingest_interactions(cascade_log());
    InteractionCorpus twice = ingest_interactions(once.to_records());
    CHECK(once.users == twice.users);
    CHECK(once.target_items == twice.target_items);
    CHECK(once.source_items == twice.source_items);
    CHECK(once.target_by_user == twice.target_by_user);
    CHECK(once.source_by_user == twice.source_by_user);
}

TEST_CASE("ingest rejects logs where nothing survives") {
    std::vector<Record> log = {rec("a", "x", Domain::target),
                               rec("a", "y", Domain::source)};
    CHECK_THROWS_WITH_AS(ingest_interactions(log), doctest::Contains("no user"),
                         Error);
}

TEST_CASE("interaction file parsing reports the offending line") {
    std::istringstream in("# comment\nu1\tt1\ttarget\nu2\tt2\n");
    CHECK_THROWS_WITH_AS(parse_interaction_records(in, "log.tsv"),
                         doctest::Contains("log.tsv:3"), Error);

    std::istringstream bad_domain("u1\tt1\tmiddle\n");
    try {
        parse_interaction_records(bad_domain, "x");
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.name() == "MalformedRecord");
    }
}

TEST_CASE("interaction file round-trips through write and load") {
    TempDir tmp("corpus_io");
    InteractionCorpus corpus = ingest_interactions(cascade_log());
    write_interaction_file(corpus.to_records(), tmp.file("log.tsv"));
    InteractionCorpus reread =
        ingest_interactions(load_interaction_records(tmp.file("log.tsv")));
    CHECK(reread.users == corpus.users);
    CHECK(reread.target_by_user == corpus.target_by_user);
}

TEST_CASE("leave-one-out split partitions each user's target row") {
    auto corpus = small_synthetic();
    SplitCorpus split = leave_one_out_split(corpus, 42);

    for (int u = 0; u < corpus->num_users(); ++u) {
        const auto& full = corpus->target_by_user[u];
        const auto& train = split.train_target[u];
        CHECK(train.size() == full.size() - 2);
        CHECK(split.test_item[u] != split.validation_item[u]);
        CHECK(!std::binary_search(train.begin(), train.end(), split.test_item[u]));
        CHECK(!std::binary_search(train.begin(), train.end(), split.validation_item[u]));
        // Partition: train + the two held-out items recover the full row.
        std::vector<int> rebuilt = train;
        rebuilt.push_back(split.test_item[u]);
        rebuilt.push_back(split.validation_item[u]);
        std::sort(rebuilt.begin(), rebuilt.end());
        CHECK(rebuilt == full);
        // Source side stays whole.
        CHECK(split.train_source[u] == corpus->source_by_user[u]);
        CHECK(split.source_context[u] == corpus->source_by_user[u].front());
    }
}

TEST_CASE("user with exactly five target interactions keeps three in train") {
    auto corpus = small_synthetic(25, 130, 5);  // exactly 5 per user
    SplitCorpus split = leave_one_out_split(corpus, 7);
    for (int u = 0; u < corpus->num_users(); ++u)
        CHECK(split.train_target[u].size() == 3);  // 5 - 1 - 1
}

TEST_CASE("split is a pure function of corpus and seed") {
    auto corpus = small_synthetic();
    SplitCorpus a = leave_one_out_split(corpus, 42);
    SplitCorpus b = leave_one_out_split(corpus, 42);
    CHECK(a.test_item == b.test_item);
    CHECK(a.validation_item == b.validation_item);
    CHECK(a.eval_candidates == b.eval_candidates);

    SplitCorpus c = leave_one_out_split(corpus, 43);
    CHECK(a.test_item != c.test_item);  // differs for at least one user
}

TEST_CASE("split requires three target interactions per user") {
    auto corpus = std::make_shared<InteractionCorpus>();
    corpus->users = {"u1"};
    corpus->target_items = {"t1", "t2"};
    corpus->source_items = {"s1"};
    corpus->target_by_user = {{0, 1}};
    corpus->source_by_user = {{0}};
    try {
        leave_one_out_split(corpus, 1);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.name() == "InsufficientHistory");
        CHECK(std::string(e.what()).find("u1") != std::string::npos);
    }
}

TEST_CASE("eval candidates: 100 distinct items, test included, no interacted item") {
    auto corpus = small_synthetic(60, 140, 8);
    SplitCorpus split = leave_one_out_split(corpus, 5);
    for (int u = 0; u < corpus->num_users(); ++u) {
        const auto& cand = split.eval_candidates[u];
        CHECK(cand.size() == 100);
        std::set<int> uniq(cand.begin(), cand.end());
        CHECK(uniq.size() == 100);
        CHECK(uniq.count(split.test_item[u]) == 1);
        int relevant = 0;
        for (int item : cand) {
            if (item == split.test_item[u]) {
                ++relevant;
                continue;
            }
            CHECK(!corpus->has_interaction(Domain::target, u, item));
        }
        CHECK(relevant == 1);
    }
}

TEST_CASE("candidate sampling fails when fewer than 99 negatives exist") {
    auto corpus = std::make_shared<InteractionCorpus>();
    corpus->users = {"u1"};
    corpus->target_items.resize(100);
    for (int i = 0; i < 100; ++i) corpus->target_items[i] = "t" + std::to_string(i);
    corpus->source_items = {"s1"};
    corpus->target_by_user = {{0, 1}};  // 98 eligible < 99
    corpus->source_by_user = {{0}};
    CHECK_THROWS_AS(sample_eval_candidates(*corpus, 0, 0, 1, 9), Error);
    try {
        sample_eval_candidates(*corpus, 0, 0, 1, 9);
    } catch (const Error& e) {
        CHECK(e.name() == "CandidatePoolTooSmall");
    }
}

TEST_CASE("split manifest replays bit-exactly") {
    TempDir tmp("manifest");
    auto corpus = small_synthetic();
    SplitCorpus split = leave_one_out_split(corpus, 99);
    write_split_manifest(split, tmp.file("split.manifest"));

    SplitCorpus loaded = load_split_manifest(tmp.file("split.manifest"), corpus);
    CHECK(loaded.test_item == split.test_item);
    CHECK(loaded.validation_item == split.validation_item);
    CHECK(loaded.source_context == split.source_context);
    CHECK(loaded.eval_candidates == split.eval_candidates);
    CHECK(loaded.train_target == split.train_target);
    CHECK(loaded.rng_seed == split.rng_seed);

    write_split_manifest(loaded, tmp.file("again.manifest"));
    CHECK(slurp(tmp.file("split.manifest")) == slurp(tmp.file("again.manifest")));
    CHECK(split_manifest_hash(tmp.file("split.manifest")) ==
          split_manifest_hash(tmp.file("again.manifest")));
}

TEST_CASE("training sampler: epoch label balance and negative soundness") {
    auto corpus = small_synthetic(30, 130, 6, 3);
    SplitCorpus split = leave_one_out_split(corpus, 3);
    TrainingSampler sampler(split, 17, 1);

    const std::size_t per_epoch = sampler.elements_per_epoch();
    std::size_t positives = split.num_train_target() + split.num_train_source();
    CHECK(per_epoch == positives * 2);

    TrainingBatch epoch = sampler.next_batch(static_cast<int>(per_epoch));
    std::size_t target_pos = 0, source_pos = 0;
    for (const auto& el : epoch.elements) {
        CHECK(el.target_label == el.source_label);  // paired scheme
        target_pos += el.target_label;
        source_pos += el.source_label;
        if (el.target_label == 0) {
            const auto& row = split.train_target[el.user];
            CHECK(!std::binary_search(row.begin(), row.end(), el.target_item));
            const auto& srow = split.train_source[el.user];
            CHECK(!std::binary_search(srow.begin(), srow.end(), el.source_item));
        } else {
            const auto& trow = split.train_target[el.user];
            const auto& srow = split.train_source[el.user];
            CHECK(std::binary_search(trow.begin(), trow.end(), el.target_item));
            CHECK(std::binary_search(srow.begin(), srow.end(), el.source_item));
        }
    }
    CHECK(target_pos * 2 == per_epoch);  // exactly half the labels are 1
    CHECK(source_pos * 2 == per_epoch);

    // Wraps across the epoch boundary without error.
    TrainingBatch more = sampler.next_batch(64);
    CHECK(more.size() == 64);
}

TEST_CASE("sampler is deterministic for a fixed seed") {
    auto corpus = small_synthetic(20, 130, 6, 5);
    SplitCorpus split = leave_one_out_split(corpus, 5);
    TrainingSampler a(split, 123, 1), b(split, 123, 1);
    for (int k = 0; k < 5; ++k) {
        TrainingBatch ba = a.next_batch(32), bb = b.next_batch(32);
        for (std::size_t e = 0; e < ba.size(); ++e) {
            CHECK(ba.elements[e].user == bb.elements[e].user);
            CHECK(ba.elements[e].target_item == bb.elements[e].target_item);
            CHECK(ba.elements[e].source_item == bb.elements[e].source_item);
        }
    }
}

TEST_CASE("negative draws are uniform over the eligible pool (chi-square)") {
    // Single-user toy corpus with 20 target items, 5 interacted -> 15
    // eligible negatives.  With 1e5 positive sweeps (one negative element
    // each), expected count per item is ~6667.
    auto corpus = std::make_shared<InteractionCorpus>();
    corpus->users = {"u1"};
    for (int i = 0; i < 20; ++i) corpus->target_items.push_back("t" + std::to_string(i));
    for (int j = 0; j < 4; ++j) corpus->source_items.push_back("s" + std::to_string(j));
    corpus->target_by_user = {{0, 1, 2, 3, 4, 5, 6}};  // 7 target interactions
    corpus->source_by_user = {{0, 1, 2}};

    // Hand-built split (the catalogue is too small for 99 eval negatives).
    SplitCorpus split;
    split.corpus = corpus;
    split.train_target = {{0, 1, 2, 3, 4}};
    split.train_source = corpus->source_by_user;
    split.test_item = {5};
    split.validation_item = {6};
    split.source_context = {0};
    split.eval_candidates = {{}};
    TrainingSampler sampler(split, 77, 1);

    std::map<int, long> counts;
    long draws = 0;
    while (draws < 100000) {
        TrainingBatch batch = sampler.next_batch(256);
        for (const auto& el : batch.elements) {
            if (el.target_label == 0) {
                ++counts[el.target_item];
                ++draws;
            }
        }
    }
    const auto& train = split.train_target[0];
    std::size_t eligible = corpus->target_items.size() - train.size();  // 15
    double expected = static_cast<double>(draws) / static_cast<double>(eligible);
    double chi2 = 0.0;
    for (int i = 0; i < 20; ++i) {
        bool in_train = std::binary_search(train.begin(), train.end(), i);
        double observed = static_cast<double>(counts.count(i) ? counts[i] : 0);
        if (in_train) {
            CHECK(observed == 0.0);  // r_ui = 0 in training for every negative
        } else {
            chi2 += (observed - expected) * (observed - expected) / expected;
        }
    }
    // dof = eligible - 1 = 14; critical value at significance 0.01 is 29.141.
    CHECK(chi2 < 29.141);
}
