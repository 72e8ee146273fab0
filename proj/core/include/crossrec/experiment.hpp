#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crossrec/corpus.hpp"
#include "crossrec/evaluation.hpp"
#include "crossrec/features.hpp"
#include "crossrec/network.hpp"
#include "crossrec/synthetic.hpp"
#include "crossrec/training.hpp"

namespace crossrec::cli {

// One flat key=value config file drives every command; unset keys fall back
// to the baked-in defaults and command-line flags override file keys.  The
// resolved map (defaults + file + flags) is echoed into the output directory
// so runs can be reproduced bit-exactly.
class ExperimentConfig {
public:
    ExperimentConfig();  // defaults only

    static ExperimentConfig from_file(const std::string& path);
    static ExperimentConfig from_keys(const std::map<std::string, std::string>& keys);

    void set(const std::string& key, const std::string& value);  // throws on unknown key
    const std::string& get(const std::string& key) const;
    bool has(const std::string& key) const;  // nonempty value

    long long get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<int> get_int_list(const std::string& key) const;
    std::vector<double> get_double_list(const std::string& key) const;

    NetworkConfig network_config() const;  // normalized for the configured mode
    TrainConfig train_config() const;
    SyntheticConfig synthetic_config() const;
    EvalOptions eval_options() const;

    // Sorted `key=value` echo of the fully resolved configuration.
    void write_resolved(const std::string& path) const;

    const std::map<std::string, std::string>& keys() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

struct FlagOverrides {
    std::optional<std::string> config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> mode;
    bool zero_source_context = false;
    bool inject_fault = false;  // gradcheck only (test hook)
};

ExperimentConfig resolve_config(const FlagOverrides& flags);

// Subcommand bodies.  Each returns the process exit code and reports
// failures by throwing crossrec::Error (the CLI prints the final ERROR line).
int cmd_synth(const ExperimentConfig& cfg);
int cmd_train(const ExperimentConfig& cfg);
int cmd_evaluate(const ExperimentConfig& cfg);
int cmd_ablate(const ExperimentConfig& cfg);
int cmd_sweep_lambda(const ExperimentConfig& cfg);
int cmd_gradcheck(const ExperimentConfig& cfg, bool inject_fault);

// Shared machinery, exposed for tests and the acceptance suite.
struct LoadedData {
    std::shared_ptr<const InteractionCorpus> corpus;
    FeatureMatrix target_features;
    FeatureMatrix source_features;
};

LoadedData load_data(const ExperimentConfig& cfg);
SplitCorpus load_or_create_split(const ExperimentConfig& cfg, const LoadedData& data,
                                 const std::string& manifest_path);

struct RunOutcome {
    Mode mode = Mode::ACDN;
    std::uint64_t seed = 0;
    double lambda = 0.0;
    bool failed = false;
    std::string error;           // `Name: detail` when failed
    EvalReport report;
    TrainHistory history;
    std::vector<double> mean_abs_h;   // per coupled transition, final params
    double mean_abs_h_total = 0.0;    // over every cross-matrix entry
};

// Trains and evaluates one configuration on an already-loaded split; used by
// ablate, sweep-lambda, and the acceptance experiments.
RunOutcome run_single(const ExperimentConfig& cfg, const LoadedData& data,
                      const SplitCorpus& split, Mode mode, std::uint64_t seed,
                      double lambda);

// Executes jobs with `threads` workers (sequential when threads <= 1);
// results keep job order regardless of scheduling.
std::vector<RunOutcome> run_jobs(const ExperimentConfig& cfg, const LoadedData& data,
                                 const SplitCorpus& split,
                                 const std::vector<RunOutcome>& jobs_requested,
                                 int threads);

}  // namespace crossrec::cli
