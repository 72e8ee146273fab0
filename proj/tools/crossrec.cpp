#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "crossrec/error.hpp"
#include "crossrec/experiment.hpp"

using crossrec::cli::ExperimentConfig;
using crossrec::cli::FlagOverrides;

namespace {

void add_common_flags(CLI::App* cmd, FlagOverrides& flags, std::string& config,
                      std::string& out, std::string& mode, std::uint64_t& seed) {
    cmd->add_option("--config", config, "flat key=value config file");
    cmd->add_option("--seed", seed, "overrides the config seed");
    cmd->add_option("--out", out, "output directory");
    cmd->add_option("--mode", mode,
                    "network mode (ACDN, ACDN_NO_L1, CDN, MLP, MLPPP, CSN_SCALAR)");
    cmd->add_flag("--zero-source-context", flags.zero_source_context,
                  "rank with all-zero source activations instead of the "
                  "per-user source context");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"crossrec: coupled two-domain implicit-feedback recommender"};
    app.require_subcommand(1);

    struct SubcommandState {
        FlagOverrides flags;
        std::string config, out, mode;
        std::uint64_t seed = 0;
        CLI::App* cmd = nullptr;
    };
    std::map<std::string, SubcommandState> subs;
    const char* names[] = {"synth",  "train",        "evaluate",
                           "ablate", "sweep-lambda", "gradcheck"};
    const char* descs[] = {
        "generate a synthetic two-domain corpus with feature tables",
        "train a model and write checkpoint/history/manifest",
        "rank held-out items from a checkpoint and write the report",
        "train and evaluate each configured mode on one shared split",
        "train ACDN across the lambda list on one shared split",
        "finite-difference check of the analytic gradients"};
    for (int k = 0; k < 6; ++k) {
        auto& st = subs[names[k]];
        st.cmd = app.add_subcommand(names[k], descs[k]);
        add_common_flags(st.cmd, st.flags, st.config, st.out, st.mode, st.seed);
    }
    bool inject_fault = false;
    subs["gradcheck"].cmd->add_flag("--inject-fault", inject_fault,
                                    "corrupt one H gradient (self-test hook)");

    CLI11_PARSE(app, argc, argv);

    try {
        for (auto& [name, st] : subs) {
            if (!st.cmd->parsed()) continue;
            if (!st.config.empty()) st.flags.config_path = st.config;
            if (!st.out.empty()) st.flags.out = st.out;
            if (!st.mode.empty()) st.flags.mode = st.mode;
            if (st.cmd->count("--seed") > 0) st.flags.seed = st.seed;
            ExperimentConfig cfg = crossrec::cli::resolve_config(st.flags);
            if (name == "synth") return crossrec::cli::cmd_synth(cfg);
            if (name == "train") return crossrec::cli::cmd_train(cfg);
            if (name == "evaluate") return crossrec::cli::cmd_evaluate(cfg);
            if (name == "ablate") return crossrec::cli::cmd_ablate(cfg);
            if (name == "sweep-lambda") return crossrec::cli::cmd_sweep_lambda(cfg);
            if (name == "gradcheck")
                return crossrec::cli::cmd_gradcheck(cfg, inject_fault);
        }
    } catch (const crossrec::Error& e) {
        std::cout << "ERROR " << e.name() << ": "
                  << std::string(e.what()).substr(e.name().size() + 2) << std::endl;
        return 1;
    } catch (const std::exception& e) {
        std::cout << "ERROR Internal: " << e.what() << std::endl;
        return 1;
    }
    return 1;
}
