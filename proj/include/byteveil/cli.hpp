#ifndef BYTEVEIL_CLI_HPP
#define BYTEVEIL_CLI_HPP

#include "byteveil/attack.hpp"
#include "byteveil/eval.hpp"
#include "byteveil/malconv.hpp"
#include "byteveil/train.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace byteveil {

/// Exit statuses shared by every subcommand.
enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitUsage = 2, kExitInfeasible = 3 };

/// Every experiment knob. JSON config files carry exactly these fields.
struct RunConfig {
    Hyper hyper;
    TrainConfig train;
    std::uint64_t seed = 1;
    std::size_t q_max = 2048;
    std::size_t max_iterations = 20;
    std::vector<std::size_t> budgets = {256, 512, 1024, 2048};
    Refresh refresh = Refresh::PerIteration;

    static RunConfig desk();
    static RunConfig paper();
    static RunConfig profile(const std::string& name);

    /// Overlays the fields present in `j` onto this config. Unknown keys or
    /// wrong types throw InvalidConfig.
    void merge_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    void validate() const;
};

std::vector<std::size_t> parse_budget_list(const std::string& text);

/// Evaluates every checkpoint matching `model` (a file, or the prefix of
/// `<prefix>.<split>` files) on its held-out split of the corpus.
std::vector<SplitEvaluation> evaluate_models(const std::string& model,
                                             const std::string& corpus_dir,
                                             const EvaluationPlan& plan, std::uint64_t seed);

/// Entry point behind the `byteveil` executable:
///   gen-corpus | train | classify | attack | evaluate
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);

} // namespace byteveil

#endif
