#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "deconfbc/error.hpp"
#include "deconfbc/pipeline.hpp"

namespace fs = std::filesystem;
using namespace deconfbc;

namespace {

/// Turns leftover `--a.b value` and `--a.b=value` arguments into config overrides.
Overrides parse_overrides(const std::vector<std::string>& extras)
{
    Overrides out;
    for (std::size_t i = 0; i < extras.size(); ++i) {
        const std::string& arg = extras[i];
        if (arg.rfind("--", 0) != 0 || arg.size() <= 2)
            throw Error(ErrorCode::ConfigInvalid, "unexpected argument '" + arg + "'");
        std::string key = arg.substr(2);
        const auto eq = key.find('=');
        if (eq != std::string::npos) {
            out.emplace_back(key.substr(0, eq), key.substr(eq + 1));
            continue;
        }
        if (key.find('.') == std::string::npos && key != "seed" && key != "output_dir")
            throw Error(ErrorCode::ConfigInvalid, "unknown option '" + arg + "'");
        if (i + 1 >= extras.size())
            throw Error(ErrorCode::ConfigInvalid, "override '" + arg + "' needs a value");
        out.emplace_back(key, extras[++i]);
    }
    return out;
}

struct GlobalFlags {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool quiet = false;
};

PipelineConfig resolve_config(const GlobalFlags& g, Overrides overrides)
{
    if (g.seed_set)
        overrides.emplace_back("seed", std::to_string(g.seed));
    if (!g.out.empty())
        overrides.emplace_back("output_dir", "\"" + g.out + "\"");
    if (!g.config.empty())
        return load_config(g.config, overrides);
    const fs::path saved = fs::path(g.out.empty() ? "run" : g.out) / "config.json";
    if (fs::exists(saved))
        return load_config(saved, overrides);
    return config_from_json("", overrides);
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Deconfounded bias correction of climate-model output"};
    app.require_subcommand(1);
    app.allow_extras();
    GlobalFlags g;
    app.add_option("--config", g.config, "Pipeline config (JSON)");
    app.add_option("--out", g.out, "Run directory");
    auto* seed_opt = app.add_option("--seed", g.seed, "Master seed");
    app.add_flag("--quiet", g.quiet, "Suppress progress output");

    using Stage = std::function<Artifacts(const PipelineConfig&, bool)>;
    const std::vector<std::tuple<std::string, std::string, Stage>> stages = {
        {"generate", "Generate a synthetic two-source dataset", run_generate},
        {"split", "Partition locations or time and fit normalization", run_split},
        {"train-factor", "Train the factor model and its no-latent ablation", run_train_factor},
        {"infer-z", "Write inferred latents for every location", run_infer_z},
        {"train-corrector", "Train the delta forecaster with and without latents", run_train_corrector},
        {"correct", "Apply the learned correction to the test locations", run_correct},
        {"evaluate", "Score every method and write metrics and plot data", run_evaluate},
        {"report", "Print the method comparison table", run_report},
        {"run", "Run every stage in order", run_all},
    };
    std::map<CLI::App*, Stage> handlers;
    for (const auto& [name, help, fn] : stages) {
        auto* sub = app.add_subcommand(name, help);
        sub->allow_extras()->fallthrough();
        handlers[sub] = fn;
    }
    std::string method;
    auto* baseline = app.add_subcommand("baseline", "Apply one classical baseline to the test locations");
    baseline->add_option("--method", method, "linear_scaling, variance_scaling, quantile_mapping, "
                                             "quantile_delta_mapping or all")
        ->required();
    baseline->allow_extras()->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        g.seed_set = seed_opt->count() > 0;
        CLI::App* sub = app.get_subcommands().front();
        std::vector<std::string> extras = sub->remaining();
        for (const auto& a : app.remaining(false))
            extras.push_back(a);
        const PipelineConfig config = resolve_config(g, parse_overrides(extras));
        if (sub == baseline) {
            if (method == "all") {
                for (const auto& m : baseline_methods())
                    run_baseline(config, m, g.quiet);
            } else {
                run_baseline(config, method, g.quiet);
            }
        } else {
            handlers.at(sub)(config, g.quiet);
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error %s: %s\n", code_name(e.code()), e.what());
        return exit_status(e.code());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error INTERNAL: %s\n", e.what());
        return 1;
    }
    return 0;
}
