// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only if all pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "deconfbc/baselines.hpp"
#include "deconfbc/error.hpp"
#include "deconfbc/pipeline.hpp"
#include "deconfbc/random.hpp"

using namespace deconfbc;
using Eigen::Index;
using Eigen::VectorXd;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Tolerances.
constexpr double kTreatmentMse = 0.10;
constexpr double kRuntimeSeconds = 600.0;
constexpr double kLatentAligned = 0.05;
constexpr double kLatentFraction = 0.25;
constexpr double kCiAbsolute = 0.1;
constexpr double kGradTol = 1e-4;
constexpr double kGradEps = 1e-5;
constexpr double kExampleTol = 1e-9;
constexpr double kMomentTol = 1e-10;
constexpr int kPropertyCases = 1000;
constexpr int kAblationSeeds = 5;
constexpr int kSynthLocations = 100;
constexpr int kSynthT = 1000;
constexpr double kGamma = 1.0;

struct Line {
    int id;
    bool pass;
    std::string text;
};

std::vector<Line> g_lines;

void report(int id, bool pass, const std::string& text)
{
    g_lines.push_back({id, pass, text});
    std::printf("criterion %d %s: %s\n", id, pass ? "PASS" : "FAIL", text.c_str());
    std::fflush(stdout);
}

std::string fmt(double v)
{
    std::ostringstream s;
    s.precision(6);
    s << v;
    return s.str();
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

PipelineConfig synthetic_config(const fs::path& out, std::uint64_t seed)
{
    PipelineConfig c;
    c.seed = seed;
    c.dataset.synthetic = true;
    c.dataset.synth.n_locations = kSynthLocations;
    c.dataset.synth.T = kSynthT;
    c.dataset.synth.gamma = kGamma;
    c.output_dir = out;
    return c;
}

/// Runs every stage, reusing a finished run of the same config.
double run_pipeline(const PipelineConfig& c)
{
    const fs::path done = c.output_dir / "metrics.json";
    if (fs::exists(done) && fs::exists(c.output_dir / "config.json") &&
        json::parse(slurp(c.output_dir / "config.json")).dump() == json::parse(config_to_json(c)).dump())
        return -1.0;
    fs::remove_all(c.output_dir);
    const auto t0 = std::chrono::steady_clock::now();
    run_all(c, true);
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

VectorXd vec(std::initializer_list<double> v) { return Eigen::Map<const VectorXd>(v.begin(), static_cast<Index>(v.size())); }

bool nondecreasing(const VectorXd& v)
{
    for (Index i = 1; i < v.size(); ++i)
        if (v(i) < v(i - 1) - 1e-12 * std::max(1.0, std::abs(v(i))))
            return false;
    return true;
}

VectorXd random_sample(Rng& rng, Index n)
{
    VectorXd v(n);
    const auto shape = rng.below(4);
    const double scale = rng.uniform(0.1, 5.0), loc = rng.uniform(-3.0, 3.0);
    for (Index i = 0; i < n; ++i) {
        const double z = rng.normal();
        switch (shape) {
        case 0: v(i) = loc + scale * z; break;
        case 1: v(i) = loc + scale * std::exp(0.5 * z); break;
        case 2: v(i) = loc + scale * rng.uniform(); break;
        default: v(i) = loc + scale * std::round(2.0 * z); break;
        }
    }
    return v;
}

double population_std(const VectorXd& v) { return std::sqrt((v.array() - v.mean()).square().mean()); }

void baseline_criterion()
{
    double worst_example = 0.0;
    auto example = [&](double got, double want) { worst_example = std::max(worst_example, std::abs(got - want)); };

    const CalibrationPair ls{vec({2, 4}), vec({3, 9})};
    const VectorXd mult = linear_scaling(ls, vec({1, 5}), ScalingMode::Multiplicative);
    example(mult(0), 2.0);
    example(mult(1), 10.0);
    const VectorXd add = linear_scaling(ls, vec({1, 5}), ScalingMode::Additive);
    example(add(0), 4.0);
    example(add(1), 8.0);
    const VectorXd vs = variance_scaling({vec({-1, 1}), vec({3, 7})}, vec({1, -1}));
    example(vs(0), 7.0);
    example(vs(1), 3.0);
    const CalibrationPair qm{vec({1, 2, 3, 4}), vec({2, 4, 6, 8})};
    for (Index nq : {4, 100}) {
        example(quantile_mapping(qm, vec({2.5}), nq)(0), 5.0);
        example(quantile_mapping(qm, vec({10}), nq)(0), 14.0);
    }
    const VectorXd qdm = quantile_delta_mapping(qm.model_train, qm.obs_train, qm.model_train, ScalingMode::Additive, 4);
    example(qdm(2), 6.0);

    Rng rng(20240601);
    double worst_moment = 0.0;
    for (int trial = 0; trial < kPropertyCases; ++trial) {
        VectorXd m = random_sample(rng, 2 + static_cast<Index>(rng.below(300)));
        m(0) += 1.0;
        const VectorXd o = random_sample(rng, 1 + static_cast<Index>(rng.below(300)));
        const VectorXd out = variance_scaling({m, o}, m);
        worst_moment = std::max({worst_moment, std::abs(out.mean() - o.mean()),
                                 std::abs(population_std(out) - population_std(o))});
    }

    int qm_ok = 0, qdm_ok = 0;
    for (int trial = 0; trial < kPropertyCases; ++trial) {
        const VectorXd m = random_sample(rng, 2 + static_cast<Index>(rng.below(300)));
        const VectorXd o = random_sample(rng, 2 + static_cast<Index>(rng.below(300)));
        VectorXd e(200);
        const double lo = m.minCoeff() - 1.0, hi = m.maxCoeff() + 1.0;
        for (Index i = 0; i < e.size(); ++i)
            e(i) = rng.uniform(lo, hi);
        std::sort(e.data(), e.data() + e.size());
        qm_ok += nondecreasing(quantile_mapping({m, o}, e, 2 + static_cast<Index>(rng.below(120))));
    }
    for (int trial = 0; trial < kPropertyCases; ++trial) {
        const bool is_mult = trial % 2 == 1;
        VectorXd hist = random_sample(rng, 2 + static_cast<Index>(rng.below(300)));
        VectorXd obs = random_sample(rng, 2 + static_cast<Index>(rng.below(300)));
        if (is_mult) {
            hist = hist.array().abs() + 0.05;
            obs = obs.array().abs() + 0.05;
        }
        const double s = is_mult ? rng.uniform(0.3, 3.0) : rng.uniform(1.0, 3.0);
        const double b = is_mult ? 0.0 : rng.uniform(-2.0, 2.0);
        VectorXd proj = (s * hist).array() + b;
        std::sort(proj.data(), proj.data() + proj.size());
        const auto kind = is_mult ? ScalingMode::Multiplicative : ScalingMode::Additive;
        qdm_ok += nondecreasing(
            quantile_delta_mapping(hist, obs, proj, kind, 2 + static_cast<Index>(rng.below(120))));
    }
    const bool pass = worst_example <= kExampleTol && worst_moment <= kMomentTol && qm_ok == kPropertyCases &&
                      qdm_ok == kPropertyCases;
    report(6, pass,
           "worked examples max error " + fmt(worst_example) + " (<= " + fmt(kExampleTol) +
               "), variance-scaling moment error " + fmt(worst_moment) + " (<= " + fmt(kMomentTol) +
               "), QM monotone " + std::to_string(qm_ok) + "/" + std::to_string(kPropertyCases) + ", QDM monotone " +
               std::to_string(qdm_ok) + "/" + std::to_string(kPropertyCases));
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Acceptance checks on synthetic runs"};
    std::string out_dir = "acceptance_runs";
    app.add_option("--out", out_dir, "Directory for the pipeline runs");
    CLI11_PARSE(app, argc, argv);
    const fs::path root = out_dir;

    try {
        // Main run, also the first ablation seed.
        const PipelineConfig main_cfg = synthetic_config(root / "seed_1", 1);
        fs::remove_all(main_cfg.output_dir);
        const double seconds = run_pipeline(main_cfg);
        const json diag = read_json(main_cfg.output_dir / "diagnostics.json");
        const json metrics = read_json(main_cfg.output_dir / "metrics.json");

        const double tm = diag.at("treatment_mse_test").get<double>();
        report(1, tm <= kTreatmentMse && seconds <= kRuntimeSeconds,
               "held-out treatment MSE " + fmt(tm) + " (<= " + fmt(kTreatmentMse) + "), no-latent ablation " +
                   fmt(diag.at("treatment_mse_test_no_z").get<double>()) + ", full run " + fmt(seconds) +
                   " s (<= " + fmt(kRuntimeSeconds) + ")");

        const double aligned = diag.at("latent_recovery_aligned").get<double>();
        const double fraction = diag.at("latent_unexplained_fraction").get<double>();
        report(2, aligned <= kLatentAligned && fraction <= kLatentFraction,
               "aligned latent error " + fmt(aligned) + " (<= " + fmt(kLatentAligned) + "), fraction of Var(z_true) " +
                   fmt(fraction) + " (<= " + fmt(kLatentFraction) + "), Var(z_true) " +
                   fmt(diag.at("latent_var_true").get<double>()));

        double with_z = metrics.at("deconfounding_bc").at("mse").get<double>();
        double without_z = metrics.at("deconfounding_bc_no_z").at("mse").get<double>();
        std::string per_seed = "seed 1: " + fmt(with_z) + " vs " + fmt(without_z);
        for (int s = 2; s <= kAblationSeeds; ++s) {
            const PipelineConfig cfg = synthetic_config(root / ("seed_" + std::to_string(s)), static_cast<std::uint64_t>(s));
            run_pipeline(cfg);
            const json m = read_json(cfg.output_dir / "metrics.json");
            const double a = m.at("deconfounding_bc").at("mse").get<double>();
            const double b = m.at("deconfounding_bc_no_z").at("mse").get<double>();
            with_z += a;
            without_z += b;
            per_seed += "; seed " + std::to_string(s) + ": " + fmt(a) + " vs " + fmt(b);
        }
        with_z /= kAblationSeeds;
        without_z /= kAblationSeeds;
        report(3, with_z < without_z,
               "mean test MSE with Z " + fmt(with_z) + " vs without " + fmt(without_z) + ", margin " +
                   fmt(without_z - with_z) + " (" + per_seed + ")");

        const double ci = diag.at("ci_score_val").get<double>();
        const double ci0 = diag.at("ci_score_val_no_z").get<double>();
        report(4, ci < ci0 && ci < kCiAbsolute,
               "validation CI score with Z " + fmt(ci) + " vs without " + fmt(ci0) + " (with < without, with < " +
                   fmt(kCiAbsolute) + ")");

        // Gradients of the trained default-size models on real windows.
        const auto t0 = std::chrono::steady_clock::now();
        const SplitResult split = load_run_split(main_cfg);
        const auto val_windows = make_windows(split.val, main_cfg.window, main_cfg.stride);
        const std::vector<TrajectoryWindow> batch(val_windows.begin(), val_windows.begin() + 8);
        const FactorModel factor = load_factor_model(main_cfg.output_dir / "factor_model.json");
        const FactorModel factor0 = load_factor_model(main_cfg.output_dir / "factor_no_z.json");
        const CorrectorModel corr = load_corrector(main_cfg.output_dir / "corrector.json");
        const CorrectorModel corr0 = load_corrector(main_cfg.output_dir / "corrector_no_z.json");
        const double g_f = grad_check(factor, batch, kGradEps);
        const double g_f0 = grad_check(factor0, batch, kGradEps);
        const double g_c = corrector_grad_check(corr, corrector_examples(batch, &factor, true), kGradEps);
        const double g_c0 = corrector_grad_check(corr0, corrector_examples(batch, nullptr, false), kGradEps);
        const double g_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        report(5, std::max({g_f, g_f0, g_c, g_c0}) < kGradTol,
               "max relative gradient error: factor " + fmt(g_f) + ", factor without Z " + fmt(g_f0) + ", corrector " +
                   fmt(g_c) + ", corrector without Z " + fmt(g_c0) + " (< " + fmt(kGradTol) + " at epsilon " +
                   fmt(kGradEps) + ", " + fmt(g_secs) + " s)");

        baseline_criterion();

        // Additive update over the full test set.
        const auto scale = outcome_scale(split.test);
        double worst = 0.0;
        long rows = 0, exact = 0;
        for (const auto& ev : evaluation_windows(split.test, main_cfg.window)) {
            for (const auto& r : correct_windows(corr, &factor, ev.windows, scale, false)) {
                const VectorXd sum = r.y_g_raw + r.delta_pred;
                worst = std::max(worst, (r.y_corrected - r.y_g_raw - r.delta_pred).cwiseAbs().maxCoeff());
                for (Index i = 0; i < sum.size(); ++i)
                    exact += r.y_corrected(i) == sum(i);
                rows += sum.size();
            }
        }
        report(7, rows > 0 && exact == rows,
               std::to_string(exact) + "/" + std::to_string(rows) +
                   " test predictions equal y_g_raw + delta_pred exactly; max |y_corrected - y_g_raw - delta_pred| " +
                   fmt(worst));

        // Determinism: an independent second run of the main config.
        PipelineConfig again = main_cfg;
        again.output_dir = root / "seed_1_repeat";
        fs::remove_all(again.output_dir);
        run_pipeline(again);
        const bool same = slurp(main_cfg.output_dir / "metrics.json") == slurp(again.output_dir / "metrics.json");
        report(8, same, std::string("metrics.json of two runs with seed 1 ") + (same ? "byte-equal" : "differ"));
    } catch (const Error& e) {
        std::fprintf(stderr, "error %s: %s\n", code_name(e.code()), e.what());
        return 2;
    }

    const long passed = std::count_if(g_lines.begin(), g_lines.end(), [](const Line& l) { return l.pass; });
    std::printf("%ld/8 criteria passed\n", passed);
    return passed == 8 ? 0 : 1;
}
