#include <doctest.h>

#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "deconfbc/error.hpp"
#include "deconfbc/pipeline.hpp"
#include "test_util.hpp"

using namespace deconfbc;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

ErrorCode code_of(const std::function<void()>& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return ErrorCode::InvalidArgument;
}

/// A run small enough to finish in seconds.
PipelineConfig tiny_config(const fs::path& out, std::uint64_t seed)
{
    const std::string text = R"({
        "dataset": {"synthetic": {"n_locations": 6, "T": 160}},
        "window": {"h": 12, "w": 6, "k": 3, "stride": 6},
        "factor": {"d_z": 2, "d_hidden": 6, "head_hidden": 4, "epochs": 3, "batch_size": 16},
        "corrector": {"d_model": 8, "n_heads": 2, "epochs": 3, "batch_size": 16},
        "split": {"train": 0.5, "val": 0.25, "test": 0.25},
        "baseline": {"n_quantiles": 20}
    })";
    return config_from_json(text, {{"seed", std::to_string(seed)}, {"output_dir", json(out.string()).dump()}});
}

}  // namespace

TEST_CASE("defaults round-trip through canonical JSON")
{
    const PipelineConfig d;
    const std::string text = config_to_json(d);
    const PipelineConfig back = config_from_json(text);
    CHECK(config_to_json(back) == text);
    CHECK(config_hash(back) == config_hash(d));
    CHECK(config_hash(d).size() == 16);
    CHECK(config_violations(d).empty());
    CHECK(d.window.h == 36);
    CHECK(d.window.w == 12);
    CHECK(d.window.k == 3);
    CHECK(d.corrector.d_model == 32);
    CHECK(d.corrector.n_heads == 4);
}

TEST_CASE("dotted overrides replace values and change the hash")
{
    const PipelineConfig base = config_from_json("{}");
    const PipelineConfig c = config_from_json("{}", {{"factor.lr", "0.003"},
                                                     {"corrector.model_kind", "linear"},
                                                     {"dataset.synthetic.gamma", "0.5"},
                                                     {"seed", "42"}});
    CHECK(c.factor.lr == 0.003);
    CHECK(c.corrector.model_kind == CorrectorKind::Linear);
    CHECK(c.dataset.synth.gamma == 0.5);
    CHECK(c.seed == 42);
    CHECK(config_hash(c) != config_hash(base));

    const PipelineConfig seeded = with_stage_seeds(c);
    CHECK(seeded.factor.seed != seeded.corrector.seed);
    CHECK(seeded.dataset.synth.seed != seeded.factor.seed);
    CHECK(with_stage_seeds(c).factor.seed == seeded.factor.seed);
}

TEST_CASE("invalid documents report every violation at once")
{
    try {
        config_from_json(R"({"window": {"h": 0}, "corrector": {"d_model": 30, "n_heads": 4}, "bogus": 1})");
        FAIL("expected ConfigInvalid");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ConfigInvalid);
        const std::string what = e.what();
        CHECK(what.find("bogus") != std::string::npos);
        CHECK(what.find("n_heads") != std::string::npos);
        CHECK(what.find("window.h") != std::string::npos);
    }
    CHECK(code_of([] { config_from_json("{not json"); }) == ErrorCode::ConfigInvalid);
    CHECK(code_of([] { config_from_json(R"({"factor": {"lr": "fast"}})"); }) == ErrorCode::ConfigInvalid);
    CHECK(code_of([] { config_from_json(R"({"split": {"train": 0.9, "val": 0.2, "test": 0.1}})"); }) ==
          ErrorCode::ConfigInvalid);
    CHECK(code_of([] { load_config("/nonexistent/config.json"); }) == ErrorCode::ConfigPath);
}

TEST_CASE("a missing dataset manifest is a path error")
{
    const auto dir = testutil::temp_dir("pipe_manifest");
    const PipelineConfig c =
        config_from_json(R"({"dataset": {"manifest": "/nonexistent/manifest.json"}})",
                         {{"output_dir", json(dir.string()).dump()}});
    CHECK_FALSE(c.dataset.synthetic);
    CHECK(code_of([&] { load_run_dataset(c); }) == ErrorCode::ConfigPath);
    CHECK(exit_status(ErrorCode::ConfigPath) == 2);
}

TEST_CASE("evaluation windows tile the test rows with stride k")
{
    const auto ds = testutil::random_dataset(2, 40, 3, 1);
    const WindowSpec spec{6, 4, 3};
    const auto ev = evaluation_windows(ds, spec);
    REQUIRE(ev.size() == 2);
    const auto& ws = ev[0].windows;
    REQUIRE(ws.size() >= 2);
    for (std::size_t i = 1; i < ws.size(); ++i)
        CHECK(ws[i].anchor_row - ws[i - 1].anchor_row == 3);
    CHECK(ws.front().anchor_row == spec.h + spec.w - 1);
    CHECK(ws.back().anchor_row + spec.k <= 39);
}

TEST_CASE("generation is byte-identical across runs")
{
    const auto a = testutil::temp_dir("pipe_gen_a"), b = testutil::temp_dir("pipe_gen_b");
    const auto fa = run_generate(tiny_config(a, 3), true);
    const auto fb = run_generate(tiny_config(b, 3), true);
    REQUIRE(fa.size() == fb.size());
    REQUIRE(fa.size() > 0);
    for (std::size_t i = 0; i < fa.size(); ++i) {
        CHECK(fa[i].filename() == fb[i].filename());
        // config and run manifests record the output directory
        if (fa[i].filename() != "config.json" && fa[i].filename() != "run_manifest.json")
            CHECK(slurp(fa[i]) == slurp(fb[i]));
    }
}

TEST_CASE("later stages require earlier artifacts")
{
    const auto dir = testutil::temp_dir("pipe_order");
    CHECK(code_of([&] { run_split(tiny_config(dir, 1), true); }) == ErrorCode::IoFailure);
}

TEST_CASE("full tiny run is deterministic and fully recorded")
{
    const auto a = testutil::temp_dir("pipe_run_a"), b = testutil::temp_dir("pipe_run_b");
    run_all(tiny_config(a, 5), true);
    run_all(tiny_config(b, 5), true);
    CHECK(slurp(a / "metrics.json") == slurp(b / "metrics.json"));
    CHECK(slurp(a / "diagnostics.json") == slurp(b / "diagnostics.json"));

    const json metrics = json::parse(slurp(a / "metrics.json"));
    for (const char* label : {"raw_gcm", "linear_scaling", "variance_scaling", "quantile_mapping",
                              "quantile_delta_mapping", "deconfounding_bc", "deconfounding_bc_no_z"}) {
        REQUIRE(metrics.contains(label));
        const json& m = metrics.at(label);
        CHECK(m.at("mse").get<double>() >= 0.0);
        CHECK(m.at("mae").get<double>() >= 0.0);
        CHECK(m.at("mae").get<double>() * m.at("mae").get<double>() <= m.at("mse").get<double>() * (1 + 1e-12));
        CHECK(m.at("n").get<long>() > 0);
    }
    const long n = metrics.at("raw_gcm").at("n").get<long>();
    for (const auto& [label, m] : metrics.items())
        CHECK(m.at("n").get<long>() == n);

    const json manifest = json::parse(slurp(a / "run_manifest.json"));
    CHECK(manifest.at("config_hash").get<std::string>() == config_hash(tiny_config(a, 5)));
    std::set<std::string> listed;
    for (const auto& p : manifest.at("artifacts"))
        listed.insert(p.get<std::string>());
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file() || entry.path().filename() == "run_manifest.json")
            continue;
        CHECK_MESSAGE(listed.count(fs::relative(entry.path(), a).generic_string()) == 1,
                      entry.path().string());
    }
    for (const char* stage : {"generate", "split", "train-factor", "infer-z", "train-corrector", "correct",
                              "evaluate", "report"})
        CHECK(manifest.at("stages").contains(stage));
    CHECK(slurp(a / "report.md").find("Deconfounding BC") != std::string::npos);
}

TEST_CASE("correction CSV satisfies the additive update")
{
    const auto dir = testutil::temp_dir("pipe_correct");
    const PipelineConfig c = tiny_config(dir, 7);
    run_all(c, true);
    const auto ds = load_run_split(c);
    const auto scale = outcome_scale(ds.test);
    const FactorModel factor = load_factor_model(dir / "factor_model.json");
    const CorrectorModel corr = load_corrector(dir / "corrector.json");
    for (const auto& ev : evaluation_windows(ds.test, c.window)) {
        const auto res = correct_windows(corr, &factor, ev.windows, scale, false);
        REQUIRE(res.size() == ev.windows.size());
        for (const auto& r : res)
            CHECK((r.y_corrected - (r.y_g_raw + r.delta_pred)).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("linear corrector without latents beats the zero delta on validation")
{
    SynthConfig sc;
    sc.n_locations = 10;
    sc.T = 500;
    sc.seed = 11;
    const SplitResult sp = split_dataset(generate(sc).data, {0.6, 0.2, 0.2}, SplitMode::ByLocation, 12);
    const WindowSpec spec{36, 12, 3};
    const auto train = corrector_examples(make_windows(sp.train, spec, 6), nullptr, false);
    const auto val = corrector_examples(make_windows(sp.val, spec, 6), nullptr, false);
    CorrectorConfig c;
    c.model_kind = CorrectorKind::Linear;
    c.use_z = false;
    c.seed = 13;
    c.epochs = 30;
    const auto res = train_corrector(train, val, c);
    double zero = 0.0;
    for (const auto& ex : val)
        zero += ex.target.squaredNorm() / static_cast<double>(ex.target.size());
    zero /= static_cast<double>(val.size());
    CHECK(corrector_loss(res.model, val) < zero);
}
