#include "deconfbc/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "deconfbc/baselines.hpp"
#include "deconfbc/error.hpp"
#include "deconfbc/io.hpp"
#include "deconfbc/metrics.hpp"
#include "deconfbc/random.hpp"

namespace deconfbc {

namespace fs = std::filesystem;
using nlohmann::json;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kTraceOffset = 1e-6;

const char* to_string(SplitMode m) { return m == SplitMode::ByLocation ? "by_location" : "by_time"; }

json synth_to_json(const SynthConfig& s)
{
    return {{"n_locations", s.n_locations},   {"T", s.T},
            {"k_treatments", s.k_treatments}, {"p", s.p},
            {"r", s.r},                       {"gamma", s.gamma},
            {"noise_std", s.noise_std},       {"ar_modulus", s.ar_modulus},
            {"z_period_min", s.z_period_min}, {"z_period_max", s.z_period_max},
            {"x_period_min", s.x_period_min}, {"x_period_max", s.x_period_max},
            {"z_root_min", s.z_root_min},     {"z_root_max", s.z_root_max},
            {"x_root_max", s.x_root_max},     {"c_scale", s.c_scale},
            {"d_scale", s.d_scale},           {"d_coupling", s.d_coupling},
            {"e_scale", s.e_scale},           {"f_a_scale", s.f_a_scale},
            {"f_x_scale", s.f_x_scale},       {"jitter", s.jitter},
            {"burn_in", s.burn_in}};
}

json config_json(const PipelineConfig& c)
{
    json j;
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir.string();
    if (c.dataset.synthetic)
        j["dataset"] = {{"synthetic", synth_to_json(c.dataset.synth)}};
    else
        j["dataset"] = {{"manifest", c.dataset.manifest.string()}};
    j["window"] = {{"h", c.window.h}, {"w", c.window.w}, {"k", c.window.k}, {"stride", c.stride}};
    const auto& f = c.factor;
    j["factor"] = {{"d_z", f.d_z},
                   {"d_hidden", f.d_hidden},
                   {"head_hidden", f.head_hidden},
                   {"x_lags", f.x_lags},
                   {"lr", f.lr},
                   {"epochs", f.epochs},
                   {"batch_size", f.batch_size},
                   {"grad_clip", f.grad_clip},
                   {"patience", f.patience}};
    const auto& r = c.corrector;
    j["corrector"] = {{"model_kind", to_string(r.model_kind)},
                      {"d_model", r.d_model},
                      {"n_heads", r.n_heads},
                      {"mlp_hidden", r.mlp_hidden},
                      {"lr", r.lr},
                      {"epochs", r.epochs},
                      {"batch_size", r.batch_size},
                      {"grad_clip", r.grad_clip},
                      {"patience", r.patience}};
    j["split"] = {{"mode", to_string(c.split.mode)},
                  {"train", c.split.fractions.train},
                  {"val", c.split.fractions.val},
                  {"test", c.split.fractions.test}};
    j["baseline"] = {{"n_quantiles", c.n_quantiles}};
    return j;
}

json parse_override_value(const std::string& v)
{
    try {
        return json::parse(v);
    } catch (const json::parse_error&) {
        return v;
    }
}

void set_dotted(json& doc, const std::string& key, const json& value)
{
    json* node = &doc;
    std::size_t start = 0;
    for (;;) {
        const std::size_t dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty())
            throw Error(ErrorCode::ConfigInvalid, "malformed override key '" + key + "'");
        if (!node->is_object())
            *node = json::object();
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        start = dot + 1;
    }
}

/// Collects unknown keys of `doc` relative to the schema `ref`.
void unknown_keys(const json& doc, const json& ref, const std::string& prefix, std::vector<std::string>& out)
{
    if (!doc.is_object())
        return;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!ref.contains(it.key()))
            out.push_back("unknown key '" + path + "'");
        else if (ref.at(it.key()).is_object())
            unknown_keys(it.value(), ref.at(it.key()), path, out);
    }
}

class Reader {
public:
    explicit Reader(std::vector<std::string>& errors) : errors_(errors) {}

    template <class T>
    void get(const json& obj, const std::string& path, const char* key, T& out)
    {
        if (!obj.is_object() || !obj.contains(key))
            return;
        try {
            const json& v = obj.at(key);
            if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean())
                    throw std::invalid_argument("expected a boolean");
            } else if constexpr (std::is_integral_v<T>) {
                if (!v.is_number_integer())
                    throw std::invalid_argument("expected an integer");
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v.is_number())
                    throw std::invalid_argument("expected a number");
            } else {
                if (!v.is_string())
                    throw std::invalid_argument("expected a string");
            }
            out = v.get<T>();
        } catch (const std::exception& e) {
            errors_.push_back(path + "." + key + ": " + e.what());
        }
    }

private:
    std::vector<std::string>& errors_;
};

void check(std::vector<std::string>& errs, bool ok, const std::string& msg)
{
    if (!ok)
        errs.push_back(msg);
}

std::string join(const std::vector<std::string>& parts, const char* sep)
{
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i)
        out += (i ? sep : "") + parts[i];
    return out;
}

void log(bool quiet, const char* fmt, const std::string& arg)
{
    if (!quiet)
        std::fprintf(stderr, fmt, arg.c_str());
}

fs::path out_path(const PipelineConfig& c, const fs::path& rel) { return c.output_dir / rel; }

fs::path require(const PipelineConfig& c, const fs::path& rel, const char* stage)
{
    const fs::path p = out_path(c, rel);
    if (!fs::exists(p))
        throw Error(ErrorCode::IoFailure, "missing " + p.string() + "; run `" + stage + "` first");
    return p;
}

void ensure_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw Error(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    out << text;
}

json read_json(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::IoFailure, "cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::IoFailure, path.string() + ": " + e.what());
    }
}

/// Comma-separated table with a header row; numbers in canonical form.
void write_table(const fs::path& path, const std::vector<std::string>& header,
                 const std::vector<std::vector<double>>& rows)
{
    std::string text = join(header, ",") + "\n";
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size(); ++i)
            text += (i ? "," : "") + format_double(r[i]);
        text += "\n";
    }
    write_text(path, text);
}

bool clips_at_zero(const TwoSourceDataset& ds)
{
    return ds.meta[static_cast<std::size_t>(ds.outcome_index())].transform == Transform::Log1pZScore;
}

ScalingMode baseline_mode(const TwoSourceDataset& ds)
{
    return clips_at_zero(ds) ? ScalingMode::Multiplicative : ScalingMode::Additive;
}

std::vector<TrajectoryWindow> training_windows(const TwoSourceDataset& ds, const PipelineConfig& c)
{
    return make_windows(ds, c.window, c.stride);
}

void write_history(const fs::path& path, const TrainHistory& h)
{
    std::vector<std::int64_t> t;
    MatrixXd v(static_cast<Index>(h.train_loss.size()), 2);
    for (std::size_t e = 0; e < h.train_loss.size(); ++e) {
        t.push_back(static_cast<std::int64_t>(e));
        v(static_cast<Index>(e), 0) = h.train_loss[e];
        v(static_cast<Index>(e), 1) = h.val_loss[e];
    }
    write_csv(path, {"train_loss", "val_loss"}, t, v);
}

fs::path rel(const PipelineConfig& c, const fs::path& p) { return p.lexically_relative(c.output_dir); }

/// Native outcome values of the scored rows, with their timestamps.
struct ScoredRows {
    std::vector<std::int64_t> t;
    std::vector<double> y_g, y_o;
};

ScoredRows scored_rows(const TwoSourceDataset& test, const EvaluationWindow& ew, int k)
{
    ScoredRows out;
    const auto& loc = test.locations[static_cast<std::size_t>(ew.location)];
    const Index y = test.outcome_index();
    for (const auto& win : ew.windows)
        for (int i = 1; i <= k; ++i) {
            const Index r = win.anchor_row + i;
            out.t.push_back(loc.gcm.timestamps[static_cast<std::size_t>(r)]);
            out.y_g.push_back(loc.gcm.values(r, y));
            out.y_o.push_back(loc.obs.values(r, y));
        }
    return out;
}

VectorXd pooled_outcome(const TwoSourceDataset& ds, Source s)
{
    const Index y = ds.outcome_index();
    Index n = 0;
    for (const auto& loc : ds.locations)
        n += loc.gcm.steps();
    VectorXd out(n);
    Index at = 0;
    for (const auto& loc : ds.locations) {
        const auto& v = s == Source::G ? loc.gcm.values : loc.obs.values;
        out.segment(at, v.rows()) = v.col(y);
        at += v.rows();
    }
    return out;
}

VectorXd to_vector(const std::vector<double>& v) { return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size())); }

Index column_of(const CsvTable& t, const std::string& name, const fs::path& path)
{
    const auto it = std::find(t.columns.begin(), t.columns.end(), name);
    if (it == t.columns.end())
        throw Error(ErrorCode::IoFailure, path.string() + " has no column '" + name + "'");
    return static_cast<Index>(it - t.columns.begin());
}

double source_mean_ci(const MatrixXd& residuals, Index k)
{
    return 0.5 * (conditional_independence_score(residuals.leftCols(k)) +
                  conditional_independence_score(residuals.rightCols(k)));
}

/// Ground-truth latent files listed in a dataset manifest, keyed by location id.
std::map<std::string, fs::path> ground_truth_files(const fs::path& manifest)
{
    std::map<std::string, fs::path> out;
    const json j = read_json(manifest);
    for (const auto& loc : j.value("locations", json::array()))
        if (loc.contains("true_z"))
            out[loc.at("id").get<std::string>()] = manifest.parent_path() / loc.at("true_z").get<std::string>();
    return out;
}

fs::path dataset_manifest(const PipelineConfig& c)
{
    return c.dataset.synthetic ? out_path(c, "data/manifest.json") : c.dataset.manifest;
}

}  // namespace

std::string config_to_json(const PipelineConfig& config) { return config_json(config).dump(2) + "\n"; }

std::vector<std::string> config_violations(const PipelineConfig& c)
{
    std::vector<std::string> e;
    if (c.dataset.synthetic) {
        const auto& s = c.dataset.synth;
        check(e, s.n_locations >= 3, "dataset.synthetic.n_locations must be at least 3");
        check(e, s.T >= c.window.span(), "dataset.synthetic.T must cover one window of h + w + k steps");
        check(e, s.k_treatments >= 1, "dataset.synthetic.k_treatments must be positive");
        check(e, s.p >= 2 && s.T > s.p, "dataset.synthetic.p must be at least 2 and below T");
        check(e, s.r >= 1, "dataset.synthetic.r must be positive");
        check(e, s.gamma >= 0.0 && s.gamma <= 1.0, "dataset.synthetic.gamma must lie in [0, 1]");
        check(e, s.noise_std > 0.0, "dataset.synthetic.noise_std must be positive");
        check(e, s.burn_in >= 0, "dataset.synthetic.burn_in must be non-negative");
    } else {
        check(e, !c.dataset.manifest.empty(), "dataset.manifest must be set");
    }
    check(e, c.window.h >= 1 && c.window.w >= 1 && c.window.k >= 1, "window.h, window.w and window.k must be positive");
    check(e, c.stride >= 1, "window.stride must be positive");
    const auto& f = c.factor;
    check(e, f.d_z >= 1, "factor.d_z must be positive");
    check(e, f.d_hidden >= 1, "factor.d_hidden must be positive");
    check(e, f.head_hidden >= 1, "factor.head_hidden must be positive");
    check(e, f.x_lags >= 1, "factor.x_lags must be positive");
    check(e, f.lr > 0.0, "factor.lr must be positive");
    check(e, f.epochs >= 1, "factor.epochs must be positive");
    check(e, f.batch_size >= 1, "factor.batch_size must be positive");
    check(e, f.grad_clip > 0.0, "factor.grad_clip must be positive");
    check(e, f.patience >= 1, "factor.patience must be positive");
    const auto& r = c.corrector;
    check(e, r.d_model >= 1, "corrector.d_model must be positive");
    check(e, r.n_heads >= 1 && r.d_model % std::max(r.n_heads, 1) == 0,
          "corrector.n_heads must be positive and divide corrector.d_model");
    check(e, r.mlp_hidden >= 1, "corrector.mlp_hidden must be positive");
    check(e, r.lr > 0.0, "corrector.lr must be positive");
    check(e, r.epochs >= 1, "corrector.epochs must be positive");
    check(e, r.batch_size >= 1, "corrector.batch_size must be positive");
    check(e, r.grad_clip > 0.0, "corrector.grad_clip must be positive");
    check(e, r.patience >= 1, "corrector.patience must be positive");
    const auto& fr = c.split.fractions;
    check(e, fr.train > 0.0 && fr.val > 0.0 && fr.test > 0.0, "split fractions must all be positive");
    check(e, std::abs(fr.train + fr.val + fr.test - 1.0) <= 1e-9, "split fractions must sum to 1");
    check(e, c.n_quantiles >= 2, "baseline.n_quantiles must be at least 2");
    check(e, !c.output_dir.empty(), "output_dir must be set");
    return e;
}

PipelineConfig config_from_json(const std::string& text, const Overrides& overrides)
{
    json doc;
    try {
        doc = text.empty() ? json::object() : json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::ConfigInvalid, std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object())
        throw Error(ErrorCode::ConfigInvalid, "config must be a JSON object");
    for (const auto& [key, value] : overrides) {
        if (key.rfind("dataset.manifest", 0) == 0 && doc.contains("dataset"))
            doc["dataset"].erase("synthetic");
        if (key.rfind("dataset.synthetic", 0) == 0 && doc.contains("dataset"))
            doc["dataset"].erase("manifest");
        set_dotted(doc, key, parse_override_value(value));
    }

    PipelineConfig c;
    std::vector<std::string> errs;
    json schema = config_json(c);
    schema["dataset"]["manifest"] = "";
    unknown_keys(doc, schema, "", errs);

    Reader rd(errs);
    rd.get(doc, "", "seed", c.seed);
    std::string out_dir = c.output_dir.string();
    rd.get(doc, "", "output_dir", out_dir);
    c.output_dir = out_dir;

    if (doc.contains("dataset")) {
        const json& d = doc.at("dataset");
        const bool has_s = d.is_object() && d.contains("synthetic");
        const bool has_m = d.is_object() && d.contains("manifest");
        if (has_s == has_m)
            errs.push_back("dataset must name exactly one of 'synthetic' or 'manifest'");
        if (has_m) {
            c.dataset.synthetic = false;
            std::string m;
            rd.get(d, "dataset", "manifest", m);
            c.dataset.manifest = m;
        }
        if (has_s) {
            const json& s = d.at("synthetic");
            auto& sc = c.dataset.synth;
            const std::string p = "dataset.synthetic";
            rd.get(s, p, "n_locations", sc.n_locations);
            rd.get(s, p, "T", sc.T);
            rd.get(s, p, "k_treatments", sc.k_treatments);
            rd.get(s, p, "p", sc.p);
            rd.get(s, p, "r", sc.r);
            rd.get(s, p, "gamma", sc.gamma);
            rd.get(s, p, "noise_std", sc.noise_std);
            rd.get(s, p, "ar_modulus", sc.ar_modulus);
            rd.get(s, p, "z_period_min", sc.z_period_min);
            rd.get(s, p, "z_period_max", sc.z_period_max);
            rd.get(s, p, "x_period_min", sc.x_period_min);
            rd.get(s, p, "x_period_max", sc.x_period_max);
            rd.get(s, p, "z_root_min", sc.z_root_min);
            rd.get(s, p, "z_root_max", sc.z_root_max);
            rd.get(s, p, "x_root_max", sc.x_root_max);
            rd.get(s, p, "c_scale", sc.c_scale);
            rd.get(s, p, "d_scale", sc.d_scale);
            rd.get(s, p, "d_coupling", sc.d_coupling);
            rd.get(s, p, "e_scale", sc.e_scale);
            rd.get(s, p, "f_a_scale", sc.f_a_scale);
            rd.get(s, p, "f_x_scale", sc.f_x_scale);
            rd.get(s, p, "jitter", sc.jitter);
            rd.get(s, p, "burn_in", sc.burn_in);
        }
    }
    if (doc.contains("window")) {
        const json& w = doc.at("window");
        rd.get(w, "window", "h", c.window.h);
        rd.get(w, "window", "w", c.window.w);
        rd.get(w, "window", "k", c.window.k);
        rd.get(w, "window", "stride", c.stride);
    }
    if (doc.contains("factor")) {
        const json& f = doc.at("factor");
        rd.get(f, "factor", "d_z", c.factor.d_z);
        rd.get(f, "factor", "d_hidden", c.factor.d_hidden);
        rd.get(f, "factor", "head_hidden", c.factor.head_hidden);
        rd.get(f, "factor", "x_lags", c.factor.x_lags);
        rd.get(f, "factor", "lr", c.factor.lr);
        rd.get(f, "factor", "epochs", c.factor.epochs);
        rd.get(f, "factor", "batch_size", c.factor.batch_size);
        rd.get(f, "factor", "grad_clip", c.factor.grad_clip);
        rd.get(f, "factor", "patience", c.factor.patience);
    }
    if (doc.contains("corrector")) {
        const json& r = doc.at("corrector");
        std::string kind = to_string(c.corrector.model_kind);
        rd.get(r, "corrector", "model_kind", kind);
        try {
            c.corrector.model_kind = parse_corrector_kind(kind);
        } catch (const Error& e) {
            errs.push_back(std::string("corrector.model_kind: ") + e.what());
        }
        rd.get(r, "corrector", "d_model", c.corrector.d_model);
        rd.get(r, "corrector", "n_heads", c.corrector.n_heads);
        rd.get(r, "corrector", "mlp_hidden", c.corrector.mlp_hidden);
        rd.get(r, "corrector", "lr", c.corrector.lr);
        rd.get(r, "corrector", "epochs", c.corrector.epochs);
        rd.get(r, "corrector", "batch_size", c.corrector.batch_size);
        rd.get(r, "corrector", "grad_clip", c.corrector.grad_clip);
        rd.get(r, "corrector", "patience", c.corrector.patience);
    }
    if (doc.contains("split")) {
        const json& s = doc.at("split");
        std::string mode = to_string(c.split.mode);
        rd.get(s, "split", "mode", mode);
        if (mode == "by_location")
            c.split.mode = SplitMode::ByLocation;
        else if (mode == "by_time")
            c.split.mode = SplitMode::ByTime;
        else
            errs.push_back("split.mode must be by_location or by_time, got '" + mode + "'");
        rd.get(s, "split", "train", c.split.fractions.train);
        rd.get(s, "split", "val", c.split.fractions.val);
        rd.get(s, "split", "test", c.split.fractions.test);
    }
    if (doc.contains("baseline"))
        rd.get(doc.at("baseline"), "baseline", "n_quantiles", c.n_quantiles);

    for (auto& v : config_violations(c))
        errs.push_back(std::move(v));
    if (!errs.empty())
        throw Error(ErrorCode::ConfigInvalid, join(errs, "; "));
    return c;
}

PipelineConfig load_config(const fs::path& path, const Overrides& overrides)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::ConfigPath, "cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    PipelineConfig c = config_from_json(ss.str(), overrides);
    if (!c.dataset.synthetic && c.dataset.manifest.is_relative())
        c.dataset.manifest = path.parent_path() / c.dataset.manifest;
    return c;
}

std::string config_hash(const PipelineConfig& config)
{
    const std::string s = config_json(config).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

PipelineConfig with_stage_seeds(PipelineConfig c)
{
    c.dataset.synth.seed = derive_seed(c.seed, "synthgen");
    c.factor.seed = derive_seed(c.seed, "factor");
    c.corrector.seed = derive_seed(c.seed, "corrector");
    return c;
}

TwoSourceDataset load_run_dataset(const PipelineConfig& c)
{
    const fs::path m = dataset_manifest(c);
    if (!fs::exists(m)) {
        if (c.dataset.synthetic)
            throw Error(ErrorCode::IoFailure, "missing " + m.string() + "; run `generate` first");
        throw Error(ErrorCode::ConfigPath, "dataset manifest " + m.string() + " does not exist");
    }
    return load_manifest(m);
}

SplitResult load_run_split(const PipelineConfig& c)
{
    const Index context = c.split.mode == SplitMode::ByTime ? c.window.h + c.window.w : 0;
    return split_dataset(load_run_dataset(c), c.split.fractions, c.split.mode, derive_seed(c.seed, "split"), context);
}

std::vector<EvaluationWindow> evaluation_windows(const TwoSourceDataset& test, const WindowSpec& spec)
{
    std::vector<EvaluationWindow> out;
    for (std::size_t i = 0; i < test.locations.size(); ++i) {
        const Index T = test.locations[i].gcm.steps();
        out.push_back({static_cast<int>(i), make_location_windows(test, static_cast<int>(i), spec, spec.k, 0, T)});
    }
    return out;
}

std::vector<CorrectorExample> corrector_examples(const std::vector<TrajectoryWindow>& windows,
                                                 const FactorModel* factor, bool use_z)
{
    std::vector<CorrectorExample> out;
    out.reserve(windows.size());
    for (const auto& win : windows) {
        MatrixXd z;
        if (use_z)
            z = window_latents(*factor, win);
        out.push_back({build_features(win, use_z ? &z : nullptr, use_z), win.y_o - win.y_g});
    }
    return out;
}

OutcomeScale outcome_scale(const TwoSourceDataset& ds)
{
    const Index y = ds.outcome_index();
    OutcomeScale s;
    s.meta = ds.meta[static_cast<std::size_t>(y)];
    s.mean = ds.norm_stats.obs.mean(y);
    s.std = ds.norm_stats.obs.std(y);
    return s;
}

std::vector<CorrectionResult> correct_windows(const CorrectorModel& corrector, const FactorModel* factor,
                                              const std::vector<TrajectoryWindow>& windows,
                                              const OutcomeScale& scale, bool clip_nonnegative)
{
    const bool use_z = corrector.config.use_z;
    if (use_z && factor == nullptr)
        throw Error(ErrorCode::LatentMissing, "corrector was trained with latents but no factor model was given");
    std::vector<CorrectionResult> out;
    out.reserve(windows.size());
    for (const auto& win : windows) {
        MatrixXd z;
        if (use_z)
            z = window_latents(*factor, win);
        const VectorXd delta = predict_delta(corrector, build_features(win, use_z ? &z : nullptr, use_z));
        out.push_back(apply_correction(win.y_g, delta, clip_nonnegative, scale, &win.y_o));
    }
    return out;
}

const std::vector<std::string>& baseline_methods()
{
    static const std::vector<std::string> names = {"linear_scaling", "variance_scaling", "quantile_mapping",
                                                   "quantile_delta_mapping"};
    return names;
}

void record_artifacts(const PipelineConfig& c, const std::string& stage, const Artifacts& files)
{
    ensure_dir(c.output_dir);
    const fs::path path = c.output_dir / "run_manifest.json";
    json m = fs::exists(path) ? read_json(path) : json::object();
    const std::string hash = config_hash(c);
    if (m.value("config_hash", hash) != hash)
        m = json::object();  // a different config starts a fresh record
    m["config_hash"] = hash;
    m["seed"] = c.seed;
    std::set<std::string> listed;
    if (m.contains("stages") && m["stages"].contains(stage))
        for (const auto& p : m["stages"][stage])
            listed.insert(p.get<std::string>());
    for (const auto& f : files)
        listed.insert(rel(c, f).generic_string());
    m["stages"][stage] = std::vector<std::string>(listed.begin(), listed.end());
    std::set<std::string> all;
    for (const auto& [name, list] : m["stages"].items())
        for (const auto& p : list)
            all.insert(p.get<std::string>());
    m["artifacts"] = std::vector<std::string>(all.begin(), all.end());
    write_text(path, m.dump(2) + "\n");
}

namespace {

/// Writes config.json and records the stage's artifacts.
Artifacts finish(const PipelineConfig& c, const std::string& stage, Artifacts files)
{
    ensure_dir(c.output_dir);
    const fs::path cfg = c.output_dir / "config.json";
    write_text(cfg, config_to_json(c));
    files.push_back(cfg);
    record_artifacts(c, stage, files);
    return files;
}

}  // namespace

Artifacts run_generate(const PipelineConfig& config, bool quiet)
{
    const PipelineConfig c = with_stage_seeds(config);
    if (!c.dataset.synthetic)
        throw Error(ErrorCode::ConfigInvalid, "generate needs a synthetic dataset config");
    log(quiet, "generate: %s\n", std::to_string(c.dataset.synth.n_locations) + " locations");
    const SyntheticDataset ds = generate(c.dataset.synth);
    const fs::path dir = out_path(c, "data");
    Artifacts files = save_dataset(ds.data, dir, true);
    for (auto& p : export_ground_truth(ds, dir))
        files.push_back(std::move(p));
    return finish(c, "generate", std::move(files));
}

Artifacts run_split(const PipelineConfig& config, bool quiet)
{
    const PipelineConfig c = with_stage_seeds(config);
    const SplitResult sp = load_run_split(c);
    auto ids = [](const TwoSourceDataset& d) {
        std::vector<std::string> v;
        for (const auto& l : d.locations)
            v.push_back(l.id);
        return v;
    };
    auto moments = [](const Moments& m) {
        return json{{"mean", std::vector<double>(m.mean.data(), m.mean.data() + m.mean.size())},
                    {"std", std::vector<double>(m.std.data(), m.std.data() + m.std.size())}};
    };
    json j = {{"mode", to_string(c.split.mode)},
              {"seed", derive_seed(c.seed, "split")},
              {"train", ids(sp.train)},
              {"val", ids(sp.val)},
              {"test", ids(sp.test)},
              {"norm_stats", {{"gcm", moments(sp.train.norm_stats.gcm)}, {"obs", moments(sp.train.norm_stats.obs)}}}};
    if (c.split.mode == SplitMode::ByTime && !sp.train.locations.empty()) {
        const auto [c1, c2] = time_cuts(load_run_dataset(c).locations.front().gcm.steps(), c.split.fractions);
        j["time_cuts"] = {c1, c2};
    }
    ensure_dir(c.output_dir);
    const fs::path path = out_path(c, "split.json");
    write_text(path, j.dump(2) + "\n");
    log(quiet, "split: %s\n",
        std::to_string(sp.train.locations.size()) + "/" + std::to_string(sp.val.locations.size()) + "/" +
            std::to_string(sp.test.locations.size()) + " locations");
    return finish(c, "split", {path});
}

Artifacts run_train_factor(const PipelineConfig& config, bool quiet)
{
    const PipelineConfig c = with_stage_seeds(config);
    const SplitResult sp = load_run_split(c);
    const auto train = training_windows(sp.train, c);
    const auto val = training_windows(sp.val, c);
    log(quiet, "train-factor: %s\n", std::to_string(train.size()) + " training windows");

    Artifacts files;
    const auto res = train_factor_model(train, val, c.factor, !quiet);
    files.push_back(out_path(c, "factor_model.json"));
    save_factor_model(res.model, files.back());
    files.push_back(out_path(c, "factor_history.csv"));
    write_history(files.back(), res.history);

    FactorModelConfig ablation = c.factor;
    ablation.use_latent = false;
    const auto res0 = train_factor_model(train, val, ablation, !quiet);
    files.push_back(out_path(c, "factor_no_z.json"));
    save_factor_model(res0.model, files.back());
    files.push_back(out_path(c, "factor_no_z_history.csv"));
    write_history(files.back(), res0.history);
    return finish(c, "train-factor", std::move(files));
}

Artifacts run_infer_z(const PipelineConfig& config, bool quiet)
{
    const PipelineConfig c = with_stage_seeds(config);
    const FactorModel model = load_factor_model(require(c, "factor_model.json", "train-factor"));
    const TwoSourceDataset ds = load_run_dataset(c);
    const NormStats stats = load_run_split(c).train.norm_stats;
    const auto cov = ds.covariate_indices();
    const fs::path dir = out_path(c, "latents");
    ensure_dir(dir);

    std::vector<std::string> cols;
    for (int j = 1; j <= model.config.d_z; ++j)
        cols.push_back("z" + std::to_string(j));
    Artifacts files;
    for (const auto& loc : ds.locations) {
        const MatrixXd g = normalize(loc.gcm.values, ds.meta, stats.gcm);
        const MatrixXd o = normalize(loc.obs.values, ds.meta, stats.obs);
        MatrixXd gc(g.rows(), static_cast<Index>(cov.size())), oc(o.rows(), static_cast<Index>(cov.size()));
        for (std::size_t j = 0; j < cov.size(); ++j) {
            gc.col(static_cast<Index>(j)) = g.col(cov[j]);
            oc.col(static_cast<Index>(j)) = o.col(cov[j]);
        }
        const auto [rows, z] = latent_series(model, gc, oc, c.window.h, c.window.w);
        std::vector<std::int64_t> t;
        for (Index r : rows)
            t.push_back(loc.gcm.timestamps[static_cast<std::size_t>(r)]);
        files.push_back(dir / ("z_" + loc.id + ".csv"));
        write_csv(files.back(), cols, t, z);
    }
    log(quiet, "infer-z: %s\n", std::to_string(files.size()) + " latent files");
    return finish(c, "infer-z", std::move(files));
}

Artifacts run_train_corrector(const PipelineConfig& config, bool quiet)
{
    const PipelineConfig c = with_stage_seeds(config);
    const FactorModel factor = load_factor_model(require(c, "factor_model.json", "train-factor"));
    const SplitResult sp = load_run_split(c);
    const auto train = training_windows(sp.train, c);
    const auto val = training_windows(sp.val, c);

    Artifacts files;
    for (const bool use_z : {true, false}) {
        CorrectorConfig cc = c.corrector;
        cc.use_z = use_z;
        log(quiet, "train-corrector: %s\n", use_z ? "with latents" : "without latents");
        const auto res = train_corrector(corrector_examples(train, &factor, use_z),
                                         corrector_examples(val, &factor, use_z), cc, !quiet);
        const std::string stem = use_z ? "corrector" : "corrector_no_z";
        files.push_back(out_path(c, stem + ".json"));
        save_corrector(res.model, files.back());
        files.push_back(out_path(c, stem + "_history.csv"));
        write_history(files.back(), res.history);
    }
    return finish(c, "train-corrector", std::move(files));
}

Artifacts run_correct(const PipelineConfig& config, bool quiet)
{
    const PipelineConfig c = with_stage_seeds(config);
    const FactorModel factor = load_factor_model(require(c, "factor_model.json", "train-factor"));
    const SplitResult sp = load_run_split(c);
    const OutcomeScale scale = outcome_scale(sp.test);
    const bool clip = clips_at_zero(sp.test);
    const auto eval = evaluation_windows(sp.test, c.window);
    const fs::path dir = out_path(c, "correct");
    ensure_dir(dir);

    Artifacts files;
    for (const char* stem : {"corrector", "corrector_no_z"}) {
        const CorrectorModel model = load_corrector(require(c, std::string(stem) + ".json", "train-corrector"));
        const std::string prefix = model.config.use_z ? "correct_" : "correct_no_z_";
        for (const auto& ew : eval) {
            const auto results = correct_windows(model, &factor, ew.windows, scale, clip);
            const auto& loc = sp.test.locations[static_cast<std::size_t>(ew.location)];
            std::vector<std::int64_t> t;
            MatrixXd v(static_cast<Index>(results.size()) * c.window.k, 4);
            Index row = 0;
            for (std::size_t w = 0; w < results.size(); ++w) {
                const auto& r = results[w];
                for (Index i = 0; i < c.window.k; ++i, ++row) {
                    t.push_back(loc.gcm.timestamps[static_cast<std::size_t>(ew.windows[w].anchor_row + 1 + i)]);
                    v.row(row) << r.y_g_native(i), r.delta_native(i), r.y_corrected_native(i), r.y_obs_native(i);
                }
            }
            files.push_back(dir / (prefix + loc.id + ".csv"));
            write_csv(files.back(), {"y_g_raw", "delta_pred", "y_corrected", "y_obs"}, t, v);
        }
    }
    log(quiet, "correct: %s\n", std::to_string(eval.size()) + " test locations");
    return finish(c, "correct", std::move(files));
}

Artifacts run_baseline(const PipelineConfig& config, const std::string& method, bool quiet)
{
    const auto& names = baseline_methods();
    if (std::find(names.begin(), names.end(), method) == names.end())
        throw Error(ErrorCode::InvalidArgument, "unknown baseline method '" + method + "'");
    const PipelineConfig c = with_stage_seeds(config);
    const SplitResult sp = load_run_split(c);
    const CalibrationPair cal{pooled_outcome(sp.train, Source::G), pooled_outcome(sp.train, Source::O)};
    const ScalingMode mode = baseline_mode(sp.train);
    const auto eval = evaluation_windows(sp.test, c.window);
    const fs::path dir = out_path(c, "baselines");
    ensure_dir(dir);

    Artifacts files;
    for (const auto& ew : eval) {
        const ScoredRows rows = scored_rows(sp.test, ew, c.window.k);
        const VectorXd raw = to_vector(rows.y_g);
        VectorXd corrected;
        if (method == "linear_scaling")
            corrected = linear_scaling(cal, raw, mode);
        else if (method == "variance_scaling")
            corrected = variance_scaling(cal, raw);
        else if (method == "quantile_mapping")
            corrected = quantile_mapping(cal, raw, c.n_quantiles);
        else
            corrected = quantile_delta_mapping(cal.model_train, cal.obs_train, raw, mode, c.n_quantiles,
                                               mode == ScalingMode::Multiplicative ? kTraceOffset : 0.0);
        MatrixXd v(raw.size(), 3);
        v.col(0) = raw;
        v.col(1) = corrected;
        v.col(2) = to_vector(rows.y_o);
        const auto& loc = sp.test.locations[static_cast<std::size_t>(ew.location)];
        files.push_back(dir / (method + "_" + loc.id + ".csv"));
        write_csv(files.back(), {"y_g_raw", "y_corrected", "y_obs"}, rows.t, v);
    }
    log(quiet, "baseline: %s\n", method);
    return finish(c, "baseline", std::move(files));
}

Artifacts run_evaluate(const PipelineConfig& config, bool quiet)
{
    const PipelineConfig c = with_stage_seeds(config);
    const SplitResult sp = load_run_split(c);
    for (const auto& m : baseline_methods())
        if (!fs::exists(out_path(c, "baselines/" + m + "_" + sp.test.locations.front().id + ".csv")))
            run_baseline(c, m, quiet);

    // label -> (prediction, observation) pooled over test locations
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> pooled;
    auto add = [&](const std::string& label, const fs::path& path, const char* col) {
        const CsvTable t = read_csv(path);
        const Index p = column_of(t, col, path), o = column_of(t, "y_obs", path);
        auto& [pred, obs] = pooled[label];
        for (Index r = 0; r < t.values.rows(); ++r) {
            pred.push_back(t.values(r, p));
            obs.push_back(t.values(r, o));
        }
    };
    for (const auto& loc : sp.test.locations) {
        const fs::path corr = require(c, "correct/correct_" + loc.id + ".csv", "correct");
        add("raw_gcm", corr, "y_g_raw");
        add("deconfounding_bc", corr, "y_corrected");
        add("deconfounding_bc_no_z", require(c, "correct/correct_no_z_" + loc.id + ".csv", "correct"),
            "y_corrected");
        for (const auto& m : baseline_methods())
            add(m, require(c, "baselines/" + m + "_" + loc.id + ".csv", "baseline"), "y_corrected");
    }

    Artifacts files;
    json metrics = json::object();
    const VectorXd obs = to_vector(pooled.at("raw_gcm").second);
    {
        const BoxStats b = box_stats(obs);
        files.push_back(out_path(c, "box_observed.csv"));
        write_table(files.back(), {"min", "q25", "median", "q75", "max"}, {{b.min, b.q25, b.median, b.q75, b.max}});
    }
    for (const auto& [label, data] : pooled) {
        const VectorXd pred = to_vector(data.first), target = to_vector(data.second);
        const MetricReport r = metric_report(pred, target, label);
        metrics[label] = {{"mse", r.mse}, {"mae", r.mae}, {"n", r.n}};

        std::vector<std::vector<double>> qq;
        for (const auto& q : qq_points(target, pred, 100))
            qq.push_back({q.prob, q.q_a, q.q_b});
        files.push_back(out_path(c, "qq_" + label + ".csv"));
        write_table(files.back(), {"prob", "q_obs", "q_" + label}, qq);
        const BoxStats b = box_stats(pred);
        files.push_back(out_path(c, "box_" + label + ".csv"));
        write_table(files.back(), {"min", "q25", "median", "q75", "max"}, {{b.min, b.q25, b.median, b.q75, b.max}});
    }
    files.push_back(out_path(c, "metrics.json"));
    write_text(files.back(), metrics.dump(2) + "\n");

    // Factor-model diagnostics on held-out windows.
    const FactorModel factor = load_factor_model(require(c, "factor_model.json", "train-factor"));
    const FactorModel factor0 = load_factor_model(require(c, "factor_no_z.json", "train-factor"));
    const auto val = training_windows(sp.val, c);
    const auto test = training_windows(sp.test, c);
    const Index k = factor.k;
    const MatrixXd res_val = treatment_residuals(factor, val), res_val0 = treatment_residuals(factor0, val);
    json diag;
    diag["treatment_mse_test"] = factor_loss(factor, test);
    diag["treatment_mse_test_no_z"] = factor_loss(factor0, test);
    diag["treatment_mse_val"] = factor_loss(factor, val);
    diag["treatment_mse_val_no_z"] = factor_loss(factor0, val);
    diag["ci_score_val"] = source_mean_ci(res_val, k);
    diag["ci_score_val_no_z"] = source_mean_ci(res_val0, k);
    diag["ci_score_val_gcm"] = conditional_independence_score(res_val.leftCols(k));
    diag["ci_score_val_obs"] = conditional_independence_score(res_val.rightCols(k));

    const auto truth = ground_truth_files(dataset_manifest(c));
    if (!truth.empty()) {
        double aligned = 0.0, raw = 0.0, var = 0.0;
        int n = 0;
        for (const auto& loc : sp.test.locations) {
            const auto it = truth.find(loc.id);
            if (it == truth.end())
                continue;
            const CsvTable zt = read_csv(it->second);
            const CsvTable zi = read_csv(require(c, "latents/z_" + loc.id + ".csv", "infer-z"));
            std::map<std::int64_t, Index> row_of;
            for (std::size_t r = 0; r < zt.t.size(); ++r)
                row_of[zt.t[r]] = static_cast<Index>(r);
            MatrixXd zt_rows(zi.values.rows(), zt.values.cols());
            for (std::size_t r = 0; r < zi.t.size(); ++r) {
                const auto f = row_of.find(zi.t[r]);
                if (f == row_of.end())
                    throw Error(ErrorCode::MisalignedSources, "latent file of " + loc.id + " has unknown timestamps");
                zt_rows.row(static_cast<Index>(r)) = zt.values.row(f->second);
            }
            const LatentRecovery lr = latent_recovery(zi.values, zt_rows);
            aligned += lr.aligned;
            raw += lr.raw;
            var += lr.var_true;
            ++n;
        }
        if (n > 0) {
            diag["latent_recovery_aligned"] = aligned / n;
            diag["latent_recovery_raw"] = raw / n;
            diag["latent_var_true"] = var / n;
            diag["latent_unexplained_fraction"] = aligned / var;
            diag["latent_locations"] = n;
        }
    }
    files.push_back(out_path(c, "diagnostics.json"));
    write_text(files.back(), diag.dump(2) + "\n");
    log(quiet, "evaluate: %s\n", std::to_string(pooled.size()) + " methods scored");
    return finish(c, "evaluate", std::move(files));
}

Artifacts run_report(const PipelineConfig& config, bool quiet)
{
    const PipelineConfig c = with_stage_seeds(config);
    const json metrics = read_json(require(c, "metrics.json", "evaluate"));
    const fs::path diag_path = out_path(c, "diagnostics.json");
    const json diag = fs::exists(diag_path) ? read_json(diag_path) : json::object();

    const std::vector<std::pair<std::string, std::string>> rows = {
        {"raw_gcm", "Raw GCM"},
        {"linear_scaling", "Linear Scaling"},
        {"variance_scaling", "Variance Scaling"},
        {"quantile_mapping", "Quantile Mapping"},
        {"quantile_delta_mapping", "Quantile Delta Mapping"},
        {"deconfounding_bc", "Deconfounding BC"},
    };
    auto line = [](const std::string& name, const json& m) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "| %-26s | %12.6g | %12.6g | %8lld |\n", name.c_str(), m.at("mse").get<double>(),
                      m.at("mae").get<double>(), static_cast<long long>(m.at("n").get<std::int64_t>()));
        return std::string(buf);
    };
    std::string text = "# Comparison of Bias Correction Methods\n\n";
    text += "| Method                     |          MSE |          MAE |        n |\n";
    text += "|----------------------------|--------------|--------------|----------|\n";
    for (const auto& [key, name] : rows)
        if (metrics.contains(key))
            text += line(name, metrics.at(key));
    text += "\n## With and Without Latent Confounder\n\n";
    text += "| Method                     |          MSE |          MAE |        n |\n";
    text += "|----------------------------|--------------|--------------|----------|\n";
    if (metrics.contains("deconfounding_bc"))
        text += line("With Z", metrics.at("deconfounding_bc"));
    if (metrics.contains("deconfounding_bc_no_z"))
        text += line("Without Z", metrics.at("deconfounding_bc_no_z"));
    if (!diag.empty()) {
        text += "\n## Factor model diagnostics\n\n";
        for (const auto& [key, value] : diag.items()) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "- %s: %.6g\n", key.c_str(), value.get<double>());
            text += buf;
        }
    }
    const fs::path path = out_path(c, "report.md");
    write_text(path, text);
    if (!quiet)
        std::fputs(text.c_str(), stdout);
    return finish(c, "report", {path});
}

Artifacts run_all(const PipelineConfig& config, bool quiet)
{
    Artifacts all;
    auto append = [&all](Artifacts a) { all.insert(all.end(), a.begin(), a.end()); };
    if (config.dataset.synthetic)
        append(run_generate(config, quiet));
    append(run_split(config, quiet));
    append(run_train_factor(config, quiet));
    append(run_infer_z(config, quiet));
    append(run_train_corrector(config, quiet));
    append(run_correct(config, quiet));
    for (const auto& m : baseline_methods())
        append(run_baseline(config, m, quiet));
    append(run_evaluate(config, quiet));
    append(run_report(config, quiet));
    return all;
}

}  // namespace deconfbc
