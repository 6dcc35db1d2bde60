#include "deconfbc/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "deconfbc/error.hpp"
#include "deconfbc/random.hpp"

namespace deconfbc {

const char* to_string(Source s) { return s == Source::G ? "G" : "O"; }

const char* to_string(VariableKind k) { return k == VariableKind::Outcome ? "outcome" : "covariate"; }

const char* to_string(Transform t)
{
    switch (t) {
    case Transform::ZScore: return "zscore";
    case Transform::Log1pZScore: return "log1p_zscore";
    case Transform::None: return "none";
    }
    return "none";
}

VariableKind parse_kind(const std::string& s)
{
    if (s == "outcome")
        return VariableKind::Outcome;
    if (s == "covariate")
        return VariableKind::Covariate;
    throw Error(ErrorCode::ConfigInvalid, "unknown variable kind '" + s + "'");
}

Transform parse_transform(const std::string& s)
{
    if (s == "zscore")
        return Transform::ZScore;
    if (s == "log1p_zscore")
        return Transform::Log1pZScore;
    if (s == "none")
        return Transform::None;
    throw Error(ErrorCode::ConfigInvalid, "unknown transform '" + s + "'");
}

Eigen::Index TwoSourceDataset::outcome_index() const
{
    for (std::size_t j = 0; j < meta.size(); ++j)
        if (meta[j].kind == VariableKind::Outcome)
            return static_cast<Eigen::Index>(j);
    throw Error(ErrorCode::ConfigInvalid, "dataset has no outcome variable");
}

std::vector<Eigen::Index> TwoSourceDataset::covariate_indices() const
{
    std::vector<Eigen::Index> idx;
    for (std::size_t j = 0; j < meta.size(); ++j)
        if (meta[j].kind == VariableKind::Covariate)
            idx.push_back(static_cast<Eigen::Index>(j));
    return idx;
}

Eigen::MatrixXd TrajectoryWindow::trajectory(Source s) const
{
    const Eigen::MatrixXd& x = s == Source::G ? x_g : x_o;
    const Eigen::MatrixXd& a = s == Source::G ? a_g : a_o;
    Eigen::MatrixXd out(x.rows() + a.rows(), x.cols());
    out << x, a;
    return out;
}

void validate(const TwoSourceDataset& ds)
{
    if (ds.meta.empty())
        throw Error(ErrorCode::ConfigInvalid, "dataset has no variables");
    int outcomes = 0;
    std::set<std::string> names;
    for (const auto& v : ds.meta) {
        outcomes += v.kind == VariableKind::Outcome;
        if (!names.insert(v.name).second)
            throw Error(ErrorCode::ConfigInvalid, "duplicate variable name '" + v.name + "'");
    }
    if (outcomes != 1)
        throw Error(ErrorCode::ConfigInvalid, "exactly one outcome variable required, found " + std::to_string(outcomes));
    if (ds.locations.empty())
        throw Error(ErrorCode::EmptyInput, "dataset has no locations");

    for (const auto& loc : ds.locations) {
        for (const SourceSeries* s : {&loc.gcm, &loc.obs}) {
            if (s->steps() < 1)
                throw Error(ErrorCode::SeriesTooShort, "location " + loc.id + " has an empty series");
            if (s->values.cols() != ds.dims())
                throw Error(ErrorCode::ShapeMismatch, "location " + loc.id + ": column count differs from metadata");
            if (static_cast<Eigen::Index>(s->timestamps.size()) != s->steps())
                throw Error(ErrorCode::ShapeMismatch, "location " + loc.id + ": timestamp count differs from rows");
            if (!s->values.allFinite())
                throw Error(ErrorCode::MissingValue, "location " + loc.id + " contains missing or non-finite values");
            for (std::size_t i = 1; i < s->timestamps.size(); ++i)
                if (s->timestamps[i] <= s->timestamps[i - 1])
                    throw Error(ErrorCode::MisalignedSources, "location " + loc.id + ": timestamps not increasing");
        }
        if (loc.gcm.steps() != loc.obs.steps() || loc.gcm.timestamps != loc.obs.timestamps)
            throw Error(ErrorCode::MisalignedSources, "location " + loc.id + ": GCM and observation timestamps differ");
    }
}

namespace {

double forward_transform(double v, Transform t)
{
    return t == Transform::Log1pZScore ? std::log1p(v) : v;
}

Moments source_moments(const TwoSourceDataset& ds, Source src)
{
    const Eigen::Index d = ds.dims();
    Moments m{Eigen::VectorXd::Zero(d), Eigen::VectorXd::Ones(d)};
    for (Eigen::Index j = 0; j < d; ++j) {
        const Transform t = ds.meta[j].transform;
        if (t == Transform::None)
            continue;
        double sum = 0.0;
        double n = 0.0;
        for (const auto& loc : ds.locations) {
            const auto& s = src == Source::G ? loc.gcm : loc.obs;
            for (Eigen::Index i = 0; i < s.steps(); ++i)
                sum += forward_transform(s.values(i, j), t);
            n += static_cast<double>(s.steps());
        }
        const double mean = sum / n;
        double ss = 0.0;
        for (const auto& loc : ds.locations) {
            const auto& s = src == Source::G ? loc.gcm : loc.obs;
            for (Eigen::Index i = 0; i < s.steps(); ++i) {
                const double r = forward_transform(s.values(i, j), t) - mean;
                ss += r * r;
            }
        }
        const double sd = std::sqrt(ss / n);
        if (!std::isfinite(mean) || !std::isfinite(sd))
            throw Error(ErrorCode::MissingValue, "variable '" + ds.meta[j].name + "' is not finite after transform");
        if (!(sd > 0.0))
            throw Error(ErrorCode::DegenerateStd,
                        "variable '" + ds.meta[j].name + "' has zero variance in source " + to_string(src));
        m.mean(j) = mean;
        m.std(j) = sd;
    }
    return m;
}

}  // namespace

NormStats compute_norm_stats(const TwoSourceDataset& ds)
{
    validate(ds);
    NormStats ns{source_moments(ds, Source::G), source_moments(ds, Source::O)};
    const Eigen::Index y = ds.outcome_index();
    ns.gcm.mean(y) = ns.obs.mean(y);
    ns.gcm.std(y) = ns.obs.std(y);
    return ns;
}

double normalize_value(double v, const VariableMeta& meta, double mean, double std)
{
    if (meta.transform == Transform::None)
        return v;
    return (forward_transform(v, meta.transform) - mean) / std;
}

double denormalize_value(double v, const VariableMeta& meta, double mean, double std)
{
    switch (meta.transform) {
    case Transform::None: return v;
    case Transform::ZScore: return v * std + mean;
    case Transform::Log1pZScore: return std::expm1(v * std + mean);
    }
    return v;
}

Eigen::MatrixXd normalize(const Eigen::MatrixXd& values, const std::vector<VariableMeta>& meta, const Moments& m)
{
    Eigen::MatrixXd out(values.rows(), values.cols());
    for (Eigen::Index j = 0; j < values.cols(); ++j)
        for (Eigen::Index i = 0; i < values.rows(); ++i)
            out(i, j) = normalize_value(values(i, j), meta[j], m.mean(j), m.std(j));
    return out;
}

Eigen::MatrixXd denormalize(const Eigen::MatrixXd& values, const std::vector<VariableMeta>& meta, const Moments& m)
{
    Eigen::MatrixXd out(values.rows(), values.cols());
    for (Eigen::Index j = 0; j < values.cols(); ++j)
        for (Eigen::Index i = 0; i < values.rows(); ++i)
            out(i, j) = denormalize_value(values(i, j), meta[j], m.mean(j), m.std(j));
    return out;
}

Eigen::Index window_count(Eigen::Index T, const WindowSpec& spec)
{
    return T >= spec.span() ? T - spec.span() + 1 : 0;
}

namespace {

void check_spec(const WindowSpec& spec)
{
    if (spec.h < 1 || spec.w < 1 || spec.k < 1)
        throw Error(ErrorCode::ConfigInvalid, "window lengths h, w, k must be at least 1");
}

Eigen::MatrixXd pick_columns(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& cols, Eigen::Index r0,
                             Eigen::Index n)
{
    Eigen::MatrixXd out(n, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c)
        out.col(static_cast<Eigen::Index>(c)) = m.col(cols[c]).segment(r0, n);
    return out;
}

}  // namespace

std::vector<TrajectoryWindow> make_location_windows(const TwoSourceDataset& ds, int location, const WindowSpec& spec,
                                                    int stride, Eigen::Index first_anchor_row,
                                                    Eigen::Index last_anchor_row)
{
    check_spec(spec);
    if (stride < 1)
        throw Error(ErrorCode::ConfigInvalid, "window stride must be at least 1");
    if (ds.norm_stats.empty())
        throw Error(ErrorCode::InvalidArgument, "dataset has no normalization statistics");
    const auto& loc = ds.locations.at(static_cast<std::size_t>(location));
    if (loc.gcm.timestamps != loc.obs.timestamps)
        throw Error(ErrorCode::MisalignedSources, "location " + loc.id + ": GCM and observation timestamps differ");
    const Eigen::Index T = loc.gcm.steps();
    if (T < spec.span())
        throw Error(ErrorCode::SeriesTooShort, "location " + loc.id + " has " + std::to_string(T) +
                                                   " steps, windows need " + std::to_string(spec.span()));

    const Eigen::MatrixXd g = normalize(loc.gcm.values, ds.meta, ds.norm_stats.gcm);
    const Eigen::MatrixXd o = normalize(loc.obs.values, ds.meta, ds.norm_stats.obs);
    const auto cov = ds.covariate_indices();
    const Eigen::Index y = ds.outcome_index();

    const Eigen::Index lo = std::max<Eigen::Index>(first_anchor_row, spec.h + spec.w - 1);
    const Eigen::Index hi = std::min<Eigen::Index>(last_anchor_row, T - spec.k - 1);
    std::vector<TrajectoryWindow> out;
    for (Eigen::Index t = lo; t <= hi; t += stride) {
        TrajectoryWindow win;
        const Eigen::Index x0 = t - spec.h - spec.w + 1;
        const Eigen::Index a0 = t - spec.w + 1;
        win.x_g = pick_columns(g, cov, x0, spec.h);
        win.x_o = pick_columns(o, cov, x0, spec.h);
        win.a_g = pick_columns(g, cov, a0, spec.w);
        win.a_o = pick_columns(o, cov, a0, spec.w);
        win.y_g = g.col(y).segment(t + 1, spec.k);
        win.y_o = o.col(y).segment(t + 1, spec.k);
        win.anchor_t = loc.gcm.timestamps[static_cast<std::size_t>(t)];
        win.anchor_row = t;
        win.location = location;
        out.push_back(std::move(win));
    }
    return out;
}

std::vector<TrajectoryWindow> make_windows(const TwoSourceDataset& ds, const WindowSpec& spec, int stride)
{
    validate(ds);
    std::vector<TrajectoryWindow> out;
    for (std::size_t i = 0; i < ds.locations.size(); ++i) {
        auto w = make_location_windows(ds, static_cast<int>(i), spec, stride, 0, ds.locations[i].gcm.steps());
        std::move(w.begin(), w.end(), std::back_inserter(out));
    }
    return out;
}

namespace {

void check_fractions(const Fractions& f)
{
    if (!(f.train > 0.0) || !(f.val > 0.0) || !(f.test > 0.0))
        throw Error(ErrorCode::BadFractions, "split fractions must all be positive");
    if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
        throw Error(ErrorCode::BadFractions, "split fractions must sum to 1");
}

SourceSeries slice_rows(const SourceSeries& s, Eigen::Index r0, Eigen::Index r1)
{
    SourceSeries out;
    out.source = s.source;
    out.values = s.values.middleRows(r0, r1 - r0);
    out.timestamps.assign(s.timestamps.begin() + r0, s.timestamps.begin() + r1);
    return out;
}

}  // namespace

std::pair<Eigen::Index, Eigen::Index> time_cuts(Eigen::Index T, const Fractions& f)
{
    check_fractions(f);
    const auto c1 = static_cast<Eigen::Index>(std::llround(f.train * static_cast<double>(T)));
    const auto c2 = static_cast<Eigen::Index>(std::llround((f.train + f.val) * static_cast<double>(T)));
    return {c1, c2};
}

SplitResult split_dataset(const TwoSourceDataset& ds, const Fractions& f, SplitMode mode, std::uint64_t seed,
                          Eigen::Index context)
{
    check_fractions(f);
    validate(ds);
    SplitResult out;
    for (TwoSourceDataset* part : {&out.train, &out.val, &out.test})
        part->meta = ds.meta;

    if (mode == SplitMode::ByLocation) {
        const auto n = static_cast<Eigen::Index>(ds.locations.size());
        const auto n_train = static_cast<Eigen::Index>(std::llround(f.train * static_cast<double>(n)));
        const auto n_val = static_cast<Eigen::Index>(std::llround(f.val * static_cast<double>(n)));
        const Eigen::Index n_test = n - n_train - n_val;
        if (n_train < 1 || n_val < 1 || n_test < 1)
            throw Error(ErrorCode::BadFractions,
                        "split of " + std::to_string(n) + " locations leaves an empty partition");
        std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        Rng rng(seed);
        rng.shuffle(order);
        auto assign = [&](TwoSourceDataset& part, Eigen::Index from, Eigen::Index count) {
            std::vector<Eigen::Index> idx(order.begin() + from, order.begin() + from + count);
            std::sort(idx.begin(), idx.end());
            for (Eigen::Index i : idx)
                part.locations.push_back(ds.locations[static_cast<std::size_t>(i)]);
        };
        assign(out.train, 0, n_train);
        assign(out.val, n_train, n_val);
        assign(out.test, n_train + n_val, n_test);
    } else {
        for (const auto& loc : ds.locations) {
            const Eigen::Index T = loc.gcm.steps();
            const auto [c1, c2] = time_cuts(T, f);
            if (c1 < 1 || c2 <= c1 || c2 >= T)
                throw Error(ErrorCode::BadFractions, "chronological split of location " + loc.id + " is empty");
            const Eigen::Index v0 = std::max<Eigen::Index>(0, c1 - context);
            const Eigen::Index t0 = std::max<Eigen::Index>(0, c2 - context);
            out.train.locations.push_back({loc.id, slice_rows(loc.gcm, 0, c1), slice_rows(loc.obs, 0, c1)});
            out.val.locations.push_back({loc.id, slice_rows(loc.gcm, v0, c2), slice_rows(loc.obs, v0, c2)});
            out.test.locations.push_back({loc.id, slice_rows(loc.gcm, t0, T), slice_rows(loc.obs, t0, T)});
        }
    }

    out.train.norm_stats = compute_norm_stats(out.train);
    out.val.norm_stats = out.train.norm_stats;
    out.test.norm_stats = out.train.norm_stats;
    return out;
}

}  // namespace deconfbc
