#include "deconfbc/baselines.hpp"

#include <cmath>

#include "deconfbc/error.hpp"
#include "deconfbc/quantile.hpp"

namespace deconfbc {

namespace {

void check_series(const Eigen::Ref<const Eigen::VectorXd>& v, const char* name)
{
    if (v.size() == 0)
        throw Error(ErrorCode::EmptyInput, std::string(name) + " is empty");
    if (!v.allFinite())
        throw Error(ErrorCode::MissingValue, std::string(name) + " contains non-finite values");
}

void check_pair(const CalibrationPair& cal)
{
    check_series(cal.model_train, "model_train");
    check_series(cal.obs_train, "obs_train");
}

double population_std(const Eigen::Ref<const Eigen::VectorXd>& v)
{
    return std::sqrt((v.array() - v.mean()).square().mean());
}

}  // namespace

Eigen::VectorXd linear_scaling(const CalibrationPair& cal, const Eigen::Ref<const Eigen::VectorXd>& model_eval,
                               ScalingMode mode)
{
    check_pair(cal);
    const double mm = cal.model_train.mean();
    const double mo = cal.obs_train.mean();
    if (mode == ScalingMode::Additive)
        return model_eval.array() + (mo - mm);
    if (!(mm > kDegenerateEps))
        throw Error(ErrorCode::DegenerateMean, "multiplicative scaling needs a positive model mean");
    return model_eval * (mo / mm);
}

Eigen::VectorXd variance_scaling(const CalibrationPair& cal, const Eigen::Ref<const Eigen::VectorXd>& model_eval)
{
    check_pair(cal);
    const double mm = cal.model_train.mean();
    const double mo = cal.obs_train.mean();
    const double sm = population_std(cal.model_train);
    const double so = population_std(cal.obs_train);
    if (!(sm > kDegenerateEps))
        throw Error(ErrorCode::DegenerateStd, "variance scaling needs a non-constant model series");
    return ((model_eval.array() - mm) * (so / sm) + mo).matrix();
}

Eigen::VectorXd quantile_mapping(const CalibrationPair& cal, const Eigen::Ref<const Eigen::VectorXd>& model_eval,
                                 Eigen::Index n_quantiles)
{
    check_pair(cal);
    const QuantileTable fm(cal.model_train, n_quantiles);
    const QuantileTable fo(cal.obs_train, n_quantiles);
    const Eigen::Index last = n_quantiles - 1;
    Eigen::VectorXd out(model_eval.size());
    for (Eigen::Index i = 0; i < model_eval.size(); ++i) {
        const double v = model_eval(i);
        if (v < fm.lo())
            out(i) = v + (fo.values()(0) - fm.values()(0));
        else if (v > fm.hi())
            out(i) = v + (fo.values()(last) - fm.values()(last));
        else
            out(i) = fo.inverse(fm.cdf(v));
    }
    return out;
}

Eigen::VectorXd quantile_delta_mapping(const Eigen::Ref<const Eigen::VectorXd>& model_hist,
                                       const Eigen::Ref<const Eigen::VectorXd>& obs_hist,
                                       const Eigen::Ref<const Eigen::VectorXd>& model_proj, ScalingMode kind,
                                       Eigen::Index n_quantiles, double trace_offset)
{
    check_series(model_hist, "model_hist");
    check_series(obs_hist, "obs_hist");
    check_series(model_proj, "model_proj");
    if (trace_offset < 0.0)
        throw Error(ErrorCode::InvalidArgument, "trace offset must be non-negative");
    const double off = kind == ScalingMode::Multiplicative ? trace_offset : 0.0;

    const Eigen::VectorXd hist = model_hist.array() + off;
    const Eigen::VectorXd obs = obs_hist.array() + off;
    const Eigen::VectorXd proj = model_proj.array() + off;
    const QuantileTable fh(hist, n_quantiles);
    const QuantileTable fo(obs, n_quantiles);
    const QuantileTable fp(proj, n_quantiles);
    if (kind == ScalingMode::Multiplicative && !(fh.values().minCoeff() > kDegenerateEps))
        throw Error(ErrorCode::DegenerateQuantile, "multiplicative delta mapping needs positive model quantiles");

    Eigen::VectorXd out(proj.size());
    for (Eigen::Index i = 0; i < proj.size(); ++i) {
        const double v = proj(i);
        const double tau = fp.cdf(v);
        if (kind == ScalingMode::Additive)
            out(i) = fo.inverse(tau) + (v - fh.inverse(tau));
        else
            out(i) = fo.inverse(tau) * v / fh.inverse(tau) - off;
    }
    return out;
}

}  // namespace deconfbc
