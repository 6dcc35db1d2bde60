#include "deconfbc/quantile.hpp"

#include <algorithm>

#include "deconfbc/error.hpp"

namespace deconfbc {

Eigen::VectorXd plotting_positions(Eigen::Index n)
{
    return (Eigen::VectorXd::LinSpaced(n, 1.0, static_cast<double>(n)).array() - 0.5) / static_cast<double>(n);
}

Eigen::VectorXd sorted(const Eigen::Ref<const Eigen::VectorXd>& v)
{
    Eigen::VectorXd s = v;
    std::sort(s.data(), s.data() + s.size());
    return s;
}

double quantile_sorted(const Eigen::Ref<const Eigen::VectorXd>& x, double tau)
{
    const Eigen::Index n = x.size();
    if (n == 0)
        throw Error(ErrorCode::EmptyInput, "quantile of empty data");
    const double pos = tau * static_cast<double>(n) - 0.5;  // zero-based fractional index
    if (pos <= 0.0)
        return x(0);
    if (pos >= static_cast<double>(n - 1))
        return x(n - 1);
    const auto j = static_cast<Eigen::Index>(pos);
    const double frac = pos - static_cast<double>(j);
    return x(j) + frac * (x(j + 1) - x(j));
}

Eigen::VectorXd quantiles(const Eigen::Ref<const Eigen::VectorXd>& data, const Eigen::Ref<const Eigen::VectorXd>& taus)
{
    const Eigen::VectorXd s = sorted(data);
    Eigen::VectorXd out(taus.size());
    for (Eigen::Index i = 0; i < taus.size(); ++i)
        out(i) = quantile_sorted(s, taus(i));
    return out;
}

QuantileTable::QuantileTable(const Eigen::Ref<const Eigen::VectorXd>& data, Eigen::Index n_quantiles)
{
    if (n_quantiles < 2)
        throw Error(ErrorCode::InvalidArgument, "n_quantiles must be at least 2");
    if (data.size() == 0)
        throw Error(ErrorCode::EmptyInput, "quantile table of empty data");
    tau_ = plotting_positions(n_quantiles);
    q_ = quantiles(data, tau_);
}

double QuantileTable::inverse(double tau) const
{
    const Eigen::Index n = tau_.size();
    if (tau <= tau_(0))
        return q_(0);
    if (tau >= tau_(n - 1))
        return q_(n - 1);
    const auto it = std::upper_bound(tau_.data(), tau_.data() + n, tau);
    const Eigen::Index j = (it - tau_.data()) - 1;
    const double frac = (tau - tau_(j)) / (tau_(j + 1) - tau_(j));
    return q_(j) + frac * (q_(j + 1) - q_(j));
}

double QuantileTable::cdf(double v) const
{
    const Eigen::Index n = q_.size();
    const double* b = q_.data();
    const double* e = b + n;
    const double* first = std::lower_bound(b, e, v);
    const double* last = std::upper_bound(b, e, v);
    if (first != last) {
        const Eigen::Index i0 = first - b;
        const Eigen::Index i1 = (last - b) - 1;
        return 0.5 * (tau_(i0) + tau_(i1));
    }
    if (first == b)
        return tau_(0);
    if (first == e)
        return tau_(n - 1);
    const Eigen::Index j = (first - b) - 1;
    const double frac = (v - q_(j)) / (q_(j + 1) - q_(j));
    return tau_(j) + frac * (tau_(j + 1) - tau_(j));
}

}  // namespace deconfbc
