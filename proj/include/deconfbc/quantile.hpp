#pragma once

#include <Eigen/Dense>

namespace deconfbc {

/// Plotting positions (j - 0.5) / n for j = 1..n.
Eigen::VectorXd plotting_positions(Eigen::Index n);

/// Sorted copy of a vector.
Eigen::VectorXd sorted(const Eigen::Ref<const Eigen::VectorXd>& v);

/// Quantile of sorted data with plotting positions and linear interpolation,
/// clamped to the extremes outside [0.5/n, 1 - 0.5/n].
double quantile_sorted(const Eigen::Ref<const Eigen::VectorXd>& sorted_data, double tau);

/// Quantiles of unsorted data at each probability in taus.
Eigen::VectorXd quantiles(const Eigen::Ref<const Eigen::VectorXd>& data, const Eigen::Ref<const Eigen::VectorXd>& taus);

/// Empirical quantile function tabulated on n equally spaced plotting positions.
class QuantileTable {
public:
    QuantileTable(const Eigen::Ref<const Eigen::VectorXd>& data, Eigen::Index n_quantiles);

    const Eigen::VectorXd& tau() const { return tau_; }
    const Eigen::VectorXd& values() const { return q_; }
    double lo() const { return q_(0); }
    double hi() const { return q_(q_.size() - 1); }

    /// Inverse CDF by linear interpolation in probability, clamped at the edges.
    double inverse(double tau) const;
    /// CDF by linear interpolation in value. Values hitting a run of tied
    /// quantiles map to the midpoint probability of the run.
    double cdf(double v) const;

private:
    Eigen::VectorXd tau_;
    Eigen::VectorXd q_;
};

}  // namespace deconfbc
