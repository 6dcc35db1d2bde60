#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace deconfbc {

struct MetricReport {
    double mse = 0.0;
    double mae = 0.0;
    Eigen::Index n = 0;
    std::string label;
};

double mse(const Eigen::Ref<const Eigen::VectorXd>& pred, const Eigen::Ref<const Eigen::VectorXd>& target);
double mae(const Eigen::Ref<const Eigen::VectorXd>& pred, const Eigen::Ref<const Eigen::VectorXd>& target);
MetricReport metric_report(const Eigen::Ref<const Eigen::VectorXd>& pred,
                           const Eigen::Ref<const Eigen::VectorXd>& target, const std::string& label);

struct QQPoint {
    double prob = 0.0;
    double q_a = 0.0;
    double q_b = 0.0;
};

/// Paired quantiles at plotting positions (j - 0.5) / n_points.
std::vector<QQPoint> qq_points(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b,
                               Eigen::Index n_points);

struct BoxStats {
    double min = 0.0, q25 = 0.0, median = 0.0, q75 = 0.0, max = 0.0;
};

BoxStats box_stats(const Eigen::Ref<const Eigen::VectorXd>& a);

struct LatentRecovery {
    double aligned = 0.0;   // affine-aligned held-out MSE
    double raw = 0.0;       // unaligned held-out MSE over the shared leading columns
    double var_true = 0.0;  // held-out variance of the true latent, averaged over columns
};

/// Fits z_true ~ [z_inferred, 1] on the first half of the rows and scores the rest.
LatentRecovery latent_recovery(const Eigen::MatrixXd& z_inferred, const Eigen::MatrixXd& z_true);
double z_recovery_error(const Eigen::MatrixXd& z_inferred, const Eigen::MatrixXd& z_true);

/// Mean absolute off-diagonal Pearson correlation between residual columns.
double conditional_independence_score(const Eigen::MatrixXd& residuals);

}  // namespace deconfbc
