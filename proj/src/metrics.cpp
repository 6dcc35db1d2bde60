#include "deconfbc/metrics.hpp"

#include <cmath>

#include "deconfbc/error.hpp"
#include "deconfbc/quantile.hpp"

namespace deconfbc {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

void check_pair(const Eigen::Ref<const VectorXd>& a, const Eigen::Ref<const VectorXd>& b)
{
    if (a.size() != b.size())
        throw Error(ErrorCode::LengthMismatch, "metric inputs differ in length (" + std::to_string(a.size()) +
                                                   " vs " + std::to_string(b.size()) + ")");
    if (a.size() == 0)
        throw Error(ErrorCode::EmptyInput, "metric of empty vectors");
}

}  // namespace

double mse(const Eigen::Ref<const VectorXd>& pred, const Eigen::Ref<const VectorXd>& target)
{
    check_pair(pred, target);
    return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

double mae(const Eigen::Ref<const VectorXd>& pred, const Eigen::Ref<const VectorXd>& target)
{
    check_pair(pred, target);
    return (pred - target).cwiseAbs().sum() / static_cast<double>(pred.size());
}

MetricReport metric_report(const Eigen::Ref<const VectorXd>& pred, const Eigen::Ref<const VectorXd>& target,
                           const std::string& label)
{
    return {mse(pred, target), mae(pred, target), pred.size(), label};
}

std::vector<QQPoint> qq_points(const Eigen::Ref<const VectorXd>& a, const Eigen::Ref<const VectorXd>& b,
                               Index n_points)
{
    if (a.size() == 0 || b.size() == 0)
        throw Error(ErrorCode::EmptyInput, "qq_points of empty data");
    if (n_points < 2)
        throw Error(ErrorCode::InvalidArgument, "qq_points needs at least 2 points");
    const VectorXd tau = plotting_positions(n_points);
    const VectorXd qa = quantiles(a, tau);
    const VectorXd qb = quantiles(b, tau);
    std::vector<QQPoint> out;
    for (Index i = 0; i < n_points; ++i)
        out.push_back({tau(i), qa(i), qb(i)});
    return out;
}

BoxStats box_stats(const Eigen::Ref<const VectorXd>& a)
{
    if (a.size() == 0)
        throw Error(ErrorCode::EmptyInput, "box_stats of empty data");
    const VectorXd s = sorted(a);
    return {s(0), quantile_sorted(s, 0.25), quantile_sorted(s, 0.5), quantile_sorted(s, 0.75), s(s.size() - 1)};
}

LatentRecovery latent_recovery(const MatrixXd& z_inferred, const MatrixXd& z_true)
{
    const Index T = z_inferred.rows(), dz = z_inferred.cols();
    if (z_true.rows() != T)
        throw Error(ErrorCode::LengthMismatch, "inferred and true latents differ in length");
    if (T <= dz + 1 || z_true.cols() == 0)
        throw Error(ErrorCode::InvalidArgument, "latent recovery needs more rows than d_z + 1");
    const Index n_fit = T / 2;
    const Index n_eval = T - n_fit;
    if (n_fit < dz + 1 || n_eval < 1)
        throw Error(ErrorCode::InvalidArgument, "too few rows to fit the affine alignment");

    MatrixXd X(T, dz + 1);
    X << z_inferred, VectorXd::Ones(T);
    const MatrixXd Xf = X.topRows(n_fit);
    const MatrixXd Yf = z_true.topRows(n_fit);

    MatrixXd beta;
    Eigen::ColPivHouseholderQR<MatrixXd> qr(Xf);
    if (qr.rank() == Xf.cols()) {
        beta = qr.solve(Yf);
    } else {
        const MatrixXd gram = Xf.transpose() * Xf + 1e-8 * MatrixXd::Identity(dz + 1, dz + 1);
        beta = gram.ldlt().solve(Xf.transpose() * Yf);
    }
    if (!beta.allFinite())
        throw Error(ErrorCode::RankDeficient, "affine latent alignment is singular");

    const MatrixXd Ye = z_true.bottomRows(n_eval);
    LatentRecovery r;
    r.aligned = (X.bottomRows(n_eval) * beta - Ye).squaredNorm() / static_cast<double>(Ye.size());
    const Index shared = std::min(dz, z_true.cols());
    r.raw = (z_inferred.bottomRows(n_eval).leftCols(shared) - Ye.leftCols(shared)).squaredNorm() /
            static_cast<double>(n_eval * shared);
    r.var_true = (Ye.rowwise() - Ye.colwise().mean()).squaredNorm() / static_cast<double>(Ye.size());
    return r;
}

double z_recovery_error(const MatrixXd& z_inferred, const MatrixXd& z_true)
{
    return latent_recovery(z_inferred, z_true).aligned;
}

double conditional_independence_score(const MatrixXd& residuals)
{
    const Index n = residuals.rows(), k = residuals.cols();
    if (n < 30 || k < 2)
        throw Error(ErrorCode::InvalidArgument, "conditional independence score needs n >= 30 and k >= 2");
    const MatrixXd c = residuals.rowwise() - residuals.colwise().mean();
    const VectorXd sd = c.colwise().norm();
    for (Index j = 0; j < k; ++j)
        if (!(sd(j) > 0.0))
            throw Error(ErrorCode::DegenerateColumn, "residual column " + std::to_string(j) + " has zero variance");
    const MatrixXd corr = (c.transpose() * c).array() / (sd * sd.transpose()).array();
    double sum = 0.0;
    for (Index i = 0; i < k; ++i)
        for (Index j = 0; j < k; ++j)
            if (i != j)
                sum += std::min(1.0, std::abs(corr(i, j)));
    return sum / static_cast<double>(k * (k - 1));
}

}  // namespace deconfbc
