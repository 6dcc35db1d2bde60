#pragma once

#include <Eigen/Dense>

namespace deconfbc {

enum class ScalingMode { Additive, Multiplicative };

struct CalibrationPair {
    Eigen::VectorXd model_train;
    Eigen::VectorXd obs_train;
};

inline constexpr double kDegenerateEps = 1e-8;

Eigen::VectorXd linear_scaling(const CalibrationPair& cal, const Eigen::Ref<const Eigen::VectorXd>& model_eval,
                               ScalingMode mode);

/// Matches mean and population standard deviation of the observations.
Eigen::VectorXd variance_scaling(const CalibrationPair& cal, const Eigen::Ref<const Eigen::VectorXd>& model_eval);

/// Empirical quantile mapping; values outside the model table range get the
/// additive correction of the nearest edge quantile.
Eigen::VectorXd quantile_mapping(const CalibrationPair& cal, const Eigen::Ref<const Eigen::VectorXd>& model_eval,
                                 Eigen::Index n_quantiles);

/// Quantile delta mapping. A positive trace_offset is added to every series
/// before multiplicative mapping and removed afterwards.
Eigen::VectorXd quantile_delta_mapping(const Eigen::Ref<const Eigen::VectorXd>& model_hist,
                                       const Eigen::Ref<const Eigen::VectorXd>& obs_hist,
                                       const Eigen::Ref<const Eigen::VectorXd>& model_proj, ScalingMode kind,
                                       Eigen::Index n_quantiles, double trace_offset = 0.0);

}  // namespace deconfbc
