#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "deconfbc/core.hpp"
#include "deconfbc/nn.hpp"

namespace deconfbc {

struct FactorModelConfig {
    int d_z = 4;
    int d_hidden = 32;
    int head_hidden = 16;
    int x_lags = 2;  // rows stacked into the covariate X_t
    double lr = 1e-3;
    int epochs = 100;
    int batch_size = 64;
    std::uint64_t seed = 0;
    double grad_clip = 5.0;
    int patience = 10;
    bool use_latent = true;  // false drops the recurrent encoder: heads read x_t only
};

/// Recurrent latent encoder plus one head per (source, treatment).
///
/// A trajectory is the sequence of normalized treatment rows of one source.
/// The treatment at step t is row t and the covariate X_t stacks rows
/// t-1, ..., t-x_lags, zero before the start. The cell input at step t is
/// [Z_{t-1}, X^G_{t-1}, A^G_{t-1}, X^O_{t-1}, A^O_{t-1}, L].
struct FactorModel {
    FactorModelConfig config;
    int k = 0;
    ParamLayout layout;
    Eigen::VectorXd theta;

    int Wg_u = -1, Wg_s = -1, b_g = -1;
    int Wc_u = -1, Wc_s = -1, b_c = -1;
    int Wp = -1, b_p = -1, L = -1;
    std::vector<int> W1, b1, w2, b2;  // indexed by source * k + j

    Eigen::Index x_dim() const { return static_cast<Eigen::Index>(k) * config.x_lags; }
    Eigen::Index input_dim() const { return 2 * config.d_z + 2 * (x_dim() + k); }
    Eigen::Index head_input_dim() const { return x_dim() + (config.use_latent ? config.d_z : 0); }
};

FactorModel init_factor_model(const FactorModelConfig& config, int k_treatments);

/// Z_1..Z_{n+1} for trajectories of n rows; row t uses rows strictly before t.
Eigen::MatrixXd infer_latents(const FactorModel& model, const Eigen::MatrixXd& traj_g, const Eigen::MatrixXd& traj_o);

/// Head means for one step: (A^G_t, A^O_t); x_t holds x_lags rows, most recent first.
std::pair<Eigen::VectorXd, Eigen::VectorXd> predict_treatments(const FactorModel& model,
                                                               const Eigen::Ref<const Eigen::VectorXd>& z_t,
                                                               const Eigen::Ref<const Eigen::VectorXd>& x_t_g,
                                                               const Eigen::Ref<const Eigen::VectorXd>& x_t_o);

/// Mean squared treatment error over the current segment of every window and both sources.
double factor_loss(const FactorModel& model, const std::vector<TrajectoryWindow>& windows);

/// Loss and gradient with respect to theta over windows[batch].
double factor_loss_grad(const FactorModel& model, const Eigen::VectorXd& theta,
                        const std::vector<TrajectoryWindow>& windows, const std::vector<std::size_t>& batch,
                        Eigen::VectorXd& grad);

/// Latents of the current segment of each window, w x d_z.
Eigen::MatrixXd window_latents(const FactorModel& model, const TrajectoryWindow& window);

/// Treatment residuals a - a_hat over the current segment; rows stacked by window,
/// columns [G treatments, O treatments].
Eigen::MatrixXd treatment_residuals(const FactorModel& model, const std::vector<TrajectoryWindow>& windows);

/// Latents along a whole normalized series, tiled with windows of h + w rows
/// advancing by w. Returns the row indices covered and their latents.
std::pair<std::vector<Eigen::Index>, Eigen::MatrixXd> latent_series(const FactorModel& model,
                                                                    const Eigen::MatrixXd& series_g,
                                                                    const Eigen::MatrixXd& series_o, int h, int w);

struct FactorTrainResult {
    FactorModel model;
    TrainHistory history;
};

FactorTrainResult train_factor_model(const std::vector<TrajectoryWindow>& train,
                                     const std::vector<TrajectoryWindow>& val, const FactorModelConfig& config,
                                     bool verbose = false);

/// Max relative error of the analytic gradient against central differences on
/// at least 200 coordinates covering every parameter block.
double grad_check(const FactorModel& model, const std::vector<TrajectoryWindow>& batch, double epsilon,
                  std::uint64_t seed = 0);

void save_factor_model(const FactorModel& model, const std::filesystem::path& path);
FactorModel load_factor_model(const std::filesystem::path& path);

}  // namespace deconfbc
