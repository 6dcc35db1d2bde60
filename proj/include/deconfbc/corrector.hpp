#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "deconfbc/core.hpp"
#include "deconfbc/nn.hpp"

namespace deconfbc {

enum class CorrectorKind { VariateAttention, Mlp, Linear };

const char* to_string(CorrectorKind k);
CorrectorKind parse_corrector_kind(const std::string& s);

struct CorrectorConfig {
    CorrectorKind model_kind = CorrectorKind::VariateAttention;
    int d_model = 32;
    int n_heads = 4;
    int mlp_hidden = 32;
    double lr = 1e-3;
    int epochs = 100;
    int batch_size = 64;
    std::uint64_t seed = 0;
    double grad_clip = 5.0;
    int patience = 10;
    bool use_z = true;
};

/// Per-timestep concatenation [a_g, a_o, z]; w x d_f.
Eigen::MatrixXd build_features(const TrajectoryWindow& window, const Eigen::MatrixXd* z, bool use_z);

inline Eigen::Index feature_dim(Eigen::Index d, Eigen::Index d_z, bool use_z)
{
    return 2 * (d - 1) + (use_z ? d_z : 0);
}

struct CorrectorExample {
    Eigen::MatrixXd features;  // w x d_f
    Eigen::VectorXd target;    // k
};

struct CorrectorModel {
    CorrectorConfig config;
    Eigen::Index w = 0, d_f = 0, k = 0;
    ParamLayout layout;
    Eigen::VectorXd theta;

    // linear / mlp
    int W_in = -1, b_in = -1, W_out = -1, b_out = -1;
    // variate attention
    int W_emb = -1, b_emb = -1, W_q = -1, W_k = -1, W_v = -1, W_o = -1;
    int W_ff1 = -1, b_ff1 = -1, W_ff2 = -1, b_ff2 = -1;
};

CorrectorModel init_corrector(const CorrectorConfig& config, Eigen::Index w, Eigen::Index d_f, Eigen::Index k);

/// Predicted normalized delta for one feature tensor.
Eigen::VectorXd predict_delta(const CorrectorModel& model, const Eigen::MatrixXd& features);
Eigen::VectorXd predict_delta(const CorrectorModel& model, const Eigen::VectorXd& theta,
                              const Eigen::MatrixXd& features);

double corrector_loss(const CorrectorModel& model, const std::vector<CorrectorExample>& examples);

double corrector_loss_grad(const CorrectorModel& model, const Eigen::VectorXd& theta,
                           const std::vector<CorrectorExample>& examples, const std::vector<std::size_t>& batch,
                           Eigen::VectorXd& grad);

struct CorrectorTrainResult {
    CorrectorModel model;
    TrainHistory history;
};

CorrectorTrainResult train_corrector(const std::vector<CorrectorExample>& train,
                                     const std::vector<CorrectorExample>& val, const CorrectorConfig& config,
                                     bool verbose = false);

/// Same protocol as the factor model check.
double corrector_grad_check(const CorrectorModel& model, const std::vector<CorrectorExample>& batch, double epsilon,
                            std::uint64_t seed = 0);

/// Maps normalized outcome values to native units.
struct OutcomeScale {
    VariableMeta meta{"y", "", VariableKind::Outcome, Transform::None};
    double mean = 0.0;
    double std = 1.0;

    double to_native(double v) const { return denormalize_value(v, meta, mean, std); }
};

struct CorrectionResult {
    // normalized space
    Eigen::VectorXd y_g_raw, delta_pred, y_corrected, y_obs;
    // native units; y_corrected_native is clipped when requested
    Eigen::VectorXd y_g_native, delta_native, y_corrected_native, y_obs_native;
};

/// y_corrected = y_g + delta in normalized space, then denormalized and optionally clamped at zero.
CorrectionResult apply_correction(const Eigen::VectorXd& y_g_future, const Eigen::VectorXd& delta,
                                  bool clip_nonnegative, const OutcomeScale& scale = {},
                                  const Eigen::VectorXd* y_obs = nullptr);

void save_corrector(const CorrectorModel& model, const std::filesystem::path& path);
CorrectorModel load_corrector(const std::filesystem::path& path);

}  // namespace deconfbc
