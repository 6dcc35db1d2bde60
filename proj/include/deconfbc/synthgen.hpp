#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "deconfbc/core.hpp"

namespace deconfbc {

struct SynthConfig {
    int n_locations = 500;
    int T = 3650;
    int k_treatments = 3;
    int p = 5;
    int r = 1;
    double gamma = 1.0;
    double noise_std = 0.1;
    std::uint64_t seed = 0;

    // Shape of the regional coefficient template.
    double ar_modulus = 0.9;
    double z_period_min = 48.0, z_period_max = 120.0;
    double x_period_min = 22.0, x_period_max = 30.0;
    double z_root_min = 0.0, z_root_max = 0.2;  // real roots of the latent autoregression
    double x_root_max = 0.2;                    // real roots of the hidden covariate autoregressions
    double c_scale = 0.6;
    double d_scale = 1.5;
    double d_coupling = 0.1;
    double e_scale = 0.5;
    double f_a_scale = 0.5;
    double f_x_scale = 0.25;
    double jitter = 0.1;
    int burn_in = 300;
};

/// Coefficients of one source: X' = tanh(sum B_i X + gamma C Z), A = tanh(D X + gamma E Z),
/// Y = c0 + f_a A + f_x X + gamma g Z.
struct SourceCoefficients {
    std::vector<Eigen::MatrixXd> B;  // p blocks, k x k
    Eigen::MatrixXd C, D, E;
    Eigen::VectorXd f_a, f_x, g;
    double c0 = 0.0;
};

struct LocationCoefficients {
    std::vector<Eigen::MatrixXd> alpha;  // p blocks, r x r
    SourceCoefficients gcm, obs;
};

struct SyntheticDataset {
    TwoSourceDataset data;
    std::vector<Eigen::MatrixXd> true_z;    // per location, T x r
    std::vector<Eigen::MatrixXd> hidden_x_g;  // per location, T x k
    std::vector<Eigen::MatrixXd> hidden_x_o;
    std::vector<LocationCoefficients> coefficients;
};

/// Monic polynomial prod (z - root_j) written as AR coefficients a_1..a_p.
Eigen::VectorXd ar_from_roots(const std::vector<std::complex<double>>& roots);

/// Spectral radius of the companion matrix of a block autoregression.
double companion_radius(const std::vector<Eigen::MatrixXd>& blocks);

/// Draws the coefficients of one location. Deterministic per (config.seed, location).
LocationCoefficients draw_coefficients(const SynthConfig& config, int location);

SyntheticDataset generate(const SynthConfig& config);

/// Writes true_z_<id>.csv for every location into dir.
std::vector<std::filesystem::path> export_ground_truth(const SyntheticDataset& ds, const std::filesystem::path& dir);

/// Reads a ground-truth file written by export_ground_truth.
Eigen::MatrixXd read_ground_truth(const std::filesystem::path& path);

}  // namespace deconfbc
