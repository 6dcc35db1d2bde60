#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "deconfbc/random.hpp"

namespace deconfbc {

/// Named matrix blocks laid out contiguously in one flat parameter vector.
class ParamLayout {
public:
    struct Block {
        std::string name;
        Eigen::Index offset = 0;
        Eigen::Index rows = 0;
        Eigen::Index cols = 0;
        Eigen::Index size() const { return rows * cols; }
    };

    /// Appends a block and returns its index.
    int add(const std::string& name, Eigen::Index rows, Eigen::Index cols);
    int find(const std::string& name) const;

    Eigen::Index size() const { return size_; }
    const std::vector<Block>& blocks() const { return blocks_; }
    const Block& block(int id) const { return blocks_[static_cast<std::size_t>(id)]; }

    Eigen::Map<Eigen::MatrixXd> view(Eigen::VectorXd& theta, int id) const
    {
        const Block& b = block(id);
        return {theta.data() + b.offset, b.rows, b.cols};
    }
    Eigen::Map<const Eigen::MatrixXd> view(const Eigen::VectorXd& theta, int id) const
    {
        const Block& b = block(id);
        return {theta.data() + b.offset, b.rows, b.cols};
    }

private:
    std::vector<Block> blocks_;
    Eigen::Index size_ = 0;
};

/// Fills weight blocks uniformly in +-1/sqrt(fan_in); blocks named "b_*" start at zero.
void init_fan_in(const ParamLayout& layout, Eigen::VectorXd& theta, Rng& rng, const std::vector<Eigen::Index>& fan_in);

struct AdamState {
    Eigen::VectorXd m, v;
    std::int64_t step = 0;
};

void adam_step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, AdamState& state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

/// Rescales grad to at most max_norm in L2; returns the norm before clipping.
double clip_global_norm(Eigen::VectorXd& grad, double max_norm);

struct TrainOptions {
    double lr = 1e-3;
    int epochs = 100;
    int batch_size = 64;
    double grad_clip = 5.0;
    int patience = 10;
    std::uint64_t seed = 0;
    bool verbose = false;
    std::string label;
};

struct TrainHistory {
    std::vector<double> train_loss;  // mean minibatch loss per epoch
    std::vector<double> val_loss;    // validation loss after each epoch
    int best_epoch = -1;
    double best_val = 0.0;
};

/// Loss and gradient over a subset of training examples.
using BatchObjective = std::function<double(const Eigen::VectorXd& theta, const std::vector<std::size_t>& batch,
                                            Eigen::VectorXd& grad)>;
using Evaluator = std::function<double(const Eigen::VectorXd& theta)>;

/// Minibatch Adam with seeded shuffling, global-norm clipping and early stopping.
/// theta is left at the parameters with the lowest validation loss.
TrainHistory fit(Eigen::VectorXd& theta, std::size_t n_train, const BatchObjective& objective,
                 const Evaluator& validate, const TrainOptions& opt);

/// Relative error used by the gradient checks.
double relative_error(double analytic, double numeric);

/// At least `minimum` coordinates, spread over every block of the layout.
std::vector<Eigen::Index> sample_coordinates(const ParamLayout& layout, Eigen::Index minimum, Rng& rng);

/// Max relative error between an analytic gradient and central differences of loss.
double check_gradient(const std::function<double(const Eigen::VectorXd&)>& loss, const Eigen::VectorXd& theta,
                      const Eigen::VectorXd& analytic, const std::vector<Eigen::Index>& coords, double eps);

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace deconfbc
