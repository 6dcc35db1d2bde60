#include "deconfbc/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "deconfbc/error.hpp"

namespace deconfbc {

int ParamLayout::add(const std::string& name, Eigen::Index rows, Eigen::Index cols)
{
    blocks_.push_back({name, size_, rows, cols});
    size_ += rows * cols;
    return static_cast<int>(blocks_.size()) - 1;
}

int ParamLayout::find(const std::string& name) const
{
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        if (blocks_[i].name == name)
            return static_cast<int>(i);
    return -1;
}

void init_fan_in(const ParamLayout& layout, Eigen::VectorXd& theta, Rng& rng, const std::vector<Eigen::Index>& fan_in)
{
    theta.setZero(layout.size());
    for (std::size_t i = 0; i < layout.blocks().size(); ++i) {
        const auto& b = layout.blocks()[i];
        if (b.name.rfind("b_", 0) == 0)
            continue;
        const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(1, fan_in[i])));
        for (Eigen::Index j = 0; j < b.size(); ++j)
            theta(b.offset + j) = rng.uniform(-bound, bound);
    }
}

void adam_step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, AdamState& s, double lr, double beta1,
               double beta2, double eps)
{
    if (s.m.size() != theta.size()) {
        s.m.setZero(theta.size());
        s.v.setZero(theta.size());
        s.step = 0;
    }
    ++s.step;
    s.m = beta1 * s.m + (1.0 - beta1) * grad;
    s.v = beta2 * s.v + (1.0 - beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(s.step));
    theta.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + eps);
}

double clip_global_norm(Eigen::VectorXd& grad, double max_norm)
{
    const double norm = grad.norm();
    if (norm > max_norm && norm > 0.0)
        grad *= max_norm / norm;
    return norm;
}

TrainHistory fit(Eigen::VectorXd& theta, std::size_t n_train, const BatchObjective& objective,
                 const Evaluator& validate, const TrainOptions& opt)
{
    if (n_train == 0)
        throw Error(ErrorCode::EmptyInput, "training set is empty");
    if (opt.epochs < 1 || opt.batch_size < 1 || !(opt.lr > 0.0) || !(opt.grad_clip > 0.0))
        throw Error(ErrorCode::ConfigInvalid, "epochs, batch_size, lr and grad_clip must be positive");

    Rng rng(opt.seed);
    AdamState adam;
    TrainHistory hist;
    Eigen::VectorXd best = theta;
    hist.best_val = validate(theta);
    if (!std::isfinite(hist.best_val))
        throw Error(ErrorCode::NonFiniteLoss, "non-finite validation loss before epoch 0");
    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Eigen::VectorXd grad(theta.size());
    int since_best = 0;

    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        rng.shuffle(order);
        double sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t b0 = 0; b0 < n_train; b0 += static_cast<std::size_t>(opt.batch_size)) {
            const std::size_t b1 = std::min(n_train, b0 + static_cast<std::size_t>(opt.batch_size));
            std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(b0),
                                           order.begin() + static_cast<std::ptrdiff_t>(b1));
            grad.setZero();
            const double loss = objective(theta, batch, grad);
            if (!std::isfinite(loss) || !grad.allFinite())
                throw Error(ErrorCode::NonFiniteLoss, "non-finite training loss at epoch " + std::to_string(epoch));
            clip_global_norm(grad, opt.grad_clip);
            adam_step(theta, grad, adam, opt.lr);
            sum += loss;
            ++batches;
        }
        const double val = validate(theta);
        if (!std::isfinite(val))
            throw Error(ErrorCode::NonFiniteLoss, "non-finite validation loss at epoch " + std::to_string(epoch));
        hist.train_loss.push_back(sum / static_cast<double>(batches));
        hist.val_loss.push_back(val);
        if (val < hist.best_val) {
            hist.best_val = val;
            hist.best_epoch = epoch;
            best = theta;
            since_best = 0;
        } else {
            ++since_best;
        }
        if (opt.verbose)
            std::fprintf(stderr, "%s epoch %d train %.6f val %.6f\n", opt.label.c_str(), epoch,
                         hist.train_loss.back(), val);
        if (since_best >= opt.patience)
            break;
    }
    theta = best;
    return hist;
}

double relative_error(double analytic, double numeric)
{
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-12});
}

std::vector<Eigen::Index> sample_coordinates(const ParamLayout& layout, Eigen::Index minimum, Rng& rng)
{
    std::vector<Eigen::Index> coords;
    const auto nblocks = static_cast<Eigen::Index>(layout.blocks().size());
    if (layout.size() <= minimum) {
        coords.resize(static_cast<std::size_t>(layout.size()));
        std::iota(coords.begin(), coords.end(), Eigen::Index{0});
        return coords;
    }
    const Eigen::Index per_block = (minimum + nblocks - 1) / nblocks;
    std::vector<char> taken(static_cast<std::size_t>(layout.size()), 0);
    for (const auto& b : layout.blocks()) {
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(b.size()));
        std::iota(idx.begin(), idx.end(), b.offset);
        rng.shuffle(idx);
        for (Eigen::Index i = 0; i < std::min(per_block, b.size()); ++i) {
            coords.push_back(idx[static_cast<std::size_t>(i)]);
            taken[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = 1;
        }
    }
    while (static_cast<Eigen::Index>(coords.size()) < minimum) {
        const auto c = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(layout.size())));
        if (!taken[static_cast<std::size_t>(c)]) {
            taken[static_cast<std::size_t>(c)] = 1;
            coords.push_back(c);
        }
    }
    std::sort(coords.begin(), coords.end());
    return coords;
}

double check_gradient(const std::function<double(const Eigen::VectorXd&)>& loss, const Eigen::VectorXd& theta,
                      const Eigen::VectorXd& analytic, const std::vector<Eigen::Index>& coords, double eps)
{
    if (!(eps >= 1e-7 && eps <= 1e-3))
        throw Error(ErrorCode::InvalidArgument, "gradient check epsilon must lie in [1e-7, 1e-3]");
    Eigen::VectorXd probe = theta;
    double worst = 0.0;
    for (Eigen::Index c : coords) {
        const double orig = probe(c);
        probe(c) = orig + eps;
        const double up = loss(probe);
        probe(c) = orig - eps;
        const double down = loss(probe);
        probe(c) = orig;
        worst = std::max(worst, relative_error(analytic(c), (up - down) / (2.0 * eps)));
    }
    return worst;
}

}  // namespace deconfbc
