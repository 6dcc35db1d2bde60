#include "deconfbc/factor_model.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "deconfbc/error.hpp"
#include "deconfbc/io.hpp"

namespace deconfbc {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

FactorModel init_factor_model(const FactorModelConfig& config, int k_treatments)
{
    if (config.d_z < 1 || config.d_hidden < 1 || config.head_hidden < 1 || config.x_lags < 1 || k_treatments < 1)
        throw Error(ErrorCode::ConfigInvalid, "factor model dimensions must be positive");
    if (!(config.lr > 0.0) || config.epochs < 1 || config.batch_size < 1 || !(config.grad_clip > 0.0))
        throw Error(ErrorCode::ConfigInvalid, "factor model optimizer settings must be positive");

    FactorModel m;
    m.config = config;
    m.k = k_treatments;
    const Index H = config.d_hidden, dz = config.d_z, din = m.input_dim(), hh = config.head_hidden;
    std::vector<Index> fan_in;
    auto add = [&](const std::string& name, Index rows, Index cols, Index fan) {
        fan_in.push_back(fan);
        return m.layout.add(name, rows, cols);
    };
    if (config.use_latent) {
        m.Wg_u = add("W_gate_in", H, din, din + H);
        m.Wg_s = add("W_gate_state", H, H, din + H);
        m.b_g = add("b_gate", H, 1, 1);
        m.Wc_u = add("W_cand_in", H, din, din + H);
        m.Wc_s = add("W_cand_state", H, H, din + H);
        m.b_c = add("b_cand", H, 1, 1);
        m.Wp = add("W_proj", dz, H, H);
        m.b_p = add("b_proj", dz, 1, 1);
        m.L = add("L", dz, 1, 100);
    }
    for (int s = 0; s < 2; ++s) {
        for (int j = 0; j < k_treatments; ++j) {
            const std::string tag = std::string(s == 0 ? "G" : "O") + std::to_string(j + 1);
            m.W1.push_back(add("W_head1_" + tag, hh, m.head_input_dim(), m.head_input_dim()));
            m.b1.push_back(add("b_head1_" + tag, hh, 1, 1));
            m.w2.push_back(add("W_head2_" + tag, 1, hh, hh));
            m.b2.push_back(add("b_head2_" + tag, 1, 1, 1));
        }
    }
    Rng rng(config.seed);
    init_fan_in(m.layout, m.theta, rng, fan_in);
    return m;
}

namespace {

/// Per-step tensors of one batched pass; matrices are [features x batch].
struct EncoderCache {
    std::vector<MatrixXd> U, Sprev, G, C, S, Z;
};

const MatrixXd& row_or_zero(const std::vector<MatrixXd>& rows, Index t, const MatrixXd& zero)
{
    return t >= 0 ? rows[static_cast<std::size_t>(t)] : zero;
}

/// X_t: rows t-1, ..., t-x_lags stacked, (k * x_lags) x B.
MatrixXd covariate(const FactorModel& m, const std::vector<MatrixXd>& rows, Index t, Index B)
{
    const Index k = m.k;
    const MatrixXd zero = MatrixXd::Zero(k, B);
    MatrixXd x(m.x_dim(), B);
    for (int l = 0; l < m.config.x_lags; ++l)
        x.middleRows(l * k, k) = row_or_zero(rows, t - 1 - l, zero);
    return x;
}

/// Runs the recurrence for `steps` latents over batched trajectories of rows
/// Sg[t], So[t] (k x B); step t reads X_{t-1} and row t-1.
void run_encoder(const FactorModel& m, const VectorXd& theta, const std::vector<MatrixXd>& Sg,
                 const std::vector<MatrixXd>& So, Index steps, Index B, EncoderCache& c)
{
    const Index H = m.config.d_hidden, dz = m.config.d_z, k = m.k, dx = m.x_dim(), din = m.input_dim();
    const auto Wg_u = m.layout.view(theta, m.Wg_u);
    const auto Wg_s = m.layout.view(theta, m.Wg_s);
    const auto bg = m.layout.view(theta, m.b_g);
    const auto Wc_u = m.layout.view(theta, m.Wc_u);
    const auto Wc_s = m.layout.view(theta, m.Wc_s);
    const auto bc = m.layout.view(theta, m.b_c);
    const auto Wp = m.layout.view(theta, m.Wp);
    const auto bp = m.layout.view(theta, m.b_p);
    const auto L = m.layout.view(theta, m.L);
    const MatrixXd zero = MatrixXd::Zero(k, B);

    for (auto* v : {&c.U, &c.Sprev, &c.G, &c.C, &c.S, &c.Z})
        v->resize(static_cast<std::size_t>(steps));
    MatrixXd state = MatrixXd::Zero(H, B);
    for (Index t = 0; t < steps; ++t) {
        const auto ti = static_cast<std::size_t>(t);
        MatrixXd& U = c.U[ti];
        U.resize(din, B);
        if (t > 0)
            U.topRows(dz) = c.Z[ti - 1];
        else
            U.topRows(dz).setZero();
        U.middleRows(dz, dx) = covariate(m, Sg, t - 1, B);
        U.middleRows(dz + dx, k) = row_or_zero(Sg, t - 1, zero);
        U.middleRows(dz + dx + k, dx) = covariate(m, So, t - 1, B);
        U.middleRows(dz + 2 * dx + k, k) = row_or_zero(So, t - 1, zero);
        U.bottomRows(dz) = L.replicate(1, B);

        c.Sprev[ti] = state;
        MatrixXd ag = Wg_u * U + Wg_s * state;
        ag.colwise() += bg.col(0);
        MatrixXd ac = Wc_u * U + Wc_s * state;
        ac.colwise() += bc.col(0);
        c.G[ti] = ag.unaryExpr([](double x) { return sigmoid(x); });
        c.C[ti] = ac.array().tanh().matrix();
        state = ((1.0 - c.G[ti].array()) * state.array() + c.G[ti].array() * c.C[ti].array()).matrix();
        c.S[ti] = state;
        MatrixXd z = Wp * state;
        z.colwise() += bp.col(0);
        c.Z[ti] = std::move(z);
    }
}

/// Batched rows of the windows' trajectories: rows[t] is k x B.
void gather_rows(const std::vector<TrajectoryWindow>& windows, const std::vector<std::size_t>& batch,
                 std::vector<MatrixXd>& Sg, std::vector<MatrixXd>& So)
{
    const TrajectoryWindow& w0 = windows[batch.front()];
    const Index h = w0.x_g.rows(), n = h + w0.a_g.rows(), k = w0.a_g.cols();
    const auto B = static_cast<Index>(batch.size());
    Sg.assign(static_cast<std::size_t>(n), MatrixXd(k, B));
    So.assign(static_cast<std::size_t>(n), MatrixXd(k, B));
    for (Index b = 0; b < B; ++b) {
        const TrajectoryWindow& w = windows[batch[static_cast<std::size_t>(b)]];
        if (w.x_g.rows() != h || w.a_g.rows() != n - h || w.a_g.cols() != k)
            throw Error(ErrorCode::ShapeMismatch, "windows in a batch must share one shape");
        for (Index t = 0; t < h; ++t) {
            Sg[static_cast<std::size_t>(t)].col(b) = w.x_g.row(t).transpose();
            So[static_cast<std::size_t>(t)].col(b) = w.x_o.row(t).transpose();
        }
        for (Index t = h; t < n; ++t) {
            Sg[static_cast<std::size_t>(t)].col(b) = w.a_g.row(t - h).transpose();
            So[static_cast<std::size_t>(t)].col(b) = w.a_o.row(t - h).transpose();
        }
    }
}

MatrixXd head_input(const FactorModel& m, const MatrixXd& x, const MatrixXd* z)
{
    if (!m.config.use_latent)
        return x;
    MatrixXd in(m.head_input_dim(), x.cols());
    in << x, *z;
    return in;
}

struct HeadOut {
    MatrixXd hidden;  // hh x B
    Eigen::RowVectorXd pred;
};

HeadOut head_forward(const FactorModel& m, const VectorXd& theta, int head, const MatrixXd& in)
{
    const std::size_t i = static_cast<std::size_t>(head);
    MatrixXd a = m.layout.view(theta, m.W1[i]) * in;
    a.colwise() += m.layout.view(theta, m.b1[i]).col(0);
    HeadOut out;
    out.hidden = a.array().tanh().matrix();
    out.pred = m.layout.view(theta, m.w2[i]) * out.hidden;
    out.pred.array() += m.layout.view(theta, m.b2[i])(0, 0);
    return out;
}

/// Loss over windows[batch]; accumulates the gradient when grad is non-null.
double batch_loss(const FactorModel& m, const VectorXd& theta, const std::vector<TrajectoryWindow>& windows,
                  const std::vector<std::size_t>& batch, VectorXd* grad)
{
    if (batch.empty())
        throw Error(ErrorCode::EmptyInput, "factor loss of an empty batch");
    std::vector<MatrixXd> Sg, So;
    gather_rows(windows, batch, Sg, So);
    const TrajectoryWindow& w0 = windows[batch.front()];
    const Index h = w0.x_g.rows(), n = static_cast<Index>(Sg.size()), k = m.k;
    const auto B = static_cast<Index>(batch.size());
    if (w0.a_g.cols() != k)
        throw Error(ErrorCode::ShapeMismatch, "window treatment count differs from the model");
    const Index dz = m.config.d_z;
    const bool latent = m.config.use_latent;

    EncoderCache cache;
    if (latent)
        run_encoder(m, theta, Sg, So, n, B, cache);

    const double count = static_cast<double>(B * (n - h) * 2 * k);
    double loss = 0.0;
    std::vector<MatrixXd> dZ;
    if (grad && latent)
        dZ.assign(static_cast<std::size_t>(n), MatrixXd::Zero(dz, B));

    for (Index t = h; t < n; ++t) {
        const auto ti = static_cast<std::size_t>(t);
        for (int s = 0; s < 2; ++s) {
            const std::vector<MatrixXd>& rows = s == 0 ? Sg : So;
            const MatrixXd in = head_input(m, covariate(m, rows, t, B), latent ? &cache.Z[ti] : nullptr);
            for (Index j = 0; j < k; ++j) {
                const int head = s * static_cast<int>(k) + static_cast<int>(j);
                const HeadOut ho = head_forward(m, theta, head, in);
                const Eigen::RowVectorXd err = ho.pred - rows[ti].row(j);
                loss += err.squaredNorm();
                if (!grad)
                    continue;
                const std::size_t hi = static_cast<std::size_t>(head);
                const Eigen::RowVectorXd dp = (2.0 / count) * err;
                auto gw2 = m.layout.view(*grad, m.w2[hi]);
                gw2.noalias() += dp * ho.hidden.transpose();
                m.layout.view(*grad, m.b2[hi])(0, 0) += dp.sum();
                const auto w2 = m.layout.view(theta, m.w2[hi]);
                const MatrixXd da =
                    ((w2.transpose() * dp).array() * (1.0 - ho.hidden.array().square())).matrix();
                auto gW1 = m.layout.view(*grad, m.W1[hi]);
                gW1.noalias() += da * in.transpose();
                m.layout.view(*grad, m.b1[hi]).col(0) += da.rowwise().sum();
                if (latent)
                    dZ[ti].noalias() += (m.layout.view(theta, m.W1[hi]).transpose() * da).bottomRows(dz);
            }
        }
    }
    loss /= count;
    if (!grad || !latent)
        return loss;

    const auto Wg_u = m.layout.view(theta, m.Wg_u);
    const auto Wg_s = m.layout.view(theta, m.Wg_s);
    const auto Wc_u = m.layout.view(theta, m.Wc_u);
    const auto Wc_s = m.layout.view(theta, m.Wc_s);
    const auto Wp = m.layout.view(theta, m.Wp);
    auto gWg_u = m.layout.view(*grad, m.Wg_u);
    auto gWg_s = m.layout.view(*grad, m.Wg_s);
    auto gbg = m.layout.view(*grad, m.b_g);
    auto gWc_u = m.layout.view(*grad, m.Wc_u);
    auto gWc_s = m.layout.view(*grad, m.Wc_s);
    auto gbc = m.layout.view(*grad, m.b_c);
    auto gWp = m.layout.view(*grad, m.Wp);
    auto gbp = m.layout.view(*grad, m.b_p);
    auto gL = m.layout.view(*grad, m.L);

    MatrixXd dS_next = MatrixXd::Zero(m.config.d_hidden, B);
    MatrixXd dZ_next = MatrixXd::Zero(dz, B);
    for (Index t = n - 1; t >= 0; --t) {
        const auto ti = static_cast<std::size_t>(t);
        const MatrixXd dz_t = dZ[ti] + dZ_next;
        gWp.noalias() += dz_t * cache.S[ti].transpose();
        gbp.col(0) += dz_t.rowwise().sum();
        const MatrixXd dS = Wp.transpose() * dz_t + dS_next;

        const auto& G = cache.G[ti].array();
        const auto& C = cache.C[ti].array();
        const auto& Sp = cache.Sprev[ti].array();
        const MatrixXd dag = (dS.array() * (C - Sp) * G * (1.0 - G)).matrix();
        const MatrixXd dac = (dS.array() * G * (1.0 - C.square())).matrix();

        gWg_u.noalias() += dag * cache.U[ti].transpose();
        gWg_s.noalias() += dag * cache.Sprev[ti].transpose();
        gbg.col(0) += dag.rowwise().sum();
        gWc_u.noalias() += dac * cache.U[ti].transpose();
        gWc_s.noalias() += dac * cache.Sprev[ti].transpose();
        gbc.col(0) += dac.rowwise().sum();

        const MatrixXd dU = Wg_u.transpose() * dag + Wc_u.transpose() * dac;
        dS_next = (dS.array() * (1.0 - G)).matrix() + Wg_s.transpose() * dag + Wc_s.transpose() * dac;
        dZ_next = dU.topRows(dz);
        gL.col(0) += dU.bottomRows(dz).rowwise().sum();
    }
    return loss;
}

std::vector<std::size_t> all_indices(std::size_t n)
{
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i)
        idx[i] = i;
    return idx;
}

/// Evaluates f on consecutive chunks of equal-shaped windows and returns the count-weighted mean.
template <typename F>
double chunked_mean(const std::vector<TrajectoryWindow>& windows, F&& f)
{
    if (windows.empty())
        throw Error(ErrorCode::EmptyInput, "no windows to evaluate");
    const std::size_t chunk = 256;
    double sum = 0.0;
    for (std::size_t b0 = 0; b0 < windows.size(); b0 += chunk) {
        std::vector<std::size_t> idx;
        for (std::size_t i = b0; i < std::min(windows.size(), b0 + chunk); ++i)
            idx.push_back(i);
        sum += f(idx) * static_cast<double>(idx.size());
    }
    return sum / static_cast<double>(windows.size());
}

std::vector<MatrixXd> split_rows(const MatrixXd& traj)
{
    std::vector<MatrixXd> rows(static_cast<std::size_t>(traj.rows()));
    for (Index t = 0; t < traj.rows(); ++t)
        rows[static_cast<std::size_t>(t)] = traj.row(t).transpose();
    return rows;
}

}  // namespace

MatrixXd infer_latents(const FactorModel& m, const MatrixXd& traj_g, const MatrixXd& traj_o)
{
    if (!m.config.use_latent)
        throw Error(ErrorCode::LatentMissing, "model was built without a latent encoder");
    if (traj_g.rows() != traj_o.rows())
        throw Error(ErrorCode::MisalignedSources, "GCM and observation trajectories differ in length");
    if ((traj_g.rows() > 0 && traj_g.cols() != m.k) || (traj_o.rows() > 0 && traj_o.cols() != m.k))
        throw Error(ErrorCode::ShapeMismatch, "trajectory width differs from the model's treatment count");
    const auto Sg = split_rows(traj_g);
    const auto So = split_rows(traj_o);
    EncoderCache c;
    run_encoder(m, m.theta, Sg, So, traj_g.rows() + 1, 1, c);
    MatrixXd z(traj_g.rows() + 1, m.config.d_z);
    for (Index t = 0; t < z.rows(); ++t)
        z.row(t) = c.Z[static_cast<std::size_t>(t)].col(0).transpose();
    return z;
}

std::pair<VectorXd, VectorXd> predict_treatments(const FactorModel& m, const Eigen::Ref<const VectorXd>& z_t,
                                                 const Eigen::Ref<const VectorXd>& x_t_g,
                                                 const Eigen::Ref<const VectorXd>& x_t_o)
{
    if (x_t_g.size() != m.x_dim() || x_t_o.size() != m.x_dim() || (m.config.use_latent && z_t.size() != m.config.d_z))
        throw Error(ErrorCode::ShapeMismatch, "predict_treatments input shapes differ from the model");
    std::pair<VectorXd, VectorXd> out{VectorXd(m.k), VectorXd(m.k)};
    const MatrixXd z = z_t;
    for (int s = 0; s < 2; ++s) {
        const MatrixXd x = s == 0 ? MatrixXd(x_t_g) : MatrixXd(x_t_o);
        const MatrixXd in = head_input(m, x, &z);
        VectorXd& dst = s == 0 ? out.first : out.second;
        for (int j = 0; j < m.k; ++j)
            dst(j) = head_forward(m, m.theta, s * m.k + j, in).pred(0);
    }
    return out;
}

double factor_loss(const FactorModel& m, const std::vector<TrajectoryWindow>& windows)
{
    return chunked_mean(windows, [&](const std::vector<std::size_t>& idx) {
        return batch_loss(m, m.theta, windows, idx, nullptr);
    });
}

double factor_loss_grad(const FactorModel& m, const VectorXd& theta, const std::vector<TrajectoryWindow>& windows,
                        const std::vector<std::size_t>& batch, VectorXd& grad)
{
    if (grad.size() != theta.size())
        grad.setZero(theta.size());
    return batch_loss(m, theta, windows, batch, &grad);
}

MatrixXd window_latents(const FactorModel& m, const TrajectoryWindow& w)
{
    const MatrixXd z = infer_latents(m, w.trajectory(Source::G), w.trajectory(Source::O));
    return z.middleRows(w.x_g.rows(), w.a_g.rows());
}

MatrixXd treatment_residuals(const FactorModel& m, const std::vector<TrajectoryWindow>& windows)
{
    if (windows.empty())
        throw Error(ErrorCode::EmptyInput, "no windows for residuals");
    const Index h = windows.front().x_g.rows(), w = windows.front().a_g.rows(), k = m.k;
    MatrixXd R(static_cast<Index>(windows.size()) * w, 2 * k);
    const std::size_t chunk = 256;
    for (std::size_t b0 = 0; b0 < windows.size(); b0 += chunk) {
        std::vector<std::size_t> idx;
        for (std::size_t i = b0; i < std::min(windows.size(), b0 + chunk); ++i)
            idx.push_back(i);
        std::vector<MatrixXd> Sg, So;
        gather_rows(windows, idx, Sg, So);
        const auto B = static_cast<Index>(idx.size());
        EncoderCache cache;
        if (m.config.use_latent)
            run_encoder(m, m.theta, Sg, So, h + w, B, cache);
        for (Index t = h; t < h + w; ++t) {
            const auto ti = static_cast<std::size_t>(t);
            for (int s = 0; s < 2; ++s) {
                const auto& rows = s == 0 ? Sg : So;
                const MatrixXd in = head_input(m, covariate(m, rows, t, B), m.config.use_latent ? &cache.Z[ti] : nullptr);
                for (Index j = 0; j < k; ++j) {
                    const HeadOut ho = head_forward(m, m.theta, s * static_cast<int>(k) + static_cast<int>(j), in);
                    for (Index b = 0; b < B; ++b)
                        R((static_cast<Index>(b0) + b) * w + (t - h), s * k + j) = rows[ti](j, b) - ho.pred(b);
                }
            }
        }
    }
    return R;
}

std::pair<std::vector<Index>, MatrixXd> latent_series(const FactorModel& m, const MatrixXd& series_g,
                                                      const MatrixXd& series_o, int h, int w)
{
    const Index T = series_g.rows(), n = h + w;
    if (series_o.rows() != T)
        throw Error(ErrorCode::MisalignedSources, "GCM and observation series differ in length");
    if (T < n)
        throw Error(ErrorCode::SeriesTooShort, "series shorter than one window");
    std::vector<Index> rows;
    std::vector<VectorXd> zs;
    Index covered = h;  // first row not yet assigned a latent
    for (Index start = 0; covered < T; start += w) {
        const Index s0 = std::min(start, T - n);
        const MatrixXd z = infer_latents(m, series_g.middleRows(s0, n), series_o.middleRows(s0, n));
        for (Index t = covered - s0; t < n; ++t) {
            rows.push_back(s0 + t);
            zs.push_back(z.row(t).transpose());
        }
        covered = s0 + n;
    }
    MatrixXd Z(static_cast<Index>(zs.size()), m.config.d_z);
    for (std::size_t i = 0; i < zs.size(); ++i)
        Z.row(static_cast<Index>(i)) = zs[i].transpose();
    return {rows, Z};
}

FactorTrainResult train_factor_model(const std::vector<TrajectoryWindow>& train,
                                     const std::vector<TrajectoryWindow>& val, const FactorModelConfig& config,
                                     bool verbose)
{
    if (train.empty() || val.empty())
        throw Error(ErrorCode::EmptyInput, "factor model training needs non-empty train and validation windows");
    FactorTrainResult res{init_factor_model(config, static_cast<int>(train.front().a_g.cols())), {}};
    const FactorModel& proto = res.model;
    TrainOptions opt;
    opt.lr = config.lr;
    opt.epochs = config.epochs;
    opt.batch_size = config.batch_size;
    opt.grad_clip = config.grad_clip;
    opt.patience = config.patience;
    opt.seed = derive_seed(config.seed, "factor.batches");
    opt.verbose = verbose;
    opt.label = "factor";
    const std::vector<std::size_t> val_idx = all_indices(val.size());
    res.history = fit(
        res.model.theta, train.size(),
        [&](const VectorXd& theta, const std::vector<std::size_t>& batch, VectorXd& grad) {
            return batch_loss(proto, theta, train, batch, &grad);
        },
        [&](const VectorXd& theta) {
            return chunked_mean(val, [&](const std::vector<std::size_t>& idx) {
                return batch_loss(proto, theta, val, idx, nullptr);
            });
        },
        opt);
    return res;
}

double grad_check(const FactorModel& m, const std::vector<TrajectoryWindow>& batch, double epsilon,
                  std::uint64_t seed)
{
    const std::vector<std::size_t> idx = all_indices(batch.size());
    VectorXd grad = VectorXd::Zero(m.theta.size());
    batch_loss(m, m.theta, batch, idx, &grad);
    Rng rng(seed);
    const auto coords = sample_coordinates(m.layout, 200, rng);
    return check_gradient([&](const VectorXd& th) { return batch_loss(m, th, batch, idx, nullptr); }, m.theta, grad,
                          coords, epsilon);
}

void save_factor_model(const FactorModel& m, const std::filesystem::path& path)
{
    nlohmann::json j;
    j["format"] = "deconfbc.factor_model";
    j["version"] = 1;
    j["k"] = m.k;
    j["config"] = {{"d_z", m.config.d_z},       {"d_hidden", m.config.d_hidden},
                   {"head_hidden", m.config.head_hidden}, {"x_lags", m.config.x_lags}, {"lr", m.config.lr},
                   {"epochs", m.config.epochs}, {"batch_size", m.config.batch_size},
                   {"seed", m.config.seed},     {"grad_clip", m.config.grad_clip},
                   {"patience", m.config.patience}, {"use_latent", m.config.use_latent}};
    std::vector<std::string> theta;
    for (Index i = 0; i < m.theta.size(); ++i)
        theta.push_back(format_double(m.theta(i)));
    j["theta"] = theta;
    std::ofstream out(path);
    if (!out)
        throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    out << j.dump() << '\n';
}

FactorModel load_factor_model(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    try {
        nlohmann::json j;
        in >> j;
        if (j.at("format") != "deconfbc.factor_model")
            throw Error(ErrorCode::IoFailure, path.string() + " is not a factor model checkpoint");
        const auto& c = j.at("config");
        FactorModelConfig cfg;
        cfg.d_z = c.at("d_z");
        cfg.d_hidden = c.at("d_hidden");
        cfg.head_hidden = c.at("head_hidden");
        cfg.x_lags = c.at("x_lags");
        cfg.lr = c.at("lr");
        cfg.epochs = c.at("epochs");
        cfg.batch_size = c.at("batch_size");
        cfg.seed = c.at("seed");
        cfg.grad_clip = c.at("grad_clip");
        cfg.patience = c.at("patience");
        cfg.use_latent = c.at("use_latent");
        FactorModel m = init_factor_model(cfg, j.at("k").get<int>());
        const auto& th = j.at("theta");
        if (static_cast<Index>(th.size()) != m.theta.size())
            throw Error(ErrorCode::ShapeMismatch, path.string() + ": parameter count differs from its config");
        for (Index i = 0; i < m.theta.size(); ++i)
            m.theta(i) = std::stod(th[static_cast<std::size_t>(i)].get<std::string>());
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::IoFailure, path.string() + ": " + e.what());
    }
}

}  // namespace deconfbc
