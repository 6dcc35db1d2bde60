#include "deconfbc/synthgen.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "deconfbc/error.hpp"
#include "deconfbc/io.hpp"
#include "deconfbc/random.hpp"

namespace deconfbc {

Eigen::VectorXd ar_from_roots(const std::vector<std::complex<double>>& roots)
{
    std::vector<std::complex<double>> c{1.0};
    for (const auto& r : roots) {
        std::vector<std::complex<double>> next(c.size() + 1, 0.0);
        for (std::size_t i = 0; i < c.size(); ++i) {
            next[i] += c[i];
            next[i + 1] -= r * c[i];
        }
        c = std::move(next);
    }
    Eigen::VectorXd a(static_cast<Eigen::Index>(roots.size()));
    for (std::size_t i = 1; i < c.size(); ++i)
        a(static_cast<Eigen::Index>(i - 1)) = -c[i].real();
    return a;
}

double companion_radius(const std::vector<Eigen::MatrixXd>& blocks)
{
    const auto p = static_cast<Eigen::Index>(blocks.size());
    const Eigen::Index n = blocks.front().rows();
    Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(n * p, n * p);
    for (Eigen::Index i = 0; i < p; ++i)
        comp.block(0, i * n, n, n) = blocks[static_cast<std::size_t>(i)];
    if (p > 1)
        comp.bottomLeftCorner(n * (p - 1), n * (p - 1)).setIdentity();
    Eigen::EigenSolver<Eigen::MatrixXd> es(comp, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

namespace {

void check_config(const SynthConfig& c)
{
    if (c.n_locations < 1 || c.k_treatments < 1 || c.r < 1 || c.p < 2 || c.T <= c.p)
        throw Error(ErrorCode::ConfigInvalid, "synthetic config needs n_locations, k, r >= 1, p >= 2 and T > p");
    if (!(c.gamma >= 0.0 && c.gamma <= 1.0))
        throw Error(ErrorCode::ConfigInvalid, "gamma must lie in [0, 1]");
    if (!(c.noise_std > 0.0))
        throw Error(ErrorCode::ConfigInvalid, "noise_std must be positive");
    if (!(c.z_period_min > 2.0 && c.z_period_max >= c.z_period_min && c.x_period_min > 2.0 &&
          c.x_period_max >= c.x_period_min))
        throw Error(ErrorCode::ConfigInvalid, "oscillation periods must exceed 2 steps");
    if (c.burn_in < 0 || !(c.jitter >= 0.0 && c.jitter < 1.0))
        throw Error(ErrorCode::ConfigInvalid, "burn_in must be >= 0 and jitter in [0, 1)");
    if (!(c.ar_modulus > 0.0 && c.ar_modulus <= 0.9) || !(c.x_root_max >= 0.0 && c.x_root_max <= c.ar_modulus) ||
        !(c.z_root_min >= 0.0 && c.z_root_max >= c.z_root_min && c.z_root_max <= c.ar_modulus))
        throw Error(ErrorCode::UnstableConfig, "autoregressive roots must have modulus at most 0.9");
}

/// Regional template shared by all locations of a dataset.
struct SourceTemplate {
    Eigen::VectorXd theta, small;
    Eigen::MatrixXd C, E, D_off;
    Eigen::VectorXd D_diag, f_a, f_x, g;
    double c0 = 0.0;
};

struct Template {
    Eigen::VectorXd theta_z, small_z;
    SourceTemplate gcm, obs;
};

Eigen::MatrixXd signed_uniform(Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo, double hi)
{
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i)
            m(i, j) = rng.sign() * rng.uniform(lo, hi);
    return m;
}

Eigen::VectorXd angles(Rng& rng, Eigen::Index n, double period_min, double period_max)
{
    Eigen::VectorXd th(n);
    for (Eigen::Index i = 0; i < n; ++i)
        th(i) = rng.uniform(2.0 * std::numbers::pi / period_max, 2.0 * std::numbers::pi / period_min);
    return th;
}

Template draw_template(const SynthConfig& c)
{
    Rng rng(derive_seed(c.seed, "synthgen.template"));
    const Eigen::Index k = c.k_treatments, r = c.r, p = c.p;
    Template tp;
    tp.theta_z = angles(rng, r, c.z_period_min, c.z_period_max);
    tp.small_z = rng.uniform_matrix(p, 1, c.z_root_min, c.z_root_max);
    for (SourceTemplate* s : {&tp.gcm, &tp.obs}) {
        s->theta = angles(rng, k, c.x_period_min, c.x_period_max);
        s->small = rng.uniform_matrix(p, 1, 0.0, c.x_root_max);
        s->C = c.c_scale * signed_uniform(rng, k, r, 0.5, 1.0);
        s->D_diag = c.d_scale * signed_uniform(rng, k, 1, 0.8, 1.2);
        s->D_off = c.d_coupling * rng.normal_matrix(k, k);
        s->D_off.diagonal().setZero();
        s->E = c.e_scale * signed_uniform(rng, k, r, 0.5, 1.0);
        s->f_a = c.f_a_scale * rng.normal_matrix(k, 1);
        s->f_x = c.f_x_scale * rng.normal_matrix(k, 1);
        s->c0 = 0.5 * rng.normal();
    }
    tp.obs.g = signed_uniform(rng, r, 1, 0.5, 1.0);
    tp.gcm.g = tp.obs.g.cwiseProduct(rng.uniform_matrix(r, 1, -0.5, 0.5));
    return tp;
}

/// AR blocks for n independent coordinates, each with one complex root pair.
std::vector<Eigen::MatrixXd> oscillator_blocks(const Eigen::VectorXd& theta, const Eigen::VectorXd& small, int p,
                                               double modulus)
{
    const Eigen::Index n = theta.size();
    std::vector<Eigen::MatrixXd> blocks(static_cast<std::size_t>(p), Eigen::MatrixXd::Zero(n, n));
    for (Eigen::Index j = 0; j < n; ++j) {
        std::vector<std::complex<double>> roots{std::polar(modulus, theta(j)), std::polar(modulus, -theta(j))};
        for (int i = 0; i < p - 2; ++i)
            roots.emplace_back(small(i), 0.0);
        const Eigen::VectorXd a = ar_from_roots(roots);
        for (int i = 0; i < p; ++i)
            blocks[static_cast<std::size_t>(i)](j, j) = a(i);
    }
    return blocks;
}

class Jitter {
public:
    Jitter(Rng& rng, double amount) : rng_(rng), amount_(amount) {}
    Eigen::MatrixXd operator()(const Eigen::MatrixXd& m)
    {
        Eigen::MatrixXd out = m;
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i)
                out(i, j) *= 1.0 + amount_ * rng_.uniform(-1.0, 1.0);
        return out;
    }

private:
    Rng& rng_;
    double amount_;
};

LocationCoefficients jittered(const SynthConfig& c, const Template& tp, int location)
{
    Rng rng(stream_seed(stream_seed(c.seed, static_cast<std::uint64_t>(location)), 0));
    Jitter J(rng, c.jitter);
    LocationCoefficients lc;
    lc.alpha = oscillator_blocks(J(tp.theta_z), tp.small_z, c.p, c.ar_modulus);
    for (Source src : {Source::G, Source::O}) {
        const SourceTemplate& st = src == Source::G ? tp.gcm : tp.obs;
        SourceCoefficients& sc = src == Source::G ? lc.gcm : lc.obs;
        sc.B = oscillator_blocks(J(st.theta), st.small, c.p, c.ar_modulus);
        sc.C = J(st.C);
        Eigen::MatrixXd D = J(st.D_off);
        D.diagonal() = J(st.D_diag);
        sc.D = D;
        sc.E = J(st.E);
        sc.f_a = J(st.f_a);
        sc.f_x = J(st.f_x);
        sc.g = J(st.g);
        sc.c0 = st.c0;
    }
    return lc;
}

void check_stability(const LocationCoefficients& lc, double bound)
{
    const double tol = 1e-9;
    if (companion_radius(lc.alpha) > bound + tol || companion_radius(lc.gcm.B) > bound + tol ||
        companion_radius(lc.obs.B) > bound + tol)
        throw Error(ErrorCode::UnstableConfig, "autoregressive spectral radius exceeds " + format_double(bound));
}

}  // namespace

LocationCoefficients draw_coefficients(const SynthConfig& config, int location)
{
    check_config(config);
    const LocationCoefficients lc = jittered(config, draw_template(config), location);
    check_stability(lc, 0.9);
    return lc;
}

namespace {

struct LocationDraw {
    Eigen::MatrixXd z, x_g, x_o, v_g, v_o;
};

LocationDraw simulate(const SynthConfig& c, const LocationCoefficients& lc, int location)
{
    const std::uint64_t base = stream_seed(c.seed, static_cast<std::uint64_t>(location));
    Rng rng_z(stream_seed(base, 1));
    Rng rng_s(stream_seed(base, 2));
    const int k = c.k_treatments, r = c.r, p = c.p;
    const int n = c.T + c.burn_in;
    const double sd = c.noise_std;

    Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(n, r);
    Eigen::MatrixXd X[2] = {Eigen::MatrixXd::Zero(n, k), Eigen::MatrixXd::Zero(n, k)};
    Eigen::MatrixXd V[2] = {Eigen::MatrixXd(n, k + 1), Eigen::MatrixXd(n, k + 1)};
    const SourceCoefficients* sc[2] = {&lc.gcm, &lc.obs};

    for (int t = 0; t < n; ++t) {
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(r);
        for (int i = 0; i < p && t - i - 1 >= 0; ++i)
            acc.noalias() += lc.alpha[static_cast<std::size_t>(i)] * Z.row(t - i - 1).transpose();
        for (int j = 0; j < r; ++j)
            Z(t, j) = std::tanh(acc(j)) + sd * rng_z.normal();
        const Eigen::VectorXd z = Z.row(t).transpose();

        for (int s = 0; s < 2; ++s) {
            const SourceCoefficients& q = *sc[s];
            Eigen::VectorXd u = c.gamma * q.C * z;
            for (int i = 0; i < p && t - i - 1 >= 0; ++i)
                u.noalias() += q.B[static_cast<std::size_t>(i)] * X[s].row(t - i - 1).transpose();
            for (int j = 0; j < k; ++j)
                X[s](t, j) = std::tanh(u(j)) + sd * rng_s.normal();
            const Eigen::VectorXd x = X[s].row(t).transpose();
            const Eigen::VectorXd arg = q.D * x + c.gamma * q.E * z;
            Eigen::VectorXd a(k);
            for (int j = 0; j < k; ++j)
                a(j) = std::tanh(arg(j)) + sd * rng_s.normal();
            V[s].row(t).head(k) = a.transpose();
            V[s](t, k) = q.c0 + q.f_a.dot(a) + q.f_x.dot(x) + c.gamma * q.g.dot(z) + sd * rng_s.normal();
        }
    }
    const int b = c.burn_in;
    return {Z.bottomRows(n - b), X[0].bottomRows(n - b), X[1].bottomRows(n - b), V[0].bottomRows(n - b),
            V[1].bottomRows(n - b)};
}

std::string location_id(int i)
{
    char buf[16];
    std::snprintf(buf, sizeof buf, "loc%04d", i);
    return buf;
}

}  // namespace

SyntheticDataset generate(const SynthConfig& config)
{
    check_config(config);
    const Template tp = draw_template(config);
    SyntheticDataset out;
    for (int j = 0; j < config.k_treatments; ++j)
        out.data.meta.push_back({"a" + std::to_string(j + 1), "1", VariableKind::Covariate, Transform::ZScore});
    out.data.meta.push_back({"y", "1", VariableKind::Outcome, Transform::ZScore});

    std::vector<std::int64_t> ts(static_cast<std::size_t>(config.T));
    for (int t = 0; t < config.T; ++t)
        ts[static_cast<std::size_t>(t)] = t;

    for (int i = 0; i < config.n_locations; ++i) {
        LocationCoefficients lc = jittered(config, tp, i);
        check_stability(lc, 0.9);
        LocationDraw d = simulate(config, lc, i);
        LocationSeries loc;
        loc.id = location_id(i);
        loc.gcm = {Source::G, std::move(d.v_g), ts};
        loc.obs = {Source::O, std::move(d.v_o), ts};
        out.data.locations.push_back(std::move(loc));
        out.true_z.push_back(std::move(d.z));
        out.hidden_x_g.push_back(std::move(d.x_g));
        out.hidden_x_o.push_back(std::move(d.x_o));
        out.coefficients.push_back(std::move(lc));
    }
    return out;
}

std::vector<std::filesystem::path> export_ground_truth(const SyntheticDataset& ds, const std::filesystem::path& dir)
{
    std::vector<std::filesystem::path> written;
    for (std::size_t i = 0; i < ds.true_z.size(); ++i) {
        const auto& z = ds.true_z[i];
        std::vector<std::string> cols;
        for (Eigen::Index j = 0; j < z.cols(); ++j)
            cols.push_back("z" + std::to_string(j + 1));
        const auto path = dir / ("true_z_" + ds.data.locations[i].id + ".csv");
        write_csv(path, cols, ds.data.locations[i].gcm.timestamps, z);
        written.push_back(path);
    }
    return written;
}

Eigen::MatrixXd read_ground_truth(const std::filesystem::path& path)
{
    return read_csv(path).values;
}

}  // namespace deconfbc
