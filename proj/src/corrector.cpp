#include "deconfbc/corrector.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "deconfbc/error.hpp"
#include "deconfbc/io.hpp"

namespace deconfbc {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

const char* to_string(CorrectorKind k)
{
    switch (k) {
    case CorrectorKind::VariateAttention: return "variate_attention";
    case CorrectorKind::Mlp: return "mlp";
    case CorrectorKind::Linear: return "linear";
    }
    return "linear";
}

CorrectorKind parse_corrector_kind(const std::string& s)
{
    if (s == "variate_attention")
        return CorrectorKind::VariateAttention;
    if (s == "mlp")
        return CorrectorKind::Mlp;
    if (s == "linear")
        return CorrectorKind::Linear;
    throw Error(ErrorCode::ConfigInvalid, "unknown corrector kind '" + s + "'");
}

MatrixXd build_features(const TrajectoryWindow& window, const MatrixXd* z, bool use_z)
{
    const Index w = window.a_g.rows();
    if (window.a_o.rows() != w)
        throw Error(ErrorCode::MisalignedSources, "current segments of the two sources differ in length");
    if (use_z && (z == nullptr || z->size() == 0))
        throw Error(ErrorCode::LatentMissing, "use_z is set but no latent sequence was supplied");
    if (use_z && z->rows() != w)
        throw Error(ErrorCode::ShapeMismatch, "latent rows do not cover the current segment");
    const Index dz = use_z ? z->cols() : 0;
    MatrixXd f(w, window.a_g.cols() + window.a_o.cols() + dz);
    f.leftCols(window.a_g.cols()) = window.a_g;
    f.middleCols(window.a_g.cols(), window.a_o.cols()) = window.a_o;
    if (use_z)
        f.rightCols(dz) = *z;
    return f;
}

CorrectorModel init_corrector(const CorrectorConfig& config, Index w, Index d_f, Index k)
{
    if (w < 1 || d_f < 1 || k < 1)
        throw Error(ErrorCode::ConfigInvalid, "corrector shapes must be positive");
    if (config.d_model < 1 || config.n_heads < 1 || config.mlp_hidden < 1 || config.epochs < 1 ||
        config.batch_size < 1 || !(config.lr > 0.0) || !(config.grad_clip > 0.0))
        throw Error(ErrorCode::ConfigInvalid, "corrector settings must be positive");
    if (config.d_model % config.n_heads != 0)
        throw Error(ErrorCode::ConfigInvalid, "n_heads must divide d_model");

    CorrectorModel m;
    m.config = config;
    m.w = w;
    m.d_f = d_f;
    m.k = k;
    std::vector<Index> fan;
    auto add = [&](const std::string& name, Index rows, Index cols, Index fan_in) {
        fan.push_back(fan_in);
        return m.layout.add(name, rows, cols);
    };
    const Index flat = w * d_f, D = config.d_model;
    switch (config.model_kind) {
    case CorrectorKind::Linear:
        m.W_out = add("W_out", k, flat, flat);
        m.b_out = add("b_out", k, 1, 1);
        break;
    case CorrectorKind::Mlp:
        m.W_in = add("W_in", config.mlp_hidden, flat, flat);
        m.b_in = add("b_in", config.mlp_hidden, 1, 1);
        m.W_out = add("W_out", k, config.mlp_hidden, config.mlp_hidden);
        m.b_out = add("b_out", k, 1, 1);
        break;
    case CorrectorKind::VariateAttention:
        m.W_emb = add("W_embed", D, w * d_f, w);
        m.b_emb = add("b_embed", D, d_f, 1);
        m.W_q = add("W_query", D, D, D);
        m.W_k = add("W_key", D, D, D);
        m.W_v = add("W_value", D, D, D);
        m.W_o = add("W_attn_out", D, D, D);
        m.W_ff1 = add("W_ff1", D, D, D);
        m.b_ff1 = add("b_ff1", D, 1, 1);
        m.W_ff2 = add("W_ff2", D, D, D);
        m.b_ff2 = add("b_ff2", D, 1, 1);
        m.W_out = add("W_out", k, D, D);
        m.b_out = add("b_out", k, 1, 1);
        break;
    }
    Rng rng(config.seed);
    init_fan_in(m.layout, m.theta, rng, fan);
    return m;
}

namespace {

struct AttentionCache {
    MatrixXd E, Q, K, V, O, E1, Hf, E2;
    std::vector<MatrixXd> P;  // per head, tokens x tokens
    VectorXd pooled;
};

VectorXd flatten(const MatrixXd& f) { return Eigen::Map<const VectorXd>(f.data(), f.size()); }

VectorXd attention_forward(const CorrectorModel& m, const VectorXd& th, const MatrixXd& F, AttentionCache& c)
{
    const Index D = m.config.d_model, nv = m.d_f, w = m.w;
    const Index nh = m.config.n_heads, dh = D / nh;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto We = m.layout.view(th, m.W_emb);
    const auto be = m.layout.view(th, m.b_emb);

    c.E.resize(D, nv);
    for (Index v = 0; v < nv; ++v)
        c.E.col(v) = We.middleCols(v * w, w) * F.col(v) + be.col(v);
    c.Q = m.layout.view(th, m.W_q) * c.E;
    c.K = m.layout.view(th, m.W_k) * c.E;
    c.V = m.layout.view(th, m.W_v) * c.E;
    c.O.resize(D, nv);
    c.P.resize(static_cast<std::size_t>(nh));
    for (Index h = 0; h < nh; ++h) {
        MatrixXd S = scale * c.Q.middleRows(h * dh, dh).transpose() * c.K.middleRows(h * dh, dh);
        for (Index i = 0; i < nv; ++i) {
            const double mx = S.row(i).maxCoeff();
            S.row(i) = (S.row(i).array() - mx).exp().matrix();
            S.row(i) /= S.row(i).sum();
        }
        c.O.middleRows(h * dh, dh) = c.V.middleRows(h * dh, dh) * S.transpose();
        c.P[static_cast<std::size_t>(h)] = std::move(S);
    }
    c.E1 = c.E + m.layout.view(th, m.W_o) * c.O;
    MatrixXd a = m.layout.view(th, m.W_ff1) * c.E1;
    a.colwise() += m.layout.view(th, m.b_ff1).col(0);
    c.Hf = a.array().tanh().matrix();
    c.E2 = c.E1 + m.layout.view(th, m.W_ff2) * c.Hf;
    c.E2.colwise() += m.layout.view(th, m.b_ff2).col(0);
    c.pooled = c.E2.rowwise().mean();
    return m.layout.view(th, m.W_out) * c.pooled + m.layout.view(th, m.b_out).col(0);
}

void attention_backward(const CorrectorModel& m, const VectorXd& th, const MatrixXd& F, const AttentionCache& c,
                        const VectorXd& dy, VectorXd& g)
{
    const Index D = m.config.d_model, nv = m.d_f, w = m.w;
    const Index nh = m.config.n_heads, dh = D / nh;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    m.layout.view(g, m.W_out).noalias() += dy * c.pooled.transpose();
    m.layout.view(g, m.b_out).col(0) += dy;
    const VectorXd dp = m.layout.view(th, m.W_out).transpose() * dy;
    const MatrixXd dE2 = (dp / static_cast<double>(nv)).replicate(1, nv);

    m.layout.view(g, m.W_ff2).noalias() += dE2 * c.Hf.transpose();
    m.layout.view(g, m.b_ff2).col(0) += dE2.rowwise().sum();
    const MatrixXd dA1 =
        ((m.layout.view(th, m.W_ff2).transpose() * dE2).array() * (1.0 - c.Hf.array().square())).matrix();
    m.layout.view(g, m.W_ff1).noalias() += dA1 * c.E1.transpose();
    m.layout.view(g, m.b_ff1).col(0) += dA1.rowwise().sum();
    const MatrixXd dE1 = dE2 + m.layout.view(th, m.W_ff1).transpose() * dA1;

    m.layout.view(g, m.W_o).noalias() += dE1 * c.O.transpose();
    const MatrixXd dO = m.layout.view(th, m.W_o).transpose() * dE1;

    MatrixXd dQ(D, nv), dK(D, nv), dV(D, nv);
    for (Index h = 0; h < nh; ++h) {
        const MatrixXd& P = c.P[static_cast<std::size_t>(h)];
        const auto dOh = dO.middleRows(h * dh, dh);
        dV.middleRows(h * dh, dh) = dOh * P;
        const MatrixXd dP = dOh.transpose() * c.V.middleRows(h * dh, dh);
        MatrixXd dS(nv, nv);
        for (Index i = 0; i < nv; ++i) {
            const double dot = P.row(i).dot(dP.row(i));
            dS.row(i) = (P.row(i).array() * (dP.row(i).array() - dot)).matrix();
        }
        dQ.middleRows(h * dh, dh) = scale * c.K.middleRows(h * dh, dh) * dS.transpose();
        dK.middleRows(h * dh, dh) = scale * c.Q.middleRows(h * dh, dh) * dS;
    }
    m.layout.view(g, m.W_q).noalias() += dQ * c.E.transpose();
    m.layout.view(g, m.W_k).noalias() += dK * c.E.transpose();
    m.layout.view(g, m.W_v).noalias() += dV * c.E.transpose();
    const MatrixXd dE = dE1 + m.layout.view(th, m.W_q).transpose() * dQ + m.layout.view(th, m.W_k).transpose() * dK +
                        m.layout.view(th, m.W_v).transpose() * dV;

    auto gWe = m.layout.view(g, m.W_emb);
    auto gbe = m.layout.view(g, m.b_emb);
    for (Index v = 0; v < nv; ++v) {
        gWe.middleCols(v * w, w).noalias() += dE.col(v) * F.col(v).transpose();
        gbe.col(v) += dE.col(v);
    }
}

void check_features(const CorrectorModel& m, const MatrixXd& F)
{
    if (F.rows() != m.w || F.cols() != m.d_f)
        throw Error(ErrorCode::ShapeMismatch, "feature tensor is " + std::to_string(F.rows()) + "x" +
                                                  std::to_string(F.cols()) + ", model expects " +
                                                  std::to_string(m.w) + "x" + std::to_string(m.d_f));
}

/// Prediction for one example; adds d(loss)/d(theta) for the given output gradient when dy_fn is set.
template <typename DyFn>
VectorXd forward_backward(const CorrectorModel& m, const VectorXd& th, const MatrixXd& F, VectorXd* g, DyFn&& dy_fn)
{
    check_features(m, F);
    switch (m.config.model_kind) {
    case CorrectorKind::Linear: {
        const VectorXd f = flatten(F);
        VectorXd y = m.layout.view(th, m.W_out) * f + m.layout.view(th, m.b_out).col(0);
        if (g) {
            const VectorXd dy = dy_fn(y);
            m.layout.view(*g, m.W_out).noalias() += dy * f.transpose();
            m.layout.view(*g, m.b_out).col(0) += dy;
        }
        return y;
    }
    case CorrectorKind::Mlp: {
        const VectorXd f = flatten(F);
        const VectorXd hid =
            (m.layout.view(th, m.W_in) * f + m.layout.view(th, m.b_in).col(0)).array().tanh().matrix();
        VectorXd y = m.layout.view(th, m.W_out) * hid + m.layout.view(th, m.b_out).col(0);
        if (g) {
            const VectorXd dy = dy_fn(y);
            m.layout.view(*g, m.W_out).noalias() += dy * hid.transpose();
            m.layout.view(*g, m.b_out).col(0) += dy;
            const VectorXd da =
                ((m.layout.view(th, m.W_out).transpose() * dy).array() * (1.0 - hid.array().square())).matrix();
            m.layout.view(*g, m.W_in).noalias() += da * f.transpose();
            m.layout.view(*g, m.b_in).col(0) += da;
        }
        return y;
    }
    case CorrectorKind::VariateAttention: {
        AttentionCache c;
        VectorXd y = attention_forward(m, th, F, c);
        if (g)
            attention_backward(m, th, F, c, dy_fn(y), *g);
        return y;
    }
    }
    return {};
}

double batch_loss(const CorrectorModel& m, const VectorXd& th, const std::vector<CorrectorExample>& ex,
                  const std::vector<std::size_t>& batch, VectorXd* g)
{
    if (batch.empty())
        throw Error(ErrorCode::EmptyInput, "corrector loss of an empty batch");
    const double count = static_cast<double>(batch.size()) * static_cast<double>(m.k);
    double loss = 0.0;
    for (std::size_t i : batch) {
        const CorrectorExample& e = ex[i];
        if (e.target.size() != m.k)
            throw Error(ErrorCode::ShapeMismatch, "corrector target length differs from the horizon");
        const VectorXd y = forward_backward(m, th, e.features, g, [&](const VectorXd& out) -> VectorXd {
            return (2.0 / count) * (out - e.target);
        });
        loss += (y - e.target).squaredNorm();
    }
    return loss / count;
}

}  // namespace

VectorXd predict_delta(const CorrectorModel& m, const VectorXd& theta, const MatrixXd& features)
{
    return forward_backward(m, theta, features, nullptr, [](const VectorXd& y) { return y; });
}

VectorXd predict_delta(const CorrectorModel& m, const MatrixXd& features) { return predict_delta(m, m.theta, features); }

double corrector_loss(const CorrectorModel& m, const std::vector<CorrectorExample>& examples)
{
    std::vector<std::size_t> idx(examples.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
        idx[i] = i;
    return batch_loss(m, m.theta, examples, idx, nullptr);
}

double corrector_loss_grad(const CorrectorModel& m, const VectorXd& theta, const std::vector<CorrectorExample>& ex,
                           const std::vector<std::size_t>& batch, VectorXd& grad)
{
    if (grad.size() != theta.size())
        grad.setZero(theta.size());
    return batch_loss(m, theta, ex, batch, &grad);
}

CorrectorTrainResult train_corrector(const std::vector<CorrectorExample>& train,
                                     const std::vector<CorrectorExample>& val, const CorrectorConfig& config,
                                     bool verbose)
{
    if (train.empty() || val.empty())
        throw Error(ErrorCode::EmptyInput, "corrector training needs non-empty train and validation sets");
    for (const auto& e : train)
        if (!e.target.allFinite() || !e.features.allFinite())
            throw Error(ErrorCode::NonFiniteLoss, "corrector training data contains non-finite values");
    const auto& f0 = train.front();
    CorrectorTrainResult res{init_corrector(config, f0.features.rows(), f0.features.cols(), f0.target.size()), {}};
    const CorrectorModel& proto = res.model;
    TrainOptions opt;
    opt.lr = config.lr;
    opt.epochs = config.epochs;
    opt.batch_size = config.batch_size;
    opt.grad_clip = config.grad_clip;
    opt.patience = config.patience;
    opt.seed = derive_seed(config.seed, "corrector.batches");
    opt.verbose = verbose;
    opt.label = "corrector";
    std::vector<std::size_t> val_idx(val.size());
    for (std::size_t i = 0; i < val.size(); ++i)
        val_idx[i] = i;
    res.history = fit(
        res.model.theta, train.size(),
        [&](const VectorXd& th, const std::vector<std::size_t>& batch, VectorXd& grad) {
            return batch_loss(proto, th, train, batch, &grad);
        },
        [&](const VectorXd& th) { return batch_loss(proto, th, val, val_idx, nullptr); }, opt);
    return res;
}

double corrector_grad_check(const CorrectorModel& m, const std::vector<CorrectorExample>& batch, double epsilon,
                            std::uint64_t seed)
{
    std::vector<std::size_t> idx(batch.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
        idx[i] = i;
    VectorXd grad = VectorXd::Zero(m.theta.size());
    batch_loss(m, m.theta, batch, idx, &grad);
    Rng rng(seed);
    const auto coords = sample_coordinates(m.layout, 200, rng);
    return check_gradient([&](const VectorXd& th) { return batch_loss(m, th, batch, idx, nullptr); }, m.theta, grad,
                          coords, epsilon);
}

CorrectionResult apply_correction(const VectorXd& y_g_future, const VectorXd& delta, bool clip_nonnegative,
                                  const OutcomeScale& scale, const VectorXd* y_obs)
{
    if (y_g_future.size() != delta.size() || (y_obs && y_obs->size() != delta.size()))
        throw Error(ErrorCode::LengthMismatch, "apply_correction inputs differ in length");
    CorrectionResult r;
    r.y_g_raw = y_g_future;
    r.delta_pred = delta;
    r.y_corrected = y_g_future + delta;
    const Index k = delta.size();
    r.y_g_native.resize(k);
    r.y_corrected_native.resize(k);
    r.delta_native.resize(k);
    for (Index i = 0; i < k; ++i) {
        r.y_g_native(i) = scale.to_native(r.y_g_raw(i));
        r.y_corrected_native(i) = scale.to_native(r.y_corrected(i));
        r.delta_native(i) = r.y_corrected_native(i) - r.y_g_native(i);
        if (clip_nonnegative && r.y_corrected_native(i) < 0.0)
            r.y_corrected_native(i) = 0.0;
    }
    if (y_obs) {
        r.y_obs = *y_obs;
        r.y_obs_native.resize(k);
        for (Index i = 0; i < k; ++i)
            r.y_obs_native(i) = scale.to_native(r.y_obs(i));
    }
    return r;
}

void save_corrector(const CorrectorModel& m, const std::filesystem::path& path)
{
    nlohmann::json j;
    j["format"] = "deconfbc.corrector";
    j["version"] = 1;
    j["shape"] = {{"w", m.w}, {"d_f", m.d_f}, {"k", m.k}};
    const auto& c = m.config;
    j["config"] = {{"model_kind", to_string(c.model_kind)},
                   {"d_model", c.d_model},
                   {"n_heads", c.n_heads},
                   {"mlp_hidden", c.mlp_hidden},
                   {"lr", c.lr},
                   {"epochs", c.epochs},
                   {"batch_size", c.batch_size},
                   {"seed", c.seed},
                   {"grad_clip", c.grad_clip},
                   {"patience", c.patience},
                   {"use_z", c.use_z}};
    std::vector<std::string> theta;
    for (Index i = 0; i < m.theta.size(); ++i)
        theta.push_back(format_double(m.theta(i)));
    j["theta"] = theta;
    std::ofstream out(path);
    if (!out)
        throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    out << j.dump() << '\n';
}

CorrectorModel load_corrector(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    try {
        nlohmann::json j;
        in >> j;
        if (j.at("format") != "deconfbc.corrector")
            throw Error(ErrorCode::IoFailure, path.string() + " is not a corrector checkpoint");
        const auto& c = j.at("config");
        CorrectorConfig cfg;
        cfg.model_kind = parse_corrector_kind(c.at("model_kind").get<std::string>());
        cfg.d_model = c.at("d_model");
        cfg.n_heads = c.at("n_heads");
        cfg.mlp_hidden = c.at("mlp_hidden");
        cfg.lr = c.at("lr");
        cfg.epochs = c.at("epochs");
        cfg.batch_size = c.at("batch_size");
        cfg.seed = c.at("seed");
        cfg.grad_clip = c.at("grad_clip");
        cfg.patience = c.at("patience");
        cfg.use_z = c.at("use_z");
        const auto& s = j.at("shape");
        CorrectorModel m = init_corrector(cfg, s.at("w").get<Index>(), s.at("d_f").get<Index>(), s.at("k").get<Index>());
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
