#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

#include "deconfbc/error.hpp"
#include "deconfbc/nn.hpp"

using namespace deconfbc;
using Eigen::Index;
using Eigen::VectorXd;

namespace {

/// Least squares on a fixed random design: loss = mean over rows of (x_i . theta - y_i)^2.
struct Quadratic {
    Eigen::MatrixXd X;
    VectorXd y;

    double loss(const VectorXd& th, const std::vector<std::size_t>& rows) const
    {
        double s = 0.0;
        for (auto r : rows)
            s += std::pow(X.row(static_cast<Index>(r)).dot(th) - y(static_cast<Index>(r)), 2);
        return s / static_cast<double>(rows.size());
    }
    double loss_grad(const VectorXd& th, const std::vector<std::size_t>& rows, VectorXd& g) const
    {
        g.setZero(th.size());
        double s = 0.0;
        for (auto r : rows) {
            const double e = X.row(static_cast<Index>(r)).dot(th) - y(static_cast<Index>(r));
            s += e * e;
            g += 2.0 * e * X.row(static_cast<Index>(r)).transpose();
        }
        g /= static_cast<double>(rows.size());
        return s / static_cast<double>(rows.size());
    }
    std::vector<std::size_t> all() const
    {
        std::vector<std::size_t> v(static_cast<std::size_t>(X.rows()));
        for (std::size_t i = 0; i < v.size(); ++i)
            v[i] = i;
        return v;
    }
};

Quadratic make_problem(std::uint64_t seed)
{
    Rng rng(seed);
    Quadratic q{rng.normal_matrix(200, 5), VectorXd()};
    VectorXd truth(5);
    truth << 1.0, -2.0, 0.5, 3.0, 0.0;
    q.y = q.X * truth + 0.01 * rng.normal_matrix(200, 1).col(0);
    return q;
}

}  // namespace

TEST_CASE("parameter layout places named blocks contiguously")
{
    ParamLayout L;
    const int a = L.add("W_a", 3, 2);
    const int b = L.add("b_a", 3, 1);
    CHECK(L.size() == 9);
    CHECK(L.block(b).offset == 6);
    CHECK(L.find("b_a") == b);
    VectorXd th = VectorXd::LinSpaced(9, 0, 8);
    CHECK(L.view(th, a)(1, 0) == 1.0);
    CHECK(L.view(th, b)(2, 0) == 8.0);
    Rng rng(1);
    init_fan_in(L, th, rng, {2, 1});
    CHECK(L.view(th, b).norm() == 0.0);
    CHECK(L.view(th, a).cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(2.0));
    CHECK(L.view(th, a).norm() > 0.0);
}

TEST_CASE("global norm clipping")
{
    VectorXd g(2);
    g << 3.0, 4.0;
    CHECK(clip_global_norm(g, 10.0) == 5.0);
    CHECK(g(1) == 4.0);
    CHECK(clip_global_norm(g, 1.0) == 5.0);
    CHECK(g.norm() == doctest::Approx(1.0));
    CHECK(g(0) == doctest::Approx(0.6));
}

TEST_CASE("first Adam step moves each coordinate by lr against its gradient sign")
{
    VectorXd th = VectorXd::Zero(3), g(3);
    g << 2.0, -0.5, 1e-3;
    AdamState st;
    adam_step(th, g, st, 0.1);
    // bias-corrected m / sqrt(v) equals sign(g) on the first step
    CHECK(th(0) == doctest::Approx(-0.1).epsilon(1e-6));
    CHECK(th(1) == doctest::Approx(0.1).epsilon(1e-6));
    CHECK(th(2) == doctest::Approx(-0.1).epsilon(1e-4));
    CHECK(st.step == 1);
}

TEST_CASE("relative error uses the 1e-12 floor")
{
    CHECK(relative_error(0.0, 0.0) == 0.0);
    CHECK(relative_error(1e-13, 0.0) == doctest::Approx(0.1));
    CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
}

TEST_CASE("gradient checker passes a correct gradient and flags a doubled coordinate")
{
    const Quadratic q = make_problem(2);
    Rng rng(3);
    const VectorXd th = rng.normal_matrix(5, 1).col(0);
    VectorXd g;
    q.loss_grad(th, q.all(), g);
    const auto f = [&](const VectorXd& t) { return q.loss(t, q.all()); };
    const std::vector<Index> coords = {0, 1, 2, 3, 4};
    CHECK(check_gradient(f, th, g, coords, 1e-5) < 1e-6);
    VectorXd bad = g;
    bad(3) *= 2.0;
    CHECK(check_gradient(f, th, bad, coords, 1e-5) == doctest::Approx(0.5).epsilon(1e-4));
    CHECK_THROWS_AS(check_gradient(f, th, g, coords, 1e-9), Error);
}

TEST_CASE("coordinate sample covers every block")
{
    ParamLayout L;
    L.add("big", 50, 50);
    L.add("b_small", 1, 1);
    L.add("mid", 4, 3);
    Rng rng(4);
    const auto coords = sample_coordinates(L, 200, rng);
    CHECK(coords.size() >= 200);
    CHECK(std::set<Index>(coords.begin(), coords.end()).size() == coords.size());
    bool small = false, mid = false;
    for (Index c : coords) {
        small |= c == 2500;
        mid |= c > 2500;
    }
    CHECK(small);
    CHECK(mid);
}

TEST_CASE("fit descends, restores the best parameters and is deterministic")
{
    const Quadratic q = make_problem(5);
    TrainOptions opt;
    opt.lr = 0.05;
    opt.epochs = 60;
    opt.batch_size = 16;
    opt.seed = 9;
    auto run = [&](VectorXd& th) {
        return fit(
            th, 200, [&](const VectorXd& t, const std::vector<std::size_t>& b, VectorXd& g) { return q.loss_grad(t, b, g); },
            [&](const VectorXd& t) { return q.loss(t, q.all()); }, opt);
    };
    VectorXd a = VectorXd::Zero(5), b = VectorXd::Zero(5);
    const TrainHistory ha = run(a);
    const TrainHistory hb = run(b);
    CHECK(ha.train_loss.back() < ha.train_loss.front());
    CHECK(ha.train_loss == hb.train_loss);
    CHECK((a - b).norm() == 0.0);
    CHECK(q.loss(a, q.all()) == doctest::Approx(ha.best_val));
    CHECK(ha.best_val < 1e-2);
}

TEST_CASE("non-finite loss aborts with the epoch index")
{
    TrainOptions opt;
    opt.epochs = 5;
    opt.batch_size = 4;
    VectorXd th = VectorXd::Zero(1);
    int calls = 0;
    const BatchObjective obj = [&](const VectorXd&, const std::vector<std::size_t>&, VectorXd& g) {
        g = VectorXd::Zero(1);
        return ++calls > 4 ? std::numeric_limits<double>::quiet_NaN() : 1.0;
    };
    try {
        fit(th, 8, obj, [](const VectorXd&) { return 1.0; }, opt);
        FAIL("expected NonFiniteLoss");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NonFiniteLoss);
        CHECK(std::string(e.what()).find("epoch 2") != std::string::npos);
    }
}
