#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include "deconfbc/error.hpp"
#include "deconfbc/metrics.hpp"
#include "deconfbc/random.hpp"

using namespace deconfbc;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd vec(std::initializer_list<double> v) { return Eigen::Map<const VectorXd>(v.begin(), static_cast<Index>(v.size())); }

ErrorCode code_of(const std::function<void()>& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("mse and mae hand examples")
{
    CHECK(mse(vec({1, 2}), vec({0, 0})) == 2.5);
    CHECK(mae(vec({1, 2}), vec({0, 0})) == 1.5);
    CHECK(mae(vec({3}), vec({1})) == 2.0);
    CHECK(mse(vec({4, -1, 2}), vec({4, -1, 2})) == 0.0);
    CHECK(mae(vec({4, -1, 2}), vec({4, -1, 2})) == 0.0);
    CHECK(code_of([] { mse(vec({1, 2}), vec({1})); }) == ErrorCode::LengthMismatch);
    CHECK(code_of([] { mae(vec({1}), vec({1, 2})); }) == ErrorCode::LengthMismatch);
    CHECK(code_of([] { mse(VectorXd(0), VectorXd(0)); }) == ErrorCode::EmptyInput);
    const MetricReport r = metric_report(vec({1, 2}), vec({0, 0}), "m");
    CHECK(r.n == 2);
    CHECK(r.label == "m");
    CHECK(r.mse == 2.5);
}

TEST_CASE("mse dominates squared mae on random samples")
{
    Rng rng(1);
    for (int trial = 0; trial < 500; ++trial) {
        const Index n = 1 + static_cast<Index>(rng.below(100));
        const VectorXd a = rng.normal_matrix(n, 1, rng.uniform(0.1, 10.0)).col(0);
        const VectorXd b = rng.normal_matrix(n, 1).col(0);
        const double m = mse(a, b), e = mae(a, b);
        CHECK(m >= 0.0);
        CHECK(e >= 0.0);
        CHECK(e * e <= m * (1.0 + 1e-12));
    }
}

TEST_CASE("qq points use plotting positions")
{
    const VectorXd a = VectorXd::LinSpaced(100, 1, 100);
    const auto pts = qq_points(a, a, 4);
    REQUIRE(pts.size() == 4);
    const double probs[] = {0.125, 0.375, 0.625, 0.875};
    for (std::size_t j = 0; j < 4; ++j) {
        CHECK(pts[j].prob == probs[j]);
        CHECK(pts[j].q_a == pts[j].q_b);
        // position prob * n - 0.5 on the 0-based sorted sample
        CHECK(pts[j].q_a == doctest::Approx(probs[j] * 100.0 + 0.5).epsilon(1e-12));
    }
    const auto shifted = qq_points(a, (a.array() + 2.5).matrix(), 10);
    for (const auto& p : shifted)
        CHECK(p.q_b - p.q_a == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(code_of([&] { qq_points(VectorXd(0), a, 4); }) == ErrorCode::EmptyInput);
    CHECK(code_of([&] { qq_points(a, a, 1); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("qq points ignore input order")
{
    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const VectorXd a = rng.normal_matrix(50, 1).col(0), b = rng.normal_matrix(70, 1).col(0);
        VectorXd ap = a, bp = b;
        std::vector<double> va(ap.data(), ap.data() + ap.size()), vb(bp.data(), bp.data() + bp.size());
        rng.shuffle(va);
        rng.shuffle(vb);
        ap = Eigen::Map<VectorXd>(va.data(), ap.size());
        bp = Eigen::Map<VectorXd>(vb.data(), bp.size());
        const auto x = qq_points(a, b, 20), y = qq_points(ap, bp, 20);
        for (std::size_t j = 0; j < x.size(); ++j) {
            CHECK(x[j].q_a == y[j].q_a);
            CHECK(x[j].q_b == y[j].q_b);
        }
    }
}

TEST_CASE("box statistics")
{
    const BoxStats b = box_stats(vec({5, 3, 1, 4, 2}));
    CHECK(b.min == 1.0);
    CHECK(b.q25 == doctest::Approx(1.75).epsilon(1e-12));
    CHECK(b.median == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(b.q75 == doctest::Approx(4.25).epsilon(1e-12));
    CHECK(b.max == 5.0);
    for (const VectorXd& v : {VectorXd::Constant(7, 2.5).eval(), vec({-4.0})}) {
        const BoxStats c = box_stats(v);
        for (double s : {c.min, c.q25, c.median, c.q75, c.max})
            CHECK(s == v(0));
    }
    CHECK(code_of([] { box_stats(VectorXd(0)); }) == ErrorCode::EmptyInput);
}

TEST_CASE("latent recovery is invariant to affine maps")
{
    Rng rng(3);
    const MatrixXd z = rng.normal_matrix(400, 2);
    CHECK(z_recovery_error(z, z) < 1e-20);
    const MatrixXd affine = (2.0 * z).array() + 1.0;
    CHECK(z_recovery_error(affine, z) < 1e-18);
    for (int trial = 0; trial < 20; ++trial) {
        MatrixXd A = rng.normal_matrix(2, 2);
        A.diagonal().array() += 3.0;
        const MatrixXd mixed = (z * A).rowwise() + rng.normal_matrix(1, 2).row(0);
        CHECK(z_recovery_error(mixed, z) < 1e-8);
    }
}

TEST_CASE("latent recovery of independent noise matches the held-out variance")
{
    Rng rng(4);
    double err = 0.0, var = 0.0;
    const int reps = 200;
    for (int r = 0; r < reps; ++r) {
        const MatrixXd z = rng.normal_matrix(400, 1, 1.5);
        const MatrixXd noise = rng.normal_matrix(400, 3);
        const LatentRecovery rec = latent_recovery(noise, z);
        err += rec.aligned;
        var += rec.var_true;
        const VectorXd tail = z.col(0).tail(200);
        CHECK(rec.var_true == doctest::Approx((tail.array() - tail.mean()).square().mean()).epsilon(1e-12));
    }
    // Monte Carlo: an uninformative fit only adds estimation error on top of the held-out variance
    CHECK(err / reps == doctest::Approx(var / reps).epsilon(0.05));
    CHECK(err / reps >= var / reps);
}

TEST_CASE("latent recovery guards")
{
    CHECK(code_of([] { z_recovery_error(MatrixXd::Zero(10, 1), MatrixXd::Zero(9, 1)); }) == ErrorCode::LengthMismatch);
    CHECK(code_of([] { z_recovery_error(MatrixXd::Zero(3, 2), MatrixXd::Zero(3, 1)); }) ==
          ErrorCode::InvalidArgument);
}

TEST_CASE("conditional independence score")
{
    Rng rng(5);
    const MatrixXd indep = rng.normal_matrix(10000, 4);
    CHECK(conditional_independence_score(indep) < 0.03);

    MatrixXd dup(200, 2);
    dup.col(0) = rng.normal_matrix(200, 1).col(0);
    dup.col(1) = dup.col(0);
    CHECK(conditional_independence_score(dup) == doctest::Approx(1.0).epsilon(1e-12));

    MatrixXd flat(200, 2);
    flat.col(0) = rng.normal_matrix(200, 1).col(0);
    flat.col(1).setConstant(3.0);
    CHECK(code_of([&] { conditional_independence_score(flat); }) == ErrorCode::DegenerateColumn);
    CHECK(code_of([&] { conditional_independence_score(MatrixXd::Ones(10, 2)); }) == ErrorCode::InvalidArgument);

    // hand oracle: columns x, x + e with unit variances have correlation 1 / sqrt(2)
    MatrixXd pair(20000, 2);
    pair.col(0) = rng.normal_matrix(20000, 1).col(0);
    pair.col(1) = pair.col(0) + rng.normal_matrix(20000, 1).col(0);
    CHECK(conditional_independence_score(pair) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(0.02));
}
