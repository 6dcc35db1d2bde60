#include <doctest.h>

#include <cmath>

#include "deconfbc/error.hpp"
#include "deconfbc/io.hpp"
#include "deconfbc/synthgen.hpp"
#include "test_util.hpp"

using namespace deconfbc;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double pearson(const VectorXd& a, const VectorXd& b)
{
    const VectorXd x = a.array() - a.mean();
    const VectorXd y = b.array() - b.mean();
    return x.dot(y) / std::sqrt(x.squaredNorm() * y.squaredNorm());
}

VectorXd ols_residual(const MatrixXd& X, const VectorXd& y) { return y - X * X.colPivHouseholderQr().solve(y); }

SynthConfig small(std::uint64_t seed)
{
    SynthConfig c;
    c.n_locations = 4;
    c.T = 400;
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("defaults produce 500 locations of 3650 x (k + 1) per source")
{
    SynthConfig c;
    c.seed = 1;
    const auto ds = generate(c);
    REQUIRE(ds.data.locations.size() == 500);
    REQUIRE(ds.true_z.size() == 500);
    double max_abs = 0.0;
    for (std::size_t i = 0; i < 500; ++i) {
        const auto& loc = ds.data.locations[i];
        CHECK(loc.gcm.values.rows() == 3650);
        CHECK(loc.gcm.values.cols() == 4);
        CHECK(loc.obs.values.rows() == 3650);
        CHECK(ds.true_z[i].rows() == 3650);
        CHECK(ds.true_z[i].cols() == 1);
        max_abs = std::max({max_abs, loc.gcm.values.cwiseAbs().maxCoeff(), loc.obs.values.cwiseAbs().maxCoeff()});
    }
    CHECK(max_abs <= 50.0);
    CHECK(ds.data.outcome_index() == 3);
}

TEST_CASE("same seed gives bit-identical data; distinct seeds differ")
{
    const auto a = generate(small(5));
    const auto b = generate(small(5));
    const auto c = generate(small(6));
    for (std::size_t i = 0; i < a.data.locations.size(); ++i) {
        CHECK((a.data.locations[i].gcm.values - b.data.locations[i].gcm.values).norm() == 0.0);
        CHECK((a.true_z[i] - b.true_z[i]).norm() == 0.0);
    }
    const auto& x = a.data.locations[0].gcm.values;
    const auto& y = c.data.locations[0].gcm.values;
    int differ = 0;
    for (int t = 0; t < 100; ++t)
        differ += x(t, 0) != y(t, 0);
    CHECK(differ == 100);
}

TEST_CASE("gamma=0 decouples treatments from the latent")
{
    SynthConfig c = small(7);
    c.gamma = 0.0;
    c.T = 3650;
    c.n_locations = 20;
    const auto ds = generate(c);
    double sum = 0.0;
    int n = 0;
    for (int j = 0; j < c.k_treatments; ++j) {
        VectorXd zs(0), as(0);
        for (std::size_t i = 0; i < ds.true_z.size(); ++i) {
            const VectorXd z = ds.true_z[i].col(0).array() - ds.true_z[i].col(0).mean();
            const VectorXd a = ds.data.locations[i].gcm.values.col(j);
            const VectorXd ac = a.array() - a.mean();
            sum += std::abs(pearson(z, ac));
            ++n;
            zs.conservativeResize(zs.size() + z.size());
            zs.tail(z.size()) = z;
            as.conservativeResize(as.size() + ac.size());
            as.tail(ac.size()) = ac;
        }
        // pooled over locations the sampling spread is about 0.01
        CHECK(std::abs(pearson(zs, as)) < 0.04);
    }
    CHECK(sum / n < 0.05);

    // reshaping the latent leaves both sources bit-identical
    SynthConfig other = c;
    other.z_period_min = 60.0;
    other.z_period_max = 61.0;
    const auto ds2 = generate(other);
    CHECK((ds2.true_z[0] - ds.true_z[0]).norm() > 0.0);
    for (std::size_t i = 0; i < ds.true_z.size(); ++i) {
        CHECK((ds2.data.locations[i].gcm.values - ds.data.locations[i].gcm.values).norm() == 0.0);
        CHECK((ds2.data.locations[i].obs.values - ds.data.locations[i].obs.values).norm() == 0.0);
    }
}

TEST_CASE("gamma=1 outcome carries a confounding signal")
{
    SynthConfig c = small(8);
    c.T = 3650;
    const auto ds = generate(c);
    for (std::size_t i = 0; i < ds.data.locations.size(); ++i) {
        const auto& loc = ds.data.locations[i];
        const Eigen::Index T = loc.obs.values.rows();
        MatrixXd X(T, 2 * c.k_treatments + 1);
        X << loc.obs.values.leftCols(c.k_treatments), ds.hidden_x_o[i], VectorXd::Ones(T);
        const VectorXd y = loc.obs.values.col(c.k_treatments);
        const VectorXd res = ols_residual(X, y);
        MatrixXd Xz(T, X.cols() + 1);
        Xz << X, ds.true_z[i];
        const VectorXd res_z = ols_residual(Xz, y);
        CHECK(std::abs(pearson(res, ds.true_z[i].col(0))) > 0.1);
        CHECK(res_z.squaredNorm() <= 0.9 * res.squaredNorm());
    }
}

TEST_CASE("autoregressive polynomial from roots")
{
    const VectorXd a1 = ar_from_roots({{0.5, 0.0}});
    REQUIRE(a1.size() == 1);
    CHECK(a1(0) == doctest::Approx(0.5));
    // (z - 0.5)(z - 0.2) = z^2 - 0.7 z + 0.1
    const VectorXd a2 = ar_from_roots({{0.5, 0.0}, {0.2, 0.0}});
    CHECK(a2(0) == doctest::Approx(0.7));
    CHECK(a2(1) == doctest::Approx(-0.1));
    std::vector<MatrixXd> blocks = {MatrixXd::Constant(1, 1, a2(0)), MatrixXd::Constant(1, 1, a2(1))};
    CHECK(companion_radius(blocks) == doctest::Approx(0.5));
}

TEST_CASE("coefficients respect the stability bound")
{
    const SynthConfig c = small(9);
    for (int loc = 0; loc < 4; ++loc) {
        const auto coef = draw_coefficients(c, loc);
        CHECK(companion_radius(coef.alpha) <= 0.9 + 1e-9);
        CHECK(companion_radius(coef.gcm.B) <= 0.9 + 1e-9);
        CHECK(companion_radius(coef.obs.B) <= 0.9 + 1e-9);
    }
    SynthConfig bad = c;
    bad.ar_modulus = 0.95;
    try {
        generate(bad);
        FAIL("expected UnstableConfig");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::UnstableConfig);
    }
}

TEST_CASE("ground truth export round-trips")
{
    SynthConfig c = small(10);
    c.r = 2;
    c.T = 10;
    c.burn_in = 20;
    c.n_locations = 2;
    const auto ds = generate(c);
    const auto dir = testutil::temp_dir("truth");
    const auto files = export_ground_truth(ds, dir);
    REQUIRE(files.size() == 2);
    const CsvTable t = read_csv(files[0]);
    CHECK(t.values.rows() == 10);
    CHECK(t.columns.size() == 2);
    const MatrixXd z = read_ground_truth(files[0]);
    for (Eigen::Index i = 0; i < z.size(); ++i)
        CHECK(z.data()[i] == doctest::Approx(ds.true_z[0].data()[i]).epsilon(1e-12));

    try {
        export_ground_truth(ds, "/proc/deconfbc_truth");
        FAIL("expected IoFailure");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::IoFailure);
    }
}
