#include <doctest.h>

#include <fstream>

#include "deconfbc/error.hpp"
#include "deconfbc/io.hpp"
#include "test_util.hpp"

using namespace deconfbc;
namespace fs = std::filesystem;

TEST_CASE("csv round-trips to full precision")
{
    const auto dir = testutil::temp_dir("csv");
    Rng rng(1);
    const Eigen::MatrixXd v = rng.normal_matrix(7, 3) * 1e3;
    write_csv(dir / "a.csv", {"p", "q", "r"}, {0, 1, 2, 3, 4, 5, 6}, v);
    const CsvTable t = read_csv(dir / "a.csv");
    CHECK(t.columns == std::vector<std::string>{"p", "q", "r"});
    CHECK(t.t.back() == 6);
    CHECK((t.values - v).norm() == 0.0);
}

TEST_CASE("missing cells are rejected at ingestion")
{
    const auto dir = testutil::temp_dir("csv_missing");
    std::ofstream(dir / "m.csv") << "t,a,y\n0,1.0,2.0\n1,,3.0\n";
    std::ofstream(dir / "n.csv") << "t,a,y\n0,1.0,NaN\n";
    CHECK_THROWS_WITH_AS(read_csv(dir / "m.csv"), doctest::Contains("missing"), Error);
    try {
        read_csv(dir / "n.csv");
        FAIL("expected MissingValue");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::MissingValue);
    }
}

TEST_CASE("dataset save and manifest load round-trip")
{
    const auto dir = testutil::temp_dir("manifest");
    auto ds = testutil::random_dataset(3, 25, 2, 2);
    ds.meta[2].unit = "mm/day";
    const auto files = save_dataset(ds, dir);
    CHECK(files.size() == 7);
    const TwoSourceDataset back = load_manifest(dir / "manifest.json");
    REQUIRE(back.locations.size() == 3);
    CHECK(back.meta[2].unit == "mm/day");
    CHECK(back.meta[2].kind == VariableKind::Outcome);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back.locations[i].id == ds.locations[i].id);
        CHECK((back.locations[i].obs.values - ds.locations[i].obs.values).norm() == 0.0);
    }
    CHECK(back.norm_stats.empty());
}

TEST_CASE("missing manifest is a config path error")
{
    try {
        load_manifest("/nonexistent/manifest.json");
        FAIL("expected ConfigPath");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ConfigPath);
        CHECK(exit_status(e.code()) == 2);
    }
}

TEST_CASE("unwritable destination is an io failure")
{
    try {
        write_csv("/proc/deconfbc/x.csv", {"a"}, {0}, Eigen::MatrixXd::Zero(1, 1));
        FAIL("expected IoFailure");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::IoFailure);
    }
}
