#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace deconfbc {

/// splitmix64 finalizer; used to decorrelate derived seeds.
std::uint64_t mix64(std::uint64_t x);

/// Seed for a named stage, stable across platforms.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stage);

/// Seed for the i-th independent stream under a base seed.
std::uint64_t stream_seed(std::uint64_t base, std::uint64_t index);

/// mt19937_64 with portable uniform, Box-Muller normal and Fisher-Yates shuffle.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    double sign() { return uniform() < 0.5 ? -1.0 : 1.0; }
    /// Uniform integer on [0, n).
    std::uint64_t below(std::uint64_t n);

    Eigen::MatrixXd uniform_matrix(Eigen::Index rows, Eigen::Index cols, double lo, double hi);
    Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev = 1.0);

    template <typename T>
    void shuffle(std::vector<T>& v)
    {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace deconfbc
