#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace deconfbc {

enum class Source { G, O };
enum class VariableKind { Covariate, Outcome };
enum class Transform { ZScore, Log1pZScore, None };

const char* to_string(Source s);
const char* to_string(VariableKind k);
const char* to_string(Transform t);
VariableKind parse_kind(const std::string& s);
Transform parse_transform(const std::string& s);

struct VariableMeta {
    std::string name;
    std::string unit;
    VariableKind kind = VariableKind::Covariate;
    Transform transform = Transform::ZScore;
};

struct SourceSeries {
    Source source = Source::G;
    Eigen::MatrixXd values;  // T x d, native units
    std::vector<std::int64_t> timestamps;

    Eigen::Index steps() const { return values.rows(); }
};

struct LocationSeries {
    std::string id;
    SourceSeries gcm;
    SourceSeries obs;
};

/// Per-variable moments of the transformed values of one source.
struct Moments {
    Eigen::VectorXd mean;
    Eigen::VectorXd std;
};

/// The outcome column uses the observation moments for both sources, so the
/// normalized difference y_o - y_g is the physical bias rescaled.
struct NormStats {
    Moments gcm;
    Moments obs;

    const Moments& of(Source s) const { return s == Source::G ? gcm : obs; }
    bool empty() const { return gcm.mean.size() == 0; }
};

struct TwoSourceDataset {
    std::vector<LocationSeries> locations;
    std::vector<VariableMeta> meta;
    NormStats norm_stats;

    Eigen::Index dims() const { return static_cast<Eigen::Index>(meta.size()); }
    Eigen::Index outcome_index() const;
    std::vector<Eigen::Index> covariate_indices() const;
};

struct WindowSpec {
    int h = 36;
    int w = 12;
    int k = 3;

    int span() const { return h + w + k; }
};

struct TrajectoryWindow {
    Eigen::MatrixXd x_g, x_o;  // h x (d-1)
    Eigen::MatrixXd a_g, a_o;  // w x (d-1)
    Eigen::VectorXd y_g, y_o;  // k
    std::int64_t anchor_t = 0;
    int location = 0;
    Eigen::Index anchor_row = 0;

    /// History and current rows stacked, (h + w) x (d-1).
    Eigen::MatrixXd trajectory(Source s) const;
};

enum class SplitMode { ByLocation, ByTime };

struct Fractions {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

struct SplitResult {
    TwoSourceDataset train, val, test;
};

/// Throws on violated dataset invariants.
void validate(const TwoSourceDataset& ds);

/// Moments of the transformed training values; outcome moments come from the observations.
NormStats compute_norm_stats(const TwoSourceDataset& ds);

/// Applies per-variable transform and standardization to a [T x d] block.
Eigen::MatrixXd normalize(const Eigen::MatrixXd& values, const std::vector<VariableMeta>& meta, const Moments& m);
Eigen::MatrixXd denormalize(const Eigen::MatrixXd& values, const std::vector<VariableMeta>& meta, const Moments& m);

double normalize_value(double v, const VariableMeta& meta, double mean, double std);
double denormalize_value(double v, const VariableMeta& meta, double mean, double std);

/// Number of windows one series of length T yields.
Eigen::Index window_count(Eigen::Index T, const WindowSpec& spec);

/// Sliding windows ordered by (location, anchor); every stride-th anchor is kept.
std::vector<TrajectoryWindow> make_windows(const TwoSourceDataset& ds, const WindowSpec& spec, int stride = 1);

/// Windows of one location whose anchors lie in [first_anchor_row, last_anchor_row].
std::vector<TrajectoryWindow> make_location_windows(const TwoSourceDataset& ds, int location, const WindowSpec& spec,
                                                    int stride, Eigen::Index first_anchor_row,
                                                    Eigen::Index last_anchor_row);

/// Chronological cut rows for a series of length T.
std::pair<Eigen::Index, Eigen::Index> time_cuts(Eigen::Index T, const Fractions& f);

/// Partitions the dataset and recomputes norm_stats on the training part.
/// In by_time mode, val and test keep `context` rows preceding their cut.
SplitResult split_dataset(const TwoSourceDataset& ds, const Fractions& f, SplitMode mode, std::uint64_t seed,
                          Eigen::Index context = 0);

}  // namespace deconfbc
