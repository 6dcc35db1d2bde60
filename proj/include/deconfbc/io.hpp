#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "deconfbc/core.hpp"

namespace deconfbc {

struct CsvTable {
    std::vector<std::string> columns;  // value columns, without the leading t
    std::vector<std::int64_t> t;
    Eigen::MatrixXd values;
};

/// Reads a table with a leading integer `t` column; empty or non-numeric cells are rejected.
CsvTable read_csv(const std::filesystem::path& path);

/// Writes with 17 significant digits so values round-trip exactly.
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& columns,
               const std::vector<std::int64_t>& t, const Eigen::MatrixXd& values);

/// Loads the dataset listed in a manifest; relative file paths resolve against its directory.
TwoSourceDataset load_manifest(const std::filesystem::path& manifest);

/// Writes gcm_<id>.csv, obs_<id>.csv and manifest.json into dir. Returns the written files.
std::vector<std::filesystem::path> save_dataset(const TwoSourceDataset& ds, const std::filesystem::path& dir,
                                                bool with_ground_truth = false);

/// Canonical string form of a double used by every text artifact.
std::string format_double(double v);

}  // namespace deconfbc
