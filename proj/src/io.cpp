#include "deconfbc/io.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "deconfbc/error.hpp"

namespace deconfbc {

namespace fs = std::filesystem;

std::string format_double(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace {

std::vector<std::string> split_line(const std::string& line)
{
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ','))
        cells.push_back(cell);
    if (!line.empty() && line.back() == ',')
        cells.emplace_back();
    for (auto& c : cells) {
        while (!c.empty() && (c.back() == '\r' || c.back() == ' '))
            c.pop_back();
        while (!c.empty() && c.front() == ' ')
            c.erase(c.begin());
    }
    return cells;
}

double parse_cell(const std::string& cell, const fs::path& path, std::size_t line)
{
    const char* begin = cell.c_str();
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(begin, &end);
    if (cell.empty() || end != begin + cell.size() || errno == ERANGE || !std::isfinite(v))
        throw Error(ErrorCode::MissingValue,
                    path.string() + ":" + std::to_string(line) + ": missing or invalid value '" + cell + "'");
    return v;
}

}  // namespace

CsvTable read_csv(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line))
        throw Error(ErrorCode::IoFailure, path.string() + " is empty");
    auto header = split_line(line);
    if (header.empty() || header.front() != "t")
        throw Error(ErrorCode::IoFailure, path.string() + ": first column must be 't'");

    CsvTable table;
    table.columns.assign(header.begin() + 1, header.end());
    std::vector<std::vector<double>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r")
            continue;
        auto cells = split_line(line);
        if (cells.size() != header.size())
            throw Error(ErrorCode::ShapeMismatch, path.string() + ":" + std::to_string(line_no) + ": expected " +
                                                      std::to_string(header.size()) + " cells");
        const double tv = parse_cell(cells[0], path, line_no);
        if (tv != std::floor(tv))
            throw Error(ErrorCode::IoFailure, path.string() + ":" + std::to_string(line_no) + ": t must be an integer");
        table.t.push_back(static_cast<std::int64_t>(tv));
        std::vector<double> r;
        for (std::size_t c = 1; c < cells.size(); ++c)
            r.push_back(parse_cell(cells[c], path, line_no));
        rows.push_back(std::move(r));
    }
    table.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(table.columns.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            table.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return table;
}

void write_csv(const fs::path& path, const std::vector<std::string>& columns, const std::vector<std::int64_t>& t,
               const Eigen::MatrixXd& values)
{
    if (static_cast<Eigen::Index>(t.size()) != values.rows() ||
        static_cast<Eigen::Index>(columns.size()) != values.cols())
        throw Error(ErrorCode::ShapeMismatch, "write_csv: header, index and value shapes disagree");
    std::ofstream out(path);
    if (!out)
        throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    out << "t";
    for (const auto& c : columns)
        out << ',' << c;
    out << '\n';
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
        out << t[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < values.cols(); ++j)
            out << ',' << format_double(values(i, j));
        out << '\n';
    }
    if (!out)
        throw Error(ErrorCode::IoFailure, "failed writing " + path.string());
}

namespace {

SourceSeries load_series(const fs::path& path, Source src, const std::vector<VariableMeta>& meta)
{
    if (!fs::exists(path))
        throw Error(ErrorCode::ConfigPath, "data file not found: " + path.string());
    CsvTable tab = read_csv(path);
    SourceSeries s;
    s.source = src;
    s.timestamps = tab.t;
    s.values.resize(tab.values.rows(), static_cast<Eigen::Index>(meta.size()));
    for (std::size_t j = 0; j < meta.size(); ++j) {
        auto it = std::find(tab.columns.begin(), tab.columns.end(), meta[j].name);
        if (it == tab.columns.end())
            throw Error(ErrorCode::ShapeMismatch, path.string() + ": missing column '" + meta[j].name + "'");
        s.values.col(static_cast<Eigen::Index>(j)) = tab.values.col(it - tab.columns.begin());
    }
    return s;
}

}  // namespace

TwoSourceDataset load_manifest(const fs::path& manifest)
{
    if (!fs::exists(manifest))
        throw Error(ErrorCode::ConfigPath, "manifest not found: " + manifest.string());
    std::ifstream in(manifest);
    if (!in)
        throw Error(ErrorCode::IoFailure, "cannot open " + manifest.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigInvalid, manifest.string() + ": " + e.what());
    }

    TwoSourceDataset ds;
    const fs::path base = manifest.parent_path();
    try {
        const std::string outcome = j.at("outcome").get<std::string>();
        for (const auto& v : j.at("variables")) {
            VariableMeta m;
            m.name = v.at("name").get<std::string>();
            m.unit = v.value("unit", "");
            m.kind = m.name == outcome ? VariableKind::Outcome : VariableKind::Covariate;
            if (v.contains("kind") && parse_kind(v.at("kind").get<std::string>()) != m.kind)
                throw Error(ErrorCode::ConfigInvalid, "variable '" + m.name + "' kind disagrees with outcome name");
            m.transform = parse_transform(v.value("transform", std::string("zscore")));
            ds.meta.push_back(m);
        }
        for (const auto& l : j.at("locations")) {
            LocationSeries loc;
            loc.id = l.at("id").get<std::string>();
            loc.gcm = load_series(base / l.at("gcm").get<std::string>(), Source::G, ds.meta);
            loc.obs = load_series(base / l.at("obs").get<std::string>(), Source::O, ds.meta);
            ds.locations.push_back(std::move(loc));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigInvalid, manifest.string() + ": " + e.what());
    }
    validate(ds);
    return ds;
}

std::vector<fs::path> save_dataset(const TwoSourceDataset& ds, const fs::path& dir, bool with_ground_truth)
{
    validate(ds);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw Error(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());

    std::vector<std::string> names;
    for (const auto& m : ds.meta)
        names.push_back(m.name);

    nlohmann::json j;
    j["version"] = 1;
    j["outcome"] = ds.meta[static_cast<std::size_t>(ds.outcome_index())].name;
    j["variables"] = nlohmann::json::array();
    for (const auto& m : ds.meta)
        j["variables"].push_back(
            {{"name", m.name}, {"unit", m.unit}, {"kind", to_string(m.kind)}, {"transform", to_string(m.transform)}});
    j["locations"] = nlohmann::json::array();

    std::vector<fs::path> written;
    for (const auto& loc : ds.locations) {
        const std::string g = "gcm_" + loc.id + ".csv";
        const std::string o = "obs_" + loc.id + ".csv";
        write_csv(dir / g, names, loc.gcm.timestamps, loc.gcm.values);
        write_csv(dir / o, names, loc.obs.timestamps, loc.obs.values);
        written.push_back(dir / g);
        written.push_back(dir / o);
        nlohmann::json entry = {{"id", loc.id}, {"gcm", g}, {"obs", o}};
        if (with_ground_truth)
            entry["true_z"] = "true_z_" + loc.id + ".csv";
        j["locations"].push_back(entry);
    }
    std::ofstream out(dir / "manifest.json");
    if (!out)
        throw Error(ErrorCode::IoFailure, "cannot write " + (dir / "manifest.json").string());
    out << j.dump(2) << '\n';
    written.push_back(dir / "manifest.json");
    return written;
}

}  // namespace deconfbc
