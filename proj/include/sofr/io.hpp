#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sofr/simbench.hpp"
#include "sofr/smoothing.hpp"

namespace sofr {

// Shortest round-trip decimal representation.
inline std::string format_double(double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

inline bool parse_double(std::string_view s, double& out) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    if (s.empty()) return false;
    auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

inline std::string trim(std::string s) {
    auto issp = [](unsigned char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
    while (!s.empty() && issp(s.front())) s.erase(s.begin());
    while (!s.empty() && issp(s.back())) s.pop_back();
    return s;
}

inline std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

}  // namespace detail

// Reads a dataset from a curve file (header "t=<grid>", one row per subject)
// and a response file (header "y", one value per row).
inline std::shared_ptr<RawDataset> load_dataset(const std::string& path_z,
                                                const std::string& path_y) {
    auto z_lines = detail::read_lines(path_z);
    if (z_lines.empty()) throw ConfigError(path_z + ": empty file");
    auto header = detail::split_csv_line(z_lines[0]);
    const int j = static_cast<int>(header.size());
    if (j < 2) throw ConfigError(path_z + ": need at least 2 grid columns");

    Eigen::VectorXd grid(j);
    for (int c = 0; c < j; ++c) {
        std::string cell = detail::trim(header[c]);
        if (cell.rfind("t=", 0) != 0)
            throw ConfigError(path_z + ": header column " + std::to_string(c + 1) +
                              " must look like t=<value>, got '" + cell + "'");
        double t;
        if (!parse_double(std::string_view(cell).substr(2), t))
            throw ConfigError(path_z + ": non-numeric grid value in header column " +
                              std::to_string(c + 1));
        grid(c) = t;
    }
    for (int c = 0; c < j; ++c)
        if (grid(c) < 0.0 || grid(c) > 1.0)
            throw ConfigError(path_z + ": grid point " + format_double(grid(c)) +
                              " outside [0,1] (column " + std::to_string(c + 1) + ")");
    for (int c = 1; c < j; ++c)
        if (grid(c) <= grid(c - 1))
            throw ConfigError(path_z + ": grid must be strictly increasing at column " +
                              std::to_string(c + 1));
    if (grid(0) != 0.0 || grid(j - 1) != 1.0)
        throw ConfigError(path_z + ": grid must start at 0 and end at 1");
    double h = 1.0 / (j - 1);
    double max_dev = 0.0;
    for (int c = 1; c < j; ++c) max_dev = std::max(max_dev, std::abs(grid(c) - grid(c - 1) - h));
    if (max_dev > 1e-8)
        throw ConfigError(path_z + ": grid is not evenly spaced (max spacing deviation " +
                          format_double(max_dev) + ")");

    const int n = static_cast<int>(z_lines.size()) - 1;
    if (n < 1) throw ConfigError(path_z + ": no data rows");
    Eigen::MatrixXd z(j, n);
    for (int r = 0; r < n; ++r) {
        auto cells = detail::split_csv_line(z_lines[r + 1]);
        if (static_cast<int>(cells.size()) != j)
            throw ConfigError(path_z + ": row " + std::to_string(r + 2) + " has " +
                              std::to_string(cells.size()) + " cells, expected " +
                              std::to_string(j));
        for (int c = 0; c < j; ++c) {
            double v;
            if (!parse_double(cells[c], v))
                throw ConfigError(path_z + ": non-numeric cell at row " + std::to_string(r + 2) +
                                  ", column " + std::to_string(c + 1));
            z(c, r) = v;
        }
    }

    auto y_lines = detail::read_lines(path_y);
    if (y_lines.empty() || detail::trim(y_lines[0]) != "y")
        throw ConfigError(path_y + ": first line must be the header 'y'");
    const int ny = static_cast<int>(y_lines.size()) - 1;
    if (ny != n)
        throw ConfigError("row-count mismatch: " + path_z + " has " + std::to_string(n) +
                          " subjects, " + path_y + " has " + std::to_string(ny));
    Eigen::VectorXd y(n);
    for (int r = 0; r < n; ++r) {
        double v;
        if (!parse_double(y_lines[r + 1], v))
            throw ConfigError(path_y + ": non-numeric cell at row " + std::to_string(r + 2));
        y(r) = v;
    }

    auto raw = std::make_shared<RawDataset>();
    raw->z = std::move(z);
    raw->y = std::move(y);
    raw->grid = std::move(grid);
    return raw;
}

inline void save_dataset(const RawDataset& raw, const std::string& path_z,
                         const std::string& path_y) {
    std::ofstream oz(path_z);
    if (!oz) throw ConfigError("cannot write file: " + path_z);
    for (int c = 0; c < raw.grid_size(); ++c) {
        if (c) oz << ',';
        oz << "t=" << format_double(raw.grid(c));
    }
    oz << '\n';
    for (int i = 0; i < raw.n(); ++i) {
        for (int c = 0; c < raw.grid_size(); ++c) {
            if (c) oz << ',';
            oz << format_double(raw.z(c, i));
        }
        oz << '\n';
    }
    std::ofstream oy(path_y);
    if (!oy) throw ConfigError("cannot write file: " + path_y);
    oy << "y\n";
    for (int i = 0; i < raw.n(); ++i) oy << format_double(raw.y(i)) << '\n';
}

// Datasets on disk are addressed by a prefix: <prefix>.z.csv and <prefix>.y.csv.
inline std::shared_ptr<RawDataset> load_dataset_prefix(const std::string& prefix) {
    return load_dataset(prefix + ".z.csv", prefix + ".y.csv");
}

inline void save_dataset_prefix(const RawDataset& raw, const std::string& prefix) {
    save_dataset(raw, prefix + ".z.csv", prefix + ".y.csv");
}

// Flat key=value configuration with '#' comments. Keys must be unique; every
// key must be consumed by the command that loads the file.
class Config {
public:
    static Config parse_file(const std::string& path) {
        Config cfg;
        cfg.path_ = path;
        auto lines = detail::read_lines(path);
        for (std::size_t i = 0; i < lines.size(); ++i) {
            std::string line = detail::trim(lines[i]);
            if (line.empty() || line[0] == '#') continue;
            cfg.add_line(line, static_cast<int>(i + 1));
        }
        return cfg;
    }

    void add_override(const std::string& assignment) { add_line(assignment, 0); }

    bool has(const std::string& key) const { return entries_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        consumed_.insert(key);
        return it->second.value;
    }

    std::string require_string(const std::string& key) {
        auto it = entries_.find(key);
        if (it == entries_.end()) throw ConfigError(where(key) + "missing required key '" + key + "'");
        consumed_.insert(key);
        return it->second.value;
    }

    double get_double(const std::string& key, double fallback, double min, double max) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        consumed_.insert(key);
        double v;
        if (!parse_double(it->second.value, v))
            throw ConfigError(at(it->second.line) + "key '" + key + "' must be numeric, got '" +
                              it->second.value + "'");
        check_range(key, v, min, max, it->second.line);
        return v;
    }

    long get_long(const std::string& key, long fallback, long min, long max) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        consumed_.insert(key);
        long v;
        auto& s = it->second.value;
        auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size())
            throw ConfigError(at(it->second.line) + "key '" + key + "' must be an integer, got '" +
                              s + "'");
        if (v < min || v > max)
            throw ConfigError(at(it->second.line) + "key '" + key + "' = " + s +
                              " outside [" + std::to_string(min) + ", " + std::to_string(max) + "]");
        return v;
    }

    bool get_flag(const std::string& key, bool fallback) {
        std::string s = get_string(key, fallback ? "on" : "off");
        if (s == "on" || s == "true" || s == "1") return true;
        if (s == "off" || s == "false" || s == "0") return false;
        throw ConfigError(where(key) + "key '" + key + "' must be on/off, got '" + s + "'");
    }

    // "gcv"/"cv"/"path" sentinel or a number within [min, max].
    std::optional<double> get_tunable(const std::string& key, const std::string& sentinel,
                                      std::optional<double> fallback, double min, double max) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        consumed_.insert(key);
        if (it->second.value == sentinel) return std::nullopt;
        double v;
        if (!parse_double(it->second.value, v))
            throw ConfigError(at(it->second.line) + "key '" + key + "' must be '" + sentinel +
                              "' or numeric, got '" + it->second.value + "'");
        check_range(key, v, min, max, it->second.line);
        return v;
    }

    std::vector<std::string> get_list(const std::string& key, const std::string& fallback) {
        std::string joined = get_string(key, fallback);
        std::vector<std::string> out;
        std::stringstream ss(joined);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = detail::trim(item);
            if (!item.empty()) out.push_back(item);
        }
        return out;
    }

    void reject_unknown_keys() const {
        for (const auto& [key, entry] : entries_)
            if (!consumed_.count(key))
                throw ConfigError(at(entry.line) + "unknown key '" + key + "'");
    }

    // Config echo for the run manifest, in original order.
    const std::vector<std::pair<std::string, std::string>>& ordered() const { return ordered_; }

private:
    struct Entry {
        std::string value;
        int line = 0;
    };

    void add_line(const std::string& line, int line_no) {
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(at(line_no) + "expected key=value, got '" + line + "'");
        std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(at(line_no) + "empty key");
        if (entries_.count(key)) {
            if (line_no == 0) {  // command-line override replaces the file value
                entries_[key].value = value;
                for (auto& [k, v] : ordered_)
                    if (k == key) v = value;
                return;
            }
            throw ConfigError(at(line_no) + "duplicate key '" + key + "'");
        }
        entries_[key] = {value, line_no};
        ordered_.emplace_back(key, value);
    }

    void check_range(const std::string& key, double v, double min, double max, int line) const {
        if (std::isnan(v) || v < min || v > max)
            throw ConfigError(at(line) + "key '" + key + "' = " + format_double(v) +
                              " outside [" + format_double(min) + ", " + format_double(max) + "]");
    }

    std::string at(int line) const {
        if (line <= 0) return path_ + ": ";
        return path_ + ":" + std::to_string(line) + ": ";
    }
    std::string where(const std::string& key) const {
        auto it = entries_.find(key);
        return at(it == entries_.end() ? 0 : it->second.line);
    }

    std::string path_;
    std::map<std::string, Entry> entries_;
    std::set<std::string> consumed_;
    std::vector<std::pair<std::string, std::string>> ordered_;
};

inline std::string csv_double(double x) {
    if (std::isnan(x)) return "nan";
    return format_double(x);
}

// Results CSV: one row per (replicate, method), sorted by (eta, replicate,
// method), followed by a blank line and a per-(eta, method) median summary.
// Wall times are written as 0 unless timings are enabled, so identical
// configurations produce byte-identical files.
inline void write_results_csv(const std::string& path, std::vector<ResultRow> rows,
                              bool timings) {
    std::sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
        if (a.eta != b.eta) return a.eta < b.eta;
        if (a.replicate != b.replicate) return a.replicate < b.replicate;
        return static_cast<int>(a.method) < static_cast<int>(b.method);
    });
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write file: " + path);
    out << "replicate,method,eta,ree,rpe,wall_ms\n";
    for (const auto& row : rows) {
        out << row.replicate << ',' << method_name(row.method) << ',' << csv_double(row.eta) << ','
            << (row.ree ? csv_double(*row.ree) : "nan") << ',' << csv_double(row.rpe) << ','
            << csv_double(timings ? row.wall_ms : 0.0) << '\n';
    }

    // Summary block.
    auto median = [](std::vector<double> v) {
        if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
        std::sort(v.begin(), v.end());
        std::size_t mid = v.size() / 2;
        return (v.size() % 2) ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
    };
    std::map<std::pair<double, int>, std::pair<std::vector<double>, std::vector<double>>> groups;
    for (const auto& row : rows) {
        if (row.failed) continue;
        auto& [rees, rpes] = groups[{row.eta, static_cast<int>(row.method)}];
        if (row.ree) rees.push_back(*row.ree);
        rpes.push_back(row.rpe);
    }
    out << "\neta,method,median_ree,median_rpe,rows\n";
    for (const auto& [key, vals] : groups) {
        out << csv_double(key.first) << ',' << method_name(static_cast<Method>(key.second)) << ','
            << csv_double(median(vals.first)) << ',' << csv_double(median(vals.second)) << ','
            << vals.second.size() << '\n';
    }
}

inline void write_coefficients_csv(const std::string& path,
                                   const std::vector<CoefEstimate>& estimates) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write file: " + path);
    out << "method,basis_index,coefficient\n";
    for (const auto& est : estimates)
        for (Eigen::Index i = 0; i < est.c.size(); ++i)
            out << method_name(est.method) << ',' << (i + 1) << ',' << format_double(est.c(i))
                << '\n';
}

// Sidecar manifest: a rerunnable config echo (every resolved or defaulted key)
// plus informational comment lines.
inline void write_manifest(const std::string& path,
                           const std::vector<std::pair<std::string, std::string>>& entries,
                           const std::vector<std::string>& comments) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write file: " + path);
    for (const auto& [key, value] : entries) out << key << '=' << value << '\n';
    for (const auto& line : comments) out << "# " << line << '\n';
}

}  // namespace sofr
