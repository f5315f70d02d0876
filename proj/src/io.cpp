#include "qoct/io.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "qoct/common.hpp"

namespace qoct {

void atomic_write_text(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
    }
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + tmp.string());
        out << content;
        out.flush();
        if (!out) throw IoError("write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError("rename failed for: " + path);
    }
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string format_double(double v) {
    char buf[40];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc{}) throw IoError("number formatting failed");
    return {buf, end};
}

std::string render_csv(const CsvTable& t) {
    std::string out;
    for (const auto& m : t.meta) out += "# " + m + "\n";
    for (std::size_t i = 0; i < t.header.size(); ++i) {
        if (i) out += ',';
        out += t.header[i];
    }
    out += '\n';
    for (const auto& row : t.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out += ',';
            out += format_double(row[i]);
        }
        out += '\n';
    }
    return out;
}

CsvTable parse_csv(const std::string& text) {
    CsvTable t;
    std::istringstream in(text);
    std::string line;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::size_t i = line.find_first_not_of(" \t", 1);
            t.meta.push_back(i == std::string::npos ? "" : line.substr(i));
            continue;
        }
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!header_seen) {
            // header row unless everything parses as a number
            bool numeric = !cells.empty();
            for (const auto& c : cells) {
                char* end = nullptr;
                std::strtod(c.c_str(), &end);
                if (end == c.c_str() || *end != '\0') {
                    numeric = false;
                    break;
                }
            }
            header_seen = true;
            if (!numeric) {
                t.header = cells;
                continue;
            }
        }
        std::vector<double> row;
        row.reserve(cells.size());
        for (const auto& c : cells) {
            char* end = nullptr;
            double v = std::strtod(c.c_str(), &end);
            if (end == c.c_str()) throw IoError("bad numeric cell: " + c);
            row.push_back(v);
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

void write_pulse_csv(const std::string& path, const Pulse& p,
                     const std::vector<std::string>& meta) {
    CsvTable t;
    t.meta = meta;
    t.meta.push_back("dt " + format_double(p.dt));
    t.meta.push_back(std::string("unit ") + unit_name(p.unit));
    t.header = {"step", "t_start"};
    for (int k = 0; k < p.channels(); ++k) t.header.push_back("p" + std::to_string(k + 1));
    for (int n = 0; n < p.steps(); ++n) {
        std::vector<double> row = {static_cast<double>(n + 1), n * p.dt};
        for (int k = 0; k < p.channels(); ++k) row.push_back(p.values(n, k));
        t.rows.push_back(std::move(row));
    }
    atomic_write_text(path, render_csv(t));
}

Pulse read_pulse_csv(const std::string& path) {
    CsvTable t = parse_csv(read_text(path));
    Pulse p;
    p.dt = 0;
    for (const auto& m : t.meta) {
        std::istringstream ms(m);
        std::string key;
        ms >> key;
        if (key == "dt") ms >> p.dt;
        if (key == "unit") {
            std::string u;
            ms >> u;
            p.unit = (u == "V") ? Unit::volts : Unit::rad_per_s;
        }
    }
    if (t.rows.empty()) throw IoError("pulse csv has no data rows: " + path);
    const int lead = 2;  // step index and t_start columns
    const int K = static_cast<int>(t.rows.front().size()) - lead;
    if (K < 1) throw IoError("pulse csv needs at least one channel column: " + path);
    p.values.resize(static_cast<int>(t.rows.size()), K);
    for (std::size_t n = 0; n < t.rows.size(); ++n) {
        if (static_cast<int>(t.rows[n].size()) != K + lead)
            throw IoError("ragged pulse csv: " + path);
        for (int k = 0; k < K; ++k) p.values(static_cast<int>(n), k) = t.rows[n][lead + k];
    }
    if (!(p.dt > 0)) throw IoError("pulse csv missing dt metadata: " + path);
    p.validate();
    return p;
}

void write_distorted_csv(const std::string& path, const DistortedPulse& q,
                         const std::vector<std::string>& meta) {
    CsvTable t;
    t.meta = meta;
    t.meta.push_back("delta_t " + format_double(q.delta_t));
    t.meta.push_back(std::string("unit ") + unit_name(q.unit));
    t.header = {"sample", "t"};
    for (int l = 0; l < q.channels(); ++l) t.header.push_back("q" + std::to_string(l + 1));
    for (int m = 0; m < q.steps(); ++m) {
        std::vector<double> row = {static_cast<double>(m + 1), (m + 0.5) * q.delta_t};
        for (int l = 0; l < q.channels(); ++l) row.push_back(q.values(m, l));
        t.rows.push_back(std::move(row));
    }
    atomic_write_text(path, render_csv(t));
}

}  // namespace qoct
