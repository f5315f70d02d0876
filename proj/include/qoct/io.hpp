#pragma once

#include <string>
#include <vector>

#include "qoct/pulse.hpp"

namespace qoct {

// temp file + rename; a crash mid-write never leaves a partial file behind
void atomic_write_text(const std::string& path, const std::string& content);
std::string read_text(const std::string& path);

// round-trip exact decimal form, deterministic across runs
std::string format_double(double v);

// simple CSV surface: '#' lines are metadata, first plain line is the header
struct CsvTable {
    std::vector<std::string> meta;    // without the leading '#'
    std::vector<std::string> header;  // column names
    std::vector<std::vector<double>> rows;
};

std::string render_csv(const CsvTable& t);
CsvTable parse_csv(const std::string& text);

void write_pulse_csv(const std::string& path, const Pulse& p,
                     const std::vector<std::string>& meta);
Pulse read_pulse_csv(const std::string& path);

void write_distorted_csv(const std::string& path, const DistortedPulse& q,
                         const std::vector<std::string>& meta);

}  // namespace qoct
