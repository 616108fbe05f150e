#pragma once
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace vsdr::csv {

struct Table {
    std::vector<std::string> header;
    Eigen::MatrixXd data; // rows x header.size()
};

// Values are printed with enough digits to round-trip doubles exactly.
void write(std::ostream& out, const std::vector<std::string>& header,
           const Eigen::MatrixXd& data);
void write_file(const std::string& path, const std::vector<std::string>& header,
                const Eigen::MatrixXd& data);

// Throws ValidationError on ragged rows, non-numeric cells, or a missing header.
Table read(std::istream& in);
Table read_file(const std::string& path);

} // namespace vsdr::csv
