#include "vsdr/csvio.hpp"
#include "vsdr/errors.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace vsdr::csv {

namespace {
std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}
} // namespace

void write(std::ostream& out, const std::vector<std::string>& header,
           const Eigen::MatrixXd& data) {
    if (static_cast<Eigen::Index>(header.size()) != data.cols())
        throw ValidationError("csv write: header size does not match column count");
    for (size_t i = 0; i < header.size(); ++i)
        out << (i ? "," : "") << header[i];
    out << "\n";
    char buf[40];
    for (Eigen::Index r = 0; r < data.rows(); ++r) {
        for (Eigen::Index c = 0; c < data.cols(); ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", data(r, c));
            out << (c ? "," : "") << buf;
        }
        out << "\n";
    }
}

void write_file(const std::string& path, const std::vector<std::string>& header,
                const Eigen::MatrixXd& data) {
    std::ofstream f(path);
    if (!f) throw ValidationError("csv write: cannot open " + path);
    write(f, header, data);
}

Table read(std::istream& in) {
    Table t;
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("csv read: missing header");
    t.header = split(line);
    std::vector<std::vector<double>> rows;
    size_t ncol = t.header.size();
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto cells = split(line);
        if (cells.size() != ncol)
            throw ValidationError("csv read: ragged row at line " + std::to_string(lineno));
        std::vector<double> row(ncol);
        for (size_t i = 0; i < ncol; ++i) {
            try {
                size_t pos = 0;
                row[i] = std::stod(cells[i], &pos);
                if (pos != cells[i].size()) throw std::invalid_argument(cells[i]);
            } catch (const std::exception&) {
                throw ValidationError("csv read: bad numeric cell '" + cells[i] + "' at line " +
                                      std::to_string(lineno));
            }
        }
        rows.push_back(std::move(row));
    }
    t.data.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(ncol));
    for (size_t r = 0; r < rows.size(); ++r)
        for (size_t c = 0; c < ncol; ++c)
            t.data(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    return t;
}

Table read_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("csv read: cannot open " + path);
    return read(f);
}

} // namespace vsdr::csv
