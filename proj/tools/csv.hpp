#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace pbev::cli {

// Shortest round-trip decimal form; locale-free and stable across runs.
inline std::string fmt(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

template <typename T>
    requires std::is_integral_v<T>
inline std::string fmt(T v) {
    return std::to_string(v);
}
inline std::string fmt(const std::string& v) { return v; }
inline std::string fmt(const char* v) { return v; }

class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {}

    template <typename... Args>
    void row(Args&&... args) {
        std::vector<std::string> cells{fmt(std::forward<Args>(args))...};
        if (cells.size() != header_.size()) {
            throw std::runtime_error("csv: row arity does not match header");
        }
        rows_.push_back(std::move(cells));
    }

    std::string str() const {
        std::string out = join(header_);
        for (const auto& r : rows_) {
            out += '\n';
            out += join(r);
        }
        out += '\n';
        return out;
    }

    void write(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("csv: cannot open " + path + " for writing");
        f << str();
        if (!f) throw std::runtime_error("csv: write to " + path + " failed");
    }

    size_t n_rows() const { return rows_.size(); }

private:
    static std::string join(const std::vector<std::string>& cells) {
        std::string out;
        for (size_t i = 0; i < cells.size(); ++i) {
            if (i) out += ',';
            out += cells[i];
        }
        return out;
    }

    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

} // namespace pbev::cli
