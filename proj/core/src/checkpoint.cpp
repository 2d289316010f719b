#include "pbev/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace pbev {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

size_t NamedTensor::element_count() const {
    size_t n = 1;
    for (uint32_t d : dims) n *= d;
    return n;
}

namespace {

constexpr char kMagic[4] = {'P', 'B', 'E', 'V'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ofstream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::ifstream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

} // namespace

void save_tensors(const std::vector<NamedTensor>& tensors, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    out.write(kMagic, 4);
    write_u32(out, kVersion);
    for (const auto& t : tensors) {
        if (t.element_count() != t.data.size()) {
            throw std::runtime_error("checkpoint: dims of '" + t.name + "' disagree with payload");
        }
        write_u32(out, static_cast<uint32_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        write_u32(out, static_cast<uint32_t>(t.dims.size()));
        for (uint32_t d : t.dims) write_u32(out, d);
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("checkpoint: write to " + path + " failed");
}

std::vector<NamedTensor> load_tensors(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4] = {0, 0, 0, 0};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }
    const uint32_t version = read_u32(in);
    if (version != kVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    }
    std::vector<NamedTensor> tensors;
    while (true) {
        uint32_t name_len = 0;
        in.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
        if (in.eof()) break;
        if (!in) throw std::runtime_error("checkpoint: truncated file");
        NamedTensor t;
        t.name.resize(name_len);
        in.read(t.name.data(), name_len);
        const uint32_t rank = read_u32(in);
        t.dims.resize(rank);
        for (uint32_t i = 0; i < rank; ++i) t.dims[i] = read_u32(in);
        t.data.resize(t.element_count());
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        if (!in) throw std::runtime_error("checkpoint: truncated tensor '" + t.name + "'");
        tensors.push_back(std::move(t));
    }
    return tensors;
}

const NamedTensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name,
                               size_t expect) {
    for (const auto& t : tensors) {
        if (t.name == name) {
            if (t.data.size() != expect) {
                throw std::runtime_error("checkpoint: tensor '" + name + "' has " +
                                         std::to_string(t.data.size()) + " elements, expected " +
                                         std::to_string(expect));
            }
            return t;
        }
    }
    throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
}

} // namespace pbev
