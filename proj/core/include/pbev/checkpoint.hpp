#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pbev {

struct NamedTensor {
    std::string name;
    std::vector<uint32_t> dims;
    std::vector<double> data;

    size_t element_count() const;
};

// Little-endian container: magic "PBEV", version u32=1, then per tensor
// (name-length u32, utf-8 name, rank u32, dims u32[], f64 payload) until
// end of file. I/O failures and malformed files throw std::runtime_error.
void save_tensors(const std::vector<NamedTensor>& tensors, const std::string& path);
std::vector<NamedTensor> load_tensors(const std::string& path);

// First tensor with the given name; throws std::runtime_error if absent
// or if the element count differs from `expect`.
const NamedTensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name,
                               size_t expect);

} // namespace pbev
