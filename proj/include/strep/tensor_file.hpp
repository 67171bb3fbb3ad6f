#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "strep/tensor.hpp"

namespace strep {

// Named-tensor container shared by checkpoints and representation stores:
//   "STRC" | u8 version | u32 json length | json text
//   u32 entry count, then per entry: u16 name length | name | u8 dtype (0 f32, 1 i64) | u8 rank | u64 dims | data
//   u64 FNV-1a of every preceding byte
inline constexpr std::uint8_t kTensorFileVersion = 1;

struct TensorEntry {
    std::string name;
    std::variant<Tensor<float>, Tensor<std::int64_t>> data;
};

struct TensorFile {
    nlohmann::json meta;
    std::vector<TensorEntry> entries;

    const TensorEntry* find(const std::string& name) const;
    const Tensor<float>& f32(const std::string& name) const;
    const Tensor<std::int64_t>& i64(const std::string& name) const;
};

std::vector<std::uint8_t> encode_tensor_file(const TensorFile& f);
TensorFile decode_tensor_file(const std::vector<std::uint8_t>& bytes, const std::string& what);

void save_tensor_file(const TensorFile& f, const std::string& path);
TensorFile load_tensor_file(const std::string& path, const std::string& what);

}  // namespace strep
