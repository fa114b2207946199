#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "fleet/adam.hpp"
#include "fleet/tensor.hpp"

// Binary checkpoint format:
//   magic "AXF1", format version u32, tensor count u32, then per tensor:
//   name (u16 length + UTF-8 bytes), dtype tag u8 (0=f32, 1=f64), rank u8,
//   extents (u32 each), raw little-endian element data.
// Round-trips are byte-identical.
namespace fleet {

namespace detail {

inline constexpr char kCkptMagic[4] = {'A', 'X', 'F', '1'};
inline constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
constexpr std::uint8_t dtype_tag() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? 0 : 1;
}

template <typename V>
void write_le(std::ostream& os, V v) {
    static_assert(std::is_trivially_copyable_v<V>);
    char buf[sizeof(V)];
    std::memcpy(buf, &v, sizeof(V));
    os.write(buf, sizeof(V));
}

template <typename V>
V read_le(std::istream& is) {
    char buf[sizeof(V)];
    is.read(buf, sizeof(V));
    V v;
    std::memcpy(&v, buf, sizeof(V));
    return v;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const ParamSet<T>& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os.write(detail::kCkptMagic, 4);
    detail::write_le<std::uint32_t>(os, detail::kCkptVersion);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params.names[i];
        const Tensor<T>& t = params.tensors[i];
        detail::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_le<std::uint8_t>(os, detail::dtype_tag<T>());
        detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
        for (const std::size_t e : t.shape())
            detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(e));
        os.write(reinterpret_cast<const char*>(t.data().data()),
                 static_cast<std::streamsize>(t.size() * sizeof(T)));
    }
    if (!os) throw IoError("checkpoint write failed: " + path);
}

template <typename T>
ParamSet<T> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, detail::kCkptMagic, 4) != 0) {
        throw IoError("bad checkpoint magic in " + path);
    }
    const auto version = detail::read_le<std::uint32_t>(is);
    if (version != detail::kCkptVersion) {
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto count = detail::read_le<std::uint32_t>(is);
    ParamSet<T> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = detail::read_le<std::uint16_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const auto tag = detail::read_le<std::uint8_t>(is);
        if (tag != detail::dtype_tag<T>()) {
            throw IoError("checkpoint dtype mismatch for tensor '" + name + "' in " + path);
        }
        const auto rank = detail::read_le<std::uint8_t>(is);
        Shape shape(rank);
        for (auto& e : shape) e = detail::read_le<std::uint32_t>(is);
        std::vector<T> data(shape_numel(shape));
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(T)));
        if (!is) throw IoError("truncated checkpoint: " + path);
        out.add(std::move(name), Tensor<T>::from_data(std::move(shape), std::move(data)));
    }
    return out;
}

// Copies checkpoint values into an existing parameter set by name.
// Reports every missing or shape-mismatched tensor at once.
template <typename T>
void load_checkpoint_into(const std::string& path, ParamSet<T>& dst) {
    ParamSet<T> src = load_checkpoint<T>(path);
    std::string problems;
    for (std::size_t i = 0; i < dst.size(); ++i) {
        const Tensor<T>* s = src.find(dst.names[i]);
        if (!s) {
            problems += (problems.empty() ? "" : ", ") + dst.names[i] + " (missing)";
            continue;
        }
        if (s->shape() != dst.tensors[i].shape()) {
            problems += (problems.empty() ? "" : ", ") + dst.names[i] + " (shape " +
                        shape_str(s->shape()) + " vs " + shape_str(dst.tensors[i].shape()) + ")";
            continue;
        }
        std::copy(s->data().begin(), s->data().end(), dst.tensors[i].data().begin());
    }
    if (!problems.empty()) {
        throw IoError("checkpoint " + path + " incompatible: " + problems);
    }
}

}  // namespace fleet
