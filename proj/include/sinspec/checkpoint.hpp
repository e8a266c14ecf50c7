#pragma once

// Flat binary weight container:
//   "SPEC" | u32 version | u64 config digest | u32 record count
//   per record: u32 name length | name | u32 rank | u64 extents... | f32 payload
// All integers and floats little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sinspec/errors.hpp"
#include "sinspec/io.hpp"
#include "sinspec/nn.hpp"

namespace sinspec {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

struct Checkpoint {
    std::uint64_t digest = 0;
    std::vector<CheckpointRecord> records;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
public:
    explicit ByteReader(std::string_view b) : bytes_(b) {}

    std::uint64_t uint(int width) {
        need(static_cast<std::size_t>(width));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += static_cast<std::size_t>(width);
        return v;
    }
    std::string_view take(std::size_t n) {
        need(n);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw LoadError("checkpoint truncated at byte " + std::to_string(pos_));
    }
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
    std::string out = "SPEC";
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u64(out, ck.digest);
    detail::put_u32(out, static_cast<std::uint32_t>(ck.records.size()));
    for (const auto& r : ck.records) {
        if (shape_numel(r.shape) != r.values.size())
            throw ShapeError("checkpoint record " + r.name + " has shape " + shape_str(r.shape) + " but " +
                             std::to_string(r.values.size()) + " values");
        detail::put_u32(out, static_cast<std::uint32_t>(r.name.size()));
        out += r.name;
        detail::put_u32(out, static_cast<std::uint32_t>(r.shape.size()));
        for (auto e : r.shape) detail::put_u64(out, e);
        for (float f : r.values) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
    return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
    detail::ByteReader rd(bytes);
    if (rd.take(4) != "SPEC") throw LoadError("not a checkpoint (bad magic)");
    const auto version = rd.uint(4);
    if (version != kCheckpointVersion)
        throw LoadError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ck;
    ck.digest = rd.uint(8);
    const auto count = rd.uint(4);
    for (std::uint64_t k = 0; k < count; ++k) {
        CheckpointRecord r;
        r.name = std::string(rd.take(rd.uint(4)));
        const auto rank = rd.uint(4);
        std::uint64_t n = 1;
        for (std::uint64_t i = 0; i < rank; ++i) {
            const auto e = rd.uint(8);
            if (e != 0 && n > rd.remaining() / e) throw LoadError("checkpoint record " + r.name + " is truncated");
            n *= e;
            r.shape.push_back(static_cast<std::size_t>(e));
        }
        if (n > rd.remaining() / 4) throw LoadError("checkpoint record " + r.name + " is truncated");
        r.values.resize(n);
        for (std::size_t i = 0; i < n; ++i) r.values[i] = std::bit_cast<float>(static_cast<std::uint32_t>(rd.uint(4)));
        ck.records.push_back(std::move(r));
    }
    if (!rd.done()) throw LoadError("trailing bytes after checkpoint records");
    return ck;
}

template <typename T>
Checkpoint snapshot(const ParamList<T>& params, std::uint64_t digest) {
    Checkpoint ck;
    ck.digest = digest;
    for (const auto& p : params) {
        CheckpointRecord r{p.name, p.tensor.shape(), {}};
        r.values.reserve(p.tensor.numel());
        for (T v : p.tensor.data()) r.values.push_back(static_cast<float>(v));
        ck.records.push_back(std::move(r));
    }
    return ck;
}

/// Copies checkpoint payloads into `params`, matched by name. Every parameter
/// must be present with an identical shape and the digest must match.
template <typename T>
void restore(ParamList<T>& params, const Checkpoint& ck, std::uint64_t expected_digest) {
    if (ck.digest != expected_digest)
        throw ConfigError("checkpoint config digest " + std::to_string(ck.digest) + " does not match config digest " +
                          std::to_string(expected_digest));
    std::unordered_map<std::string, const CheckpointRecord*> by_name;
    for (const auto& r : ck.records) by_name[r.name] = &r;
    if (by_name.size() != params.size())
        throw LoadError("checkpoint has " + std::to_string(by_name.size()) + " records, model has " +
                        std::to_string(params.size()) + " parameters");
    for (auto& p : params) {
        auto it = by_name.find(p.name);
        if (it == by_name.end()) throw LoadError("checkpoint lacks parameter " + p.name);
        if (it->second->shape != p.tensor.shape())
            throw LoadError("parameter " + p.name + " has shape " + shape_str(p.tensor.shape()) +
                            " but checkpoint stores " + shape_str(it->second->shape));
        auto dst = p.tensor.mutable_data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second->values[i]);
    }
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    write_file_atomic(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace sinspec
