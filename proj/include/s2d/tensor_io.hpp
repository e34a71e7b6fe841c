#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "s2d/tensor.hpp"

namespace s2d {

/// On-disk tensor format:
///   magic "S2DT" | u8 version | u8 endianness (0 little, 1 big) |
///   u8 dtype (0 f32, 1 f64) | u8 rank | rank x u64 dims | raw payload.
/// Dims and payload follow the declared endianness; this writer always emits
/// little-endian, the reader byte-swaps big-endian files.
enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

namespace io_detail {

constexpr char kMagic[4] = {'S', '2', 'D', 'T'};
constexpr std::uint8_t kVersion = 1;

inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& is, bool big) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[big ? 7 - i : i]) << (8 * i);
    return v;
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is, bool big) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[big ? 3 - i : i]) << (8 * i);
    return v;
}

} // namespace io_detail

inline void write_tensor_stream(std::ostream& os, const Tensor& t, DType dtype = DType::F64) {
    using namespace io_detail;
    os.write(kMagic, 4);
    os.put(static_cast<char>(kVersion));
    os.put(0); // little-endian
    os.put(static_cast<char>(dtype));
    os.put(static_cast<char>(t.rank()));
    for (std::size_t d = 0; d < t.rank(); ++d) put_u64(os, t.extent(d));
    if (dtype == DType::F64) {
        for (std::size_t i = 0; i < t.numel(); ++i) put_u64(os, std::bit_cast<std::uint64_t>(t[i]));
    } else {
        for (std::size_t i = 0; i < t.numel(); ++i)
            put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(t[i])));
    }
    if (!os) throw FormatError("tensor write failed");
}

inline Tensor read_tensor_stream(std::istream& is) {
    using namespace io_detail;
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad tensor magic");
    const int version = is.get();
    if (version != kVersion) throw FormatError("unsupported tensor version " + std::to_string(version));
    const int endian = is.get();
    if (endian != 0 && endian != 1) throw FormatError("bad endianness flag");
    const bool big = endian == 1;
    const int dtype = is.get();
    if (dtype != 0 && dtype != 1) throw FormatError("bad dtype code " + std::to_string(dtype));
    const int rank = is.get();
    if (rank < 0 || rank > 8) throw FormatError("bad tensor rank");
    Shape shape(static_cast<std::size_t>(rank));
    for (auto& d : shape) d = static_cast<std::size_t>(get_u64(is, big));
    Tensor t(shape);
    if (dtype == 1) {
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] = std::bit_cast<double>(get_u64(is, big));
    } else {
        for (std::size_t i = 0; i < t.numel(); ++i)
            t[i] = static_cast<double>(std::bit_cast<float>(get_u32(is, big)));
    }
    if (!is) throw FormatError("tensor payload truncated");
    return t;
}

inline void write_tensor_file(const std::string& path, const Tensor& t, DType dtype = DType::F64) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for writing: " + path);
    write_tensor_stream(os, t, dtype);
}

inline Tensor read_tensor_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open for reading: " + path);
    return read_tensor_stream(is);
}

// -- dataset manifest (JSON lines) -------------------------------------------

struct ManifestRecord {
    std::size_t clip_id = 0;
    std::size_t label = 0;
    std::string frames_path;
    std::string landmarks_path;
};

inline void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open for writing: " + path);
    for (const auto& r : records) {
        nlohmann::json j;
        j["clip-id"] = r.clip_id;
        j["label"] = r.label;
        j["frames-path"] = r.frames_path;
        j["landmarks-path"] = r.landmarks_path;
        os << j.dump() << '\n';
    }
}

inline std::vector<ManifestRecord> read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open for reading: " + path);
    std::vector<ManifestRecord> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) throw FormatError("bad manifest line: " + line);
        ManifestRecord r;
        r.clip_id = j.at("clip-id").get<std::size_t>();
        r.label = j.at("label").get<std::size_t>();
        r.frames_path = j.at("frames-path").get<std::string>();
        r.landmarks_path = j.at("landmarks-path").get<std::string>();
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace s2d
