#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include "s2d/distill.hpp"
#include "s2d/optim.hpp"
#include "s2d/params.hpp"
#include "s2d/tensor_io.hpp"

namespace s2d {

/// Everything needed for an exact resume: parameters with their tunable
/// flags, optimizer moments, anchor queues, and the position in the run.
/// Serialization is fully deterministic, so identical training runs produce
/// byte-identical checkpoint files.
struct Checkpoint {
    std::string config_json;
    ParameterStore params;
    AdamWState optim;
    AnchorQueues queues;
    std::size_t epoch = 0;         // next epoch to execute
    std::size_t step_in_epoch = 0; // next step within that epoch
    std::size_t global_step = 0;
};

namespace ckpt_detail {
constexpr char kMagic[4] = {'S', '2', 'D', 'C'};
constexpr std::uint8_t kVersion = 1;

inline void put_string(std::ostream& os, const std::string& s) {
    io_detail::put_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
    const std::uint64_t n = io_detail::get_u64(is, false);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw FormatError("checkpoint string truncated");
    return s;
}
} // namespace ckpt_detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    using namespace ckpt_detail;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os.write(kMagic, 4);
    os.put(static_cast<char>(kVersion));
    put_string(os, ck.config_json);
    io_detail::put_u64(os, ck.epoch);
    io_detail::put_u64(os, ck.step_in_epoch);
    io_detail::put_u64(os, ck.global_step);

    io_detail::put_u64(os, ck.params.size());
    for (std::size_t i = 0; i < ck.params.size(); ++i) {
        const auto& p = ck.params.at(i);
        put_string(os, p.name);
        os.put(p.tunable ? 1 : 0);
        write_tensor_stream(os, p.value, DType::F64);
    }

    io_detail::put_u64(os, ck.optim.step);
    io_detail::put_u64(os, ck.optim.moments.size());
    for (const auto& [name, mv] : ck.optim.moments) {
        put_string(os, name);
        write_tensor_stream(os, mv.first, DType::F64);
        write_tensor_stream(os, mv.second, DType::F64);
    }

    io_detail::put_u64(os, ck.queues.classes());
    io_detail::put_u64(os, ck.queues.capacity());
    for (std::size_t c = 0; c < ck.queues.classes(); ++c) {
        io_detail::put_u64(os, ck.queues.queue(c).size());
        for (const auto& e : ck.queues.queue(c)) {
            write_tensor_stream(os, e.feature, DType::F64);
            write_tensor_stream(os, e.probs, DType::F64);
        }
    }
    if (!os) throw FormatError("checkpoint write failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    using namespace ckpt_detail;
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open for reading: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad checkpoint magic");
    const int version = is.get();
    if (version != kVersion)
        throw FormatError("checkpoint version mismatch: file has " + std::to_string(version) + ", expected " +
                          std::to_string(int(kVersion)));
    Checkpoint ck;
    ck.config_json = get_string(is);
    ck.epoch = io_detail::get_u64(is, false);
    ck.step_in_epoch = io_detail::get_u64(is, false);
    ck.global_step = io_detail::get_u64(is, false);

    const std::uint64_t nparams = io_detail::get_u64(is, false);
    for (std::uint64_t i = 0; i < nparams; ++i) {
        const std::string name = get_string(is);
        const int tunable = is.get();
        Tensor value = read_tensor_stream(is);
        ck.params.add(name, std::move(value), tunable != 0);
    }

    ck.optim.step = io_detail::get_u64(is, false);
    const std::uint64_t nmoments = io_detail::get_u64(is, false);
    for (std::uint64_t i = 0; i < nmoments; ++i) {
        const std::string name = get_string(is);
        Tensor m = read_tensor_stream(is);
        Tensor v = read_tensor_stream(is);
        ck.optim.moments.emplace(name, std::make_pair(std::move(m), std::move(v)));
    }

    const std::uint64_t classes = io_detail::get_u64(is, false);
    const std::uint64_t capacity = io_detail::get_u64(is, false);
    ck.queues = AnchorQueues(classes, capacity);
    for (std::uint64_t c = 0; c < classes; ++c) {
        const std::uint64_t n = io_detail::get_u64(is, false);
        for (std::uint64_t e = 0; e < n; ++e) {
            Tensor feat = read_tensor_stream(is);
            Tensor probs = read_tensor_stream(is);
            ck.queues.enqueue(feat, probs, c);
        }
    }
    if (!is) throw FormatError("checkpoint truncated");
    return ck;
}

/// Copies values (and nothing else) for every name present in both stores
/// with matching shapes; returns the copied names. Used to initialize an
/// adaptation run from a pre-trained image model.
inline std::vector<std::string> load_matching_params(ParameterStore& dst, const ParameterStore& src) {
    std::vector<std::string> copied;
    for (std::size_t i = 0; i < dst.size(); ++i) {
        auto& p = dst.at(i);
        if (!src.has(p.name)) continue;
        const auto& q = src.at(p.name);
        if (q.value.shape() != p.value.shape()) continue;
        p.value = q.value;
        copied.push_back(p.name);
    }
    return copied;
}

} // namespace s2d
