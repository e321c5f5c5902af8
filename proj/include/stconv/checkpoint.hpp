#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

#include "stconv/model.hpp"
#include "stconv/textio.hpp"

namespace stconv {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
inline std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

template <typename S>
void write_tensor(std::ostream& out, const Tensor<S>& t) {
    write_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::int64_t a = 0; a < t.rank(); ++a) write_u64(out, static_cast<std::uint64_t>(t.extent(a)));
    out.write(reinterpret_cast<const char*>(t.data()), sizeof(S) * static_cast<std::size_t>(t.size()));
}

template <typename S>
Tensor<S> read_tensor(std::istream& in) {
    const std::uint32_t rank = read_u32(in);
    if (rank == 0 || rank > 8) throw std::runtime_error("checkpoint: bad tensor rank");
    Shape shape(rank);
    for (std::uint32_t a = 0; a < rank; ++a) shape[a] = static_cast<std::int64_t>(read_u64(in));
    Tensor<S> t(shape);
    in.read(reinterpret_cast<char*>(t.data()), sizeof(S) * static_cast<std::size_t>(t.size()));
    if (!in) throw std::runtime_error("checkpoint: truncated tensor payload");
    return t;
}

} // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: "STCK" | version | config digest | dtype byte | parameters in
/// registry order | normalization buffers. All integers and scalars little
/// endian, each tensor prefixed by rank and extents.
template <typename S>
void save_checkpoint(const std::string& path, Model<S>& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write("STCK", 4);
    detail::write_u32(out, kCheckpointVersion);
    detail::write_u64(out, model.config().digest());
    const std::uint8_t dtype = sizeof(S) == 4 ? 0 : 1;
    out.write(reinterpret_cast<const char*>(&dtype), 1);

    auto params = model.parameters();
    detail::write_u32(out, static_cast<std::uint32_t>(params.size()));
    for (auto& p : params) detail::write_tensor(out, p.var.value());

    auto states = model.norm_states();
    detail::write_u32(out, static_cast<std::uint32_t>(states.size()));
    for (auto* st : states) {
        const std::uint8_t ready = st->ready ? 1 : 0;
        out.write(reinterpret_cast<const char*>(&ready), 1);
        if (st->ready) {
            detail::write_tensor(out, st->running_mean);
            detail::write_tensor(out, st->running_var);
        }
    }
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

template <typename S>
void load_checkpoint(const std::string& path, Model<S>& model) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4] = {};
    in.read(magic, 4);
    if (std::string(magic, 4) != "STCK") throw std::runtime_error("checkpoint: bad magic in " + path);
    const std::uint32_t version = detail::read_u32(in);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    const std::uint64_t digest = detail::read_u64(in);
    if (digest != model.config().digest())
        throw std::runtime_error("checkpoint: config digest " + hex64(digest) +
                                 " does not match model config " + hex64(model.config().digest()));
    std::uint8_t dtype = 0;
    in.read(reinterpret_cast<char*>(&dtype), 1);
    const std::uint8_t want = sizeof(S) == 4 ? 0 : 1;
    if (dtype != want) throw std::runtime_error("checkpoint: scalar precision mismatch");

    auto params = model.parameters();
    const std::uint32_t n = detail::read_u32(in);
    if (n != params.size())
        throw std::runtime_error("checkpoint: parameter count " + std::to_string(n) + " != model " +
                                 std::to_string(params.size()));
    for (auto& p : params) {
        Tensor<S> t = detail::read_tensor<S>(in);
        if (!same_shape(t, p.var.value()))
            throw std::runtime_error("checkpoint: shape mismatch for " + p.name);
        p.var.value_mut() = std::move(t);
    }

    auto states = model.norm_states();
    const std::uint32_t ns = detail::read_u32(in);
    if (ns != states.size()) throw std::runtime_error("checkpoint: normalization buffer count mismatch");
    for (auto* st : states) {
        std::uint8_t ready = 0;
        in.read(reinterpret_cast<char*>(&ready), 1);
        st->ready = ready != 0;
        if (st->ready) {
            st->running_mean = detail::read_tensor<S>(in);
            st->running_var = detail::read_tensor<S>(in);
        } else {
            st->running_mean = Tensor<S>();
            st->running_var = Tensor<S>();
        }
    }
    if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
}

} // namespace stconv
