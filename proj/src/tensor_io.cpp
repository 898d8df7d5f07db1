#include "vattn/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace vattn {

namespace {

constexpr char kMagic[4] = {'S', 'P', 'A', 'T'};
constexpr uint8_t kVersion = 1;
constexpr std::size_t kMaxRank = 8;

void put_u64le(std::ostream& os, uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}

uint64_t get_u64le(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

template <typename T, typename Bits>
void write_payload(std::ostream& os, const Tensor<T>& t, Bits to_bits) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        const auto bits = to_bits(t.data()[i]);
        char b[sizeof(bits)];
        for (std::size_t k = 0; k < sizeof(bits); ++k)
            b[k] = static_cast<char>((bits >> (8 * k)) & 0xff);
        os.write(b, sizeof(bits));
    }
}

template <typename T>
void write_header(std::ostream& os, const Tensor<T>& t, DType dtype) {
    os.write(kMagic, 4);
    const uint8_t ver = kVersion, code = static_cast<uint8_t>(dtype),
                  rank = static_cast<uint8_t>(t.rank());
    os.put(static_cast<char>(ver));
    os.put(static_cast<char>(code));
    os.put(static_cast<char>(rank));
    for (std::size_t d : t.dims()) put_u64le(os, d);
}

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_spat: cannot open " + path);
    return os;
}

}  // namespace

void write_spat(const std::string& path, const Tensor<Half>& t) {
    auto os = open_out(path);
    write_header(os, t, DType::F16);
    write_payload(os, t, [](Half h) { return h.bits; });
    if (!os) throw std::runtime_error("write_spat: write failed for " + path);
}

void write_spat(const std::string& path, const Tensor<float>& t) {
    auto os = open_out(path);
    write_header(os, t, DType::F32);
    write_payload(os, t, [](float f) { return std::bit_cast<uint32_t>(f); });
    if (!os) throw std::runtime_error("write_spat: write failed for " + path);
}

void write_spat(const std::string& path, const Tensor<double>& t) {
    auto os = open_out(path);
    write_header(os, t, DType::F64);
    write_payload(os, t, [](double f) { return std::bit_cast<uint64_t>(f); });
    if (!os) throw std::runtime_error("write_spat: write failed for " + path);
}

AnyTensor read_spat(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_spat: cannot open " + path);

    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("read_spat: bad magic in " + path);

    const int ver = is.get();
    const int code = is.get();
    const int rank = is.get();
    if (!is || ver != kVersion) throw std::runtime_error("read_spat: unsupported version");
    if (code < 0 || code > 2) throw std::runtime_error("read_spat: unknown dtype code");
    if (rank <= 0 || static_cast<std::size_t>(rank) > kMaxRank)
        throw std::runtime_error("read_spat: unsupported rank");

    std::vector<std::size_t> dims(rank);
    uint64_t count = 1;
    for (int i = 0; i < rank; ++i) {
        const uint64_t d = get_u64le(is);
        if (!is) throw std::runtime_error("read_spat: truncated header");
        if (d == 0) throw std::runtime_error("read_spat: zero dimension");
        if (d > UINT64_MAX / count) throw std::runtime_error("read_spat: dimension overflow");
        count *= d;
        if (count > (1ull << 40)) throw std::runtime_error("read_spat: dimension overflow");
        dims[i] = static_cast<std::size_t>(d);
    }

    const std::size_t elem_size = code == 0 ? 2 : code == 1 ? 4 : 8;
    std::vector<unsigned char> payload(static_cast<std::size_t>(count) * elem_size);
    is.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (static_cast<std::size_t>(is.gcount()) != payload.size())
        throw std::runtime_error("read_spat: truncated payload");
    if (is.peek() != std::char_traits<char>::eof())
        throw std::runtime_error("read_spat: trailing bytes after payload");

    auto u16_at = [&](std::size_t i) {
        return static_cast<uint16_t>(payload[2 * i] | (payload[2 * i + 1] << 8));
    };
    auto u32_at = [&](std::size_t i) {
        uint32_t v = 0;
        for (int k = 0; k < 4; ++k) v |= static_cast<uint32_t>(payload[4 * i + k]) << (8 * k);
        return v;
    };
    auto u64_at = [&](std::size_t i) {
        uint64_t v = 0;
        for (int k = 0; k < 8; ++k) v |= static_cast<uint64_t>(payload[8 * i + k]) << (8 * k);
        return v;
    };

    if (code == 0) {
        Tensor<Half> t(dims);
        for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = Half::from_bits(u16_at(i));
        return t;
    }
    if (code == 1) {
        Tensor<float> t(dims);
        for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = std::bit_cast<float>(u32_at(i));
        return t;
    }
    Tensor<double> t(dims);
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = std::bit_cast<double>(u64_at(i));
    return t;
}

Tensor<Half> read_spat_f16(const std::string& path) {
    AnyTensor t = read_spat(path);
    if (auto* p = std::get_if<Tensor<Half>>(&t)) return std::move(*p);
    throw std::runtime_error("read_spat_f16: " + path + " is not a binary16 tensor");
}

}  // namespace vattn
