#ifndef BIGSEL_SERIALIZE_HPP
#define BIGSEL_SERIALIZE_HPP

// Little-endian, length-prefixed binary encoding shared by checkpoint and
// digest files, plus the FNV-1a digest used to fingerprint matrix contents.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bigsel/errors.hpp"

namespace bigsel {

inline constexpr std::uint64_t kFnvOffset = 0xCBF29CE484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001B3ULL;

inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes,
                             std::uint64_t seed = kFnvOffset) {
    std::uint64_t h = seed;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= kFnvPrime;
    }
    return h;
}

inline std::uint64_t fnv1a64_u64(std::uint64_t value, std::uint64_t seed) {
    std::uint8_t raw[8];
    for (int i = 0; i < 8; ++i) raw[i] = static_cast<std::uint8_t>(value >> (8 * i));
    return fnv1a64(std::span<const std::uint8_t>(raw, 8), seed);
}

inline std::uint64_t fnv1a64_f64(double value, std::uint64_t seed) {
    return fnv1a64_u64(std::bit_cast<std::uint64_t>(value), seed);
}

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void i8(std::int8_t v) { buf_.push_back(static_cast<std::uint8_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }

    void u64_vec(std::span<const std::uint64_t> v) {
        u64(v.size());
        for (auto x : v) u64(x);
    }
    void size_vec(std::span<const std::size_t> v) {
        u64(v.size());
        for (auto x : v) u64(static_cast<std::uint64_t>(x));
    }
    void i8_vec(std::span<const std::int8_t> v) {
        u64(v.size());
        for (auto x : v) i8(x);
    }
    void f64_vec(std::span<const double> v) {
        u64(v.size());
        for (auto x : v) f64(x);
    }

    const std::vector<std::uint8_t>& buffer() const { return buf_; }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

    std::uint8_t u8() { return take(1)[0]; }
    std::uint32_t u32() {
        auto b = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        auto b = take(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    }
    std::int8_t i8() { return static_cast<std::int8_t>(u8()); }
    double f64() { return std::bit_cast<double>(u64()); }

    std::vector<std::size_t> size_vec() {
        const std::uint64_t len = u64();
        check_remaining(len * 8);
        std::vector<std::size_t> v(len);
        for (auto& x : v) x = static_cast<std::size_t>(u64());
        return v;
    }
    std::vector<std::uint64_t> u64_vec() {
        const std::uint64_t len = u64();
        check_remaining(len * 8);
        std::vector<std::uint64_t> v(len);
        for (auto& x : v) x = u64();
        return v;
    }
    std::vector<std::int8_t> i8_vec() {
        const std::uint64_t len = u64();
        check_remaining(len);
        std::vector<std::int8_t> v(len);
        for (auto& x : v) x = i8();
        return v;
    }
    std::vector<double> f64_vec() {
        const std::uint64_t len = u64();
        check_remaining(len * 8);
        std::vector<double> v(len);
        for (auto& x : v) x = f64();
        return v;
    }

    std::size_t remaining() const { return data_.size() - pos_; }
    bool done() const { return pos_ == data_.size(); }

private:
    std::span<const std::uint8_t> take(std::size_t count) {
        check_remaining(count);
        auto s = data_.subspan(pos_, count);
        pos_ += count;
        return s;
    }
    void check_remaining(std::size_t count) const {
        if (data_.size() - pos_ < count)
            throw FormatError("truncated binary record");
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes);

}  // namespace bigsel

#endif
