#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "derlab/errors.hpp"

namespace derlab {

// Little-endian byte stream helpers shared by the dataset and checkpoint
// formats. Doubles are stored as their IEEE-754 bit pattern so that
// write/read round-trips are bit-exact.

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }

    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }

    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }

    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }

    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }

    void raw(const void* data, std::size_t n) {
        const char* p = static_cast<const char*>(data);
        buf_.insert(buf_.end(), p, p + n);
    }

    void str(const std::string& s) {
        u64(s.size());
        raw(s.data(), s.size());
    }

    void f64_vec(const std::vector<double>& v) {
        u64(v.size());
        for (const double x : v) f64(x);
    }

    void u64_vec(const std::vector<std::uint64_t>& v) {
        u64(v.size());
        for (const std::uint64_t x : v) u64(x);
    }

    const std::string& bytes() const { return buf_; }
    std::string take() { return std::move(buf_); }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(data_[pos_++]);
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    std::string str() {
        const std::uint64_t n = u64();
        need(n);
        std::string s(data_.substr(pos_, n));
        pos_ += n;
        return s;
    }

    std::vector<double> f64_vec() {
        const std::uint64_t n = u64();
        std::vector<double> v(n);
        for (auto& x : v) x = f64();
        return v;
    }

    std::vector<std::uint64_t> u64_vec() {
        const std::uint64_t n = u64();
        std::vector<std::uint64_t> v(n);
        for (auto& x : v) x = u64();
        return v;
    }

    std::size_t offset() const { return pos_; }
    bool at_end() const { return pos_ == data_.size(); }

private:
    void need(std::uint64_t n) const {
        if (pos_ + n > data_.size())
            throw FormatError("truncated stream at byte offset " + std::to_string(pos_));
    }

    std::string_view data_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

}  // namespace derlab
