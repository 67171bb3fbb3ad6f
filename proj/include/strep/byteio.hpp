#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "strep/error.hpp"

namespace strep::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

/// Appends little-endian scalars to a byte buffer.
class ByteWriter {
   public:
    template <typename U>
    void put(U v) {
        static_assert(std::is_trivially_copyable_v<U>);
        const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
        buf_.insert(buf_.end(), p, p + sizeof(U));
    }
    void bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        buf_.insert(buf_.end(), p, p + n);
    }
    void str(std::string_view s) { bytes(s.data(), s.size()); }

    const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }
    std::vector<std::uint8_t>& buffer() noexcept { return buf_; }

   private:
    std::vector<std::uint8_t> buf_;
};

/// Bounds-checked reader; running off the end raises a Data error naming `what`.
class ByteReader {
   public:
    ByteReader(const std::vector<std::uint8_t>& buf, std::string what) : buf_(buf), what_(std::move(what)) {}

    template <typename U>
    U get() {
        U v;
        need(sizeof(U));
        std::memcpy(&v, buf_.data() + pos_, sizeof(U));
        pos_ += sizeof(U);
        return v;
    }
    void bytes(void* out, std::size_t n) {
        need(n);
        std::memcpy(out, buf_.data() + pos_, n);
        pos_ += n;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    std::size_t position() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return buf_.size() - pos_; }

   private:
    void need(std::size_t n) const {
        if (n > buf_.size() - pos_)
            fail(ErrorKind::Data, "corrupt " + what_ + ": truncated at byte " + std::to_string(pos_));
    }

    const std::vector<std::uint8_t>& buf_;
    std::string what_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ULL);
inline std::uint64_t fnv1a(std::string_view s) { return fnv1a(s.data(), s.size()); }

std::string hex64(std::uint64_t v);

}  // namespace strep::io
