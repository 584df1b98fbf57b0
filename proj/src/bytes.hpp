#pragma once

// Little-endian byte (de)serialisation shared by the SCTB and SCTW formats.

#include "sct/common.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>

namespace sct::detail {

static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");

class ByteWriter {
public:
    template <class T>
    void put(T v) {
        static_assert(std::is_trivially_copyable_v<T>);
        char buf[sizeof(T)];
        std::memcpy(buf, &v, sizeof(T));
        out_.append(buf, sizeof(T));
    }
    void put_bytes(std::string_view s) { out_.append(s); }
    void put_string16(std::string_view s) {
        if (s.size() > 0xFFFF) fail(ErrorKind::Input, "string longer than 65535 bytes: " + std::string(s.substr(0, 32)));
        put<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
        put_bytes(s);
    }
    std::string& str() { return out_; }

private:
    std::string out_;
};

// Reader whose failures are reported with a caller-chosen error kind so truncation inside a
// block record can be classified differently from truncation of the file header.
class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    std::size_t remaining() const { return data_.size() - pos_; }
    std::size_t position() const { return pos_; }
    bool at_end() const { return pos_ == data_.size(); }

    template <class T>
    T get(ErrorKind kind, const std::string& context) {
        need(sizeof(T), kind, context);
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string_view get_bytes(std::size_t n, ErrorKind kind, const std::string& context) {
        need(n, kind, context);
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::string get_string16(ErrorKind kind, const std::string& context) {
        auto n = get<std::uint16_t>(kind, context);
        return std::string(get_bytes(n, kind, context));
    }

private:
    void need(std::size_t n, ErrorKind kind, const std::string& context) const {
        if (remaining() < n) fail(kind, context + ": unexpected end of data");
    }

    std::string_view data_;
    std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace sct::detail
