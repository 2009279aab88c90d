#include "tomodet/util/binary_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "tomodet/util/error.hpp"

namespace tomodet::io {

namespace {

template <typename U>
void put_le(std::ostream& os, U v)
{
    std::array<char, sizeof(U)> bytes{};
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& is, const char* what)
{
    std::array<unsigned char, sizeof(U)> bytes{};
    is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
    if (is.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw DataError(std::string("truncated payload while reading ") + what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
    return v;
}

} // namespace

void write_u32(std::ostream& os, std::uint32_t v) { put_le(os, v); }
void write_f32(std::ostream& os, float v) { put_le(os, std::bit_cast<std::uint32_t>(v)); }
void write_f64(std::ostream& os, double v) { put_le(os, std::bit_cast<std::uint64_t>(v)); }

void write_f32_array(std::ostream& os, std::span<const float> values)
{
    std::vector<char> buf(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto u = std::bit_cast<std::uint32_t>(values[i]);
        for (int b = 0; b < 4; ++b) buf[4 * i + b] = static_cast<char>((u >> (8 * b)) & 0xFF);
    }
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

std::uint32_t read_u32(std::istream& is, const char* what) { return get_le<std::uint32_t>(is, what); }
float read_f32(std::istream& is, const char* what) { return std::bit_cast<float>(get_le<std::uint32_t>(is, what)); }
double read_f64(std::istream& is, const char* what) { return std::bit_cast<double>(get_le<std::uint64_t>(is, what)); }

std::vector<float> read_f32_array(std::istream& is, std::size_t count, const char* what)
{
    std::vector<unsigned char> buf(count * 4);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (is.gcount() != static_cast<std::streamsize>(buf.size()))
        throw DataError(std::string("truncated payload while reading ") + what);
    std::vector<float> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(buf[4 * i + b]) << (8 * b);
        out[i] = std::bit_cast<float>(u);
    }
    return out;
}

void expect_magic(std::istream& is, const std::string& magic, const std::filesystem::path& path)
{
    std::string line;
    if (!std::getline(is, line) || line != magic)
        throw DataError("magic mismatch in " + path.string() + ": expected " + magic);
}

void write_atomically(const std::filesystem::path& path,
                      const std::function<void(std::ostream&)>& writer)
{
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw DataError("cannot open " + tmp.string() + " for writing");
        try {
            writer(os);
        } catch (...) {
            os.close();
            std::filesystem::remove(tmp);
            throw;
        }
        os.flush();
        if (!os) {
            os.close();
            std::filesystem::remove(tmp);
            throw DataError("write failed for " + path.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

} // namespace tomodet::io
