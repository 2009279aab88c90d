#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace tomodet::io {

// Little-endian primitives shared by the TDVOL1 / TDSINO1 / TDCKPT1 formats.
void write_u32(std::ostream& os, std::uint32_t v);
void write_f32(std::ostream& os, float v);
void write_f64(std::ostream& os, double v);
void write_f32_array(std::ostream& os, std::span<const float> values);

// Each reader throws DataError("truncated ...") when the stream runs dry.
std::uint32_t read_u32(std::istream& is, const char* what);
float read_f32(std::istream& is, const char* what);
double read_f64(std::istream& is, const char* what);
std::vector<float> read_f32_array(std::istream& is, std::size_t count, const char* what);

/// Reads a text line terminated by '\n' and compares it to `magic`.
void expect_magic(std::istream& is, const std::string& magic, const std::filesystem::path& path);

/// Writes through a sibling temp file and renames on success, so a failed
/// writer never leaves a partial file at `path`.
void write_atomically(const std::filesystem::path& path,
                      const std::function<void(std::ostream&)>& writer);

} // namespace tomodet::io
