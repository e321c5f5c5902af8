#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace stconv {

std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t fnv1a64(const std::string& s);
std::string hex64(std::uint64_t v);

/// FNV-1a digest of a file's bytes. Throws on open failure.
std::uint64_t file_digest(const std::string& path);

/// Locale-independent float formatting ('.' decimal separator, shortest
/// round-trippable form) for CSV and key=value files.
std::string format_double(double v);
std::string format_fixed(double v, int digits);

/// Flat key=value files: one pair per line, '#' comments, keys sorted on
/// write so serialization is canonical.
using KvMap = std::map<std::string, std::string>;
std::string kv_serialize(const KvMap& kv);
KvMap kv_parse(const std::string& text);
KvMap kv_read_file(const std::string& path);
void kv_write_file(const std::string& path, const KvMap& kv);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

std::vector<std::string> split(const std::string& s, char sep);

/// Binary portable graymap (P5), row-major, one byte per pixel.
void write_pgm(const std::string& path, const std::vector<unsigned char>& pixels, std::int64_t h,
               std::int64_t w);

} // namespace stconv
