#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace wmar {

// Writes `data` to `path` atomically: the bytes land in a temp file in the
// same directory which is then renamed over the target.
void atomic_write_file(const std::string& path, const void* data, size_t size);
void atomic_write_file(const std::string& path, const std::string& text);
void atomic_write_file(const std::string& path, const std::vector<uint8_t>& bytes);

std::string read_text_file(const std::string& path);
std::vector<uint8_t> read_binary_file(const std::string& path);
bool file_exists(const std::string& path);
void make_dirs(const std::string& path);

// Immediate subdirectory names, sorted.
std::vector<std::string> list_subdirs(const std::string& path);

std::string path_join(const std::string& a, const std::string& b);

// FNV-1a over bytes; used for config and suite hashes.
uint64_t fnv1a64(const void* data, size_t size);
uint64_t fnv1a64(const std::string& s);
std::string hex64(uint64_t v);

}  // namespace wmar
