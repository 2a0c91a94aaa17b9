#ifndef RG_CONFIG_HPP_
#define RG_CONFIG_HPP_

#include <cstdint>
#include <initializer_list>
#include <map>
#include <string>
#include <string_view>

namespace rg::cfg {

std::uint64_t fnv1a(std::string_view bytes);
std::string fnv1a_hex(std::string_view bytes);

/// FNV-1a of a file's raw bytes, for checkpoint/reproducibility checks.
std::string file_hash_hex(const std::string& path);

std::uint64_t splitmix64(std::uint64_t x);

/// Derive an independent stream seed from a master seed and indices.
std::uint64_t mix_seed(std::uint64_t master, std::initializer_list<std::uint64_t> parts);

/// Flat key=value file; '#' starts a comment, blank lines ignored.
std::map<std::string, std::string> parse_kv_file(const std::string& path);
std::map<std::string, std::string> parse_kv_text(const std::string& text);

void write_kv_file(const std::map<std::string, std::string>& kv, const std::string& path);

std::string read_file(const std::string& path);

}  // namespace rg::cfg

#endif  // RG_CONFIG_HPP_
