#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace molembed {

/// SHA-256 over a byte buffer, hex-encoded.
std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);

/// Content digest of a file. Throws Error if the file cannot be read.
std::string sha256_file(const std::string& path);

}  // namespace molembed
