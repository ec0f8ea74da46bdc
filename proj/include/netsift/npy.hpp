#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace netsift {

struct NpyArray {
    std::vector<size_t> shape;
    std::vector<uint8_t> data;  // unsigned 8-bit, C order
};

// Writes an NPY v1.0 file: magic "\x93NUMPY", version 1.0, little-endian
// header length, the header dict padded with spaces so the data section
// starts on a 64-byte boundary, newline-terminated. dtype is always '|u1'.
void npy_save_u8(const std::filesystem::path& path, const NpyArray& array);

// Reads an NPY v1.0/v2.0 file holding an unsigned 8-bit C-order array.
// Throws FormatError naming the mismatch for any other dtype or layout.
NpyArray npy_load_u8(const std::filesystem::path& path);

// The exact header bytes npy_save_u8 will produce for a given shape.
std::vector<uint8_t> npy_header_bytes(const std::vector<size_t>& shape);

}  // namespace netsift
