#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mcinv/types.hpp"

namespace mcinv {

// Plain-text serialization helpers. Doubles are written with %.17g so
// parsing them back is lossless and reruns are byte-identical.

std::string format_double(double value);

// Matrix layout: header row "rows,cols", then one row per line, row-major.
void save_matrix_csv(const std::string& path, const Matrix& m);
Matrix load_matrix_csv(const std::string& path);

void save_vector_csv(const std::string& path, const Vector& v);
Vector load_vector_csv(const std::string& path);

// Line-level helpers shared by the file formats.
std::vector<std::string> split_csv_line(const std::string& line);
double parse_double(const std::string& token);
std::int64_t parse_int(const std::string& token);
std::uint64_t parse_uint(const std::string& token);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// FNV-1a 64-bit content hash, used to stamp protocols and configs into
// output headers and manifests.
std::uint64_t fnv1a_hash(const std::string& bytes);
std::string hash_hex(std::uint64_t hash);

}  // namespace mcinv
