#include "mcinv/csv.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace mcinv {

std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

void save_matrix_csv(const std::string& path, const Matrix& m) {
  std::ostringstream out;
  out << m.rows() << "," << m.cols() << "\n";
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      if (c) out << ",";
      out << format_double(m(r, c));
    }
    out << "\n";
  }
  write_text_file(path, out.str());
}

Matrix load_matrix_csv(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": empty matrix file");
  const auto header = split_csv_line(line);
  if (header.size() != 2) throw IoError(path + ": bad matrix header");
  const Index rows = parse_int(header[0]);
  const Index cols = parse_int(header[1]);
  if (rows < 1 || cols < 1) throw IoError(path + ": bad matrix shape");
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    if (!std::getline(in, line)) throw IoError(path + ": truncated matrix");
    const auto tokens = split_csv_line(line);
    if (static_cast<Index>(tokens.size()) != cols)
      throw IoError(path + ": bad matrix row width");
    for (Index c = 0; c < cols; ++c) m(r, c) = parse_double(tokens[static_cast<std::size_t>(c)]);
  }
  return m;
}

void save_vector_csv(const std::string& path, const Vector& v) {
  save_matrix_csv(path, v);
}

Vector load_vector_csv(const std::string& path) {
  const Matrix m = load_matrix_csv(path);
  if (m.cols() != 1) throw IoError(path + ": expected a single-column vector");
  return m.col(0);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> tokens;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      tokens.push_back(line.substr(start));
      break;
    }
    tokens.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  if (!tokens.empty() && !tokens.back().empty() && tokens.back().back() == '\r')
    tokens.back().pop_back();
  return tokens;
}

double parse_double(const std::string& token) {
  double value = 0.0;
  const char* begin = token.data();
  const char* end = begin + token.size();
  while (begin < end && *begin == ' ') ++begin;
  if (begin < end && (token == "inf" || token == "+inf"))
    return std::numeric_limits<double>::infinity();
  const auto result = std::from_chars(begin, end, value);
  if (result.ec != std::errc{})
    throw IoError("cannot parse number: '" + token + "'");
  return value;
}

std::int64_t parse_int(const std::string& token) {
  std::int64_t value = 0;
  const char* begin = token.data();
  const char* end = begin + token.size();
  while (begin < end && *begin == ' ') ++begin;
  const auto result = std::from_chars(begin, end, value);
  if (result.ec != std::errc{})
    throw IoError("cannot parse integer: '" + token + "'");
  return value;
}

std::uint64_t parse_uint(const std::string& token) {
  std::uint64_t value = 0;
  const char* begin = token.data();
  const char* end = begin + token.size();
  while (begin < end && *begin == ' ') ++begin;
  const auto result = std::from_chars(begin, end, value);
  if (result.ec != std::errc{})
    throw IoError("cannot parse unsigned integer: '" + token + "'");
  return value;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << content;
  if (!out) throw IoError("write failed: " + path);
}

std::uint64_t fnv1a_hash(const std::string& bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (const char ch : bytes) {
    hash ^= static_cast<unsigned char>(ch);
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::string hash_hex(std::uint64_t hash) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(hash));
  return buf;
}

}  // namespace mcinv
