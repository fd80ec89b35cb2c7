#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "retriever.hpp"
#include "scorer.hpp"

namespace exrank {

// Layout (little-endian):
//   char[8]  magic        "EXRKSCR1" or "EXRKRET1"
//   u32      version
//   u32      dim
//   u32      vocab size
//   u32      max_len      (0 for retrievers)
//   u64      parameter count
//   str      segment marker (empty for retrievers): u32 byte length, bytes
//   vocab    per token: u32 byte length, bytes
//   f64[]    parameters
//   u64      parameter fingerprint

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw CheckpointError("checkpoint truncated");
  return v;
}

inline std::string get_string(std::istream& in) {
  auto len = get<std::uint32_t>(in);
  if (len > (1u << 20)) throw CheckpointError("checkpoint string length out of range");
  std::string s(len, '\0');
  if (!in.read(s.data(), len)) throw CheckpointError("checkpoint truncated");
  return s;
}

struct Blob {
  std::uint32_t dim = 0;
  std::uint32_t max_len = 0;
  std::string marker;
  std::vector<std::string> tokens;
  std::vector<double> params;
};

inline void write_blob(const std::filesystem::path& path, std::string_view magic, std::uint32_t dim,
                       std::uint32_t max_len, std::string_view marker, const Vocabulary& vocab,
                       std::span<const double> params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(magic.data(), 8);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, dim);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(vocab.size()));
  put<std::uint32_t>(out, max_len);
  put<std::uint64_t>(out, params.size());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(marker.size()));
  out.write(marker.data(), static_cast<std::streamsize>(marker.size()));
  for (const auto& t : vocab.tokens()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.size()));
    out.write(t.data(), static_cast<std::streamsize>(t.size()));
  }
  out.write(reinterpret_cast<const char*>(params.data()), static_cast<std::streamsize>(params.size() * sizeof(double)));
  put<std::uint64_t>(out, params_fingerprint(params));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

inline Blob read_blob(const std::filesystem::path& path, std::string_view magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::array<char, 8> m{};
  if (!in.read(m.data(), 8) || std::string_view(m.data(), 8) != magic)
    throw CheckpointError(path.string() + ": not a " + std::string(magic) + " checkpoint");
  if (auto v = get<std::uint32_t>(in); v != kCheckpointVersion)
    throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(v));
  Blob b;
  b.dim = get<std::uint32_t>(in);
  auto vsize = get<std::uint32_t>(in);
  b.max_len = get<std::uint32_t>(in);
  auto count = get<std::uint64_t>(in);
  b.marker = get_string(in);
  b.tokens.reserve(vsize);
  for (std::uint32_t i = 0; i < vsize; ++i) b.tokens.push_back(get_string(in));
  b.params.resize(count);
  if (!in.read(reinterpret_cast<char*>(b.params.data()), static_cast<std::streamsize>(count * sizeof(double))))
    throw CheckpointError("checkpoint truncated");
  if (get<std::uint64_t>(in) != params_fingerprint(b.params)) throw CheckpointError(path.string() + ": checksum mismatch");
  return b;
}

}  // namespace detail

inline void save_scorer(const std::filesystem::path& path, const ReferenceScorer& s) {
  detail::write_blob(path, "EXRKSCR1", static_cast<std::uint32_t>(s.dim()), static_cast<std::uint32_t>(s.max_len()),
                     s.marker(), s.vocabulary(), s.params());
}

inline ReferenceScorer load_scorer(const std::filesystem::path& path) {
  auto b = detail::read_blob(path, "EXRKSCR1");
  ReferenceScorer s(Vocabulary::from_token_list(std::move(b.tokens)), b.dim, b.max_len, b.marker);
  if (b.params.size() != s.param_count()) throw CheckpointError(path.string() + ": parameter count does not match header");
  std::copy(b.params.begin(), b.params.end(), s.params().begin());
  return s;
}

inline void save_retriever(const std::filesystem::path& path, const RetrieverState& r) {
  detail::write_blob(path, "EXRKRET1", static_cast<std::uint32_t>(r.dim()), 0, "", r.vocabulary(), r.params());
}

inline RetrieverState load_retriever(const std::filesystem::path& path) {
  auto b = detail::read_blob(path, "EXRKRET1");
  RetrieverState r(Vocabulary::from_token_list(std::move(b.tokens)), b.dim);
  if (b.params.size() != r.param_count()) throw CheckpointError(path.string() + ": parameter count does not match header");
  std::copy(b.params.begin(), b.params.end(), r.params().begin());
  return r;
}

/// Hex SHA-256 of a file's bytes.
inline std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md.data(), &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

}  // namespace exrank
