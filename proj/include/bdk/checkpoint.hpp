#pragma once

// Binary checkpoints. All integers and reals are little-endian.
//
//   parameter record:  "BDK1" | u32 head tag | u32 n_widths | u32 widths[n_widths]
//                      | u64 n_values | f64 values[n_values]
//   ensemble file:     "BDKE" | u64 count | count parameter records
//
// Head tags: 0 softmax (classes = final width), 1 mean-only, 2 mean/log-variance.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "bdk/error.hpp"
#include "bdk/nn.hpp"

namespace bdk {

namespace detail {

template <typename U>
void put_le(std::ostream& os, U v) {
  std::array<char, sizeof(U)> buf{};
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf.data(), buf.size());
}

template <typename U>
U get_le(std::istream& is, const char* what) {
  std::array<unsigned char, sizeof(U)> buf{};
  if (!is.read(reinterpret_cast<char*>(buf.data()), buf.size()))
    throw ParseError(std::string("checkpoint truncated while reading ") + what);
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
  char got[4];
  if (!is.read(got, 4) || std::memcmp(got, magic, 4) != 0)
    throw ParseError(std::string("bad checkpoint magic, expected ") + magic);
}

}  // namespace detail

struct Checkpoint {
  MlpSpec spec;
  ParamVector params;
};

inline void write_params(std::ostream& os, const MlpSpec& spec, const ParamVector& params) {
  if (params.size() != num_params(spec)) throw ShapeError("write_params: parameter count does not match spec");
  os.write("BDK1", 4);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(spec.head.kind));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(spec.widths.size()));
  for (auto w : spec.widths) detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(w));
  detail::put_le<std::uint64_t>(os, params.size());
  for (double v : params.values()) detail::put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
}

inline Checkpoint read_params(std::istream& is) {
  detail::expect_magic(is, "BDK1");
  const auto tag = detail::get_le<std::uint32_t>(is, "head tag");
  if (tag > 2) throw ParseError("unknown head tag " + std::to_string(tag));
  const auto n_widths = detail::get_le<std::uint32_t>(is, "width count");
  if (n_widths < 2 || n_widths > 64) throw ParseError("implausible width count " + std::to_string(n_widths));
  std::vector<std::size_t> widths(n_widths);
  for (auto& w : widths) w = detail::get_le<std::uint32_t>(is, "widths");
  const auto kind = static_cast<HeadKind>(tag);
  Head head{kind, kind == HeadKind::SoftmaxClassifier ? widths.back() : 0};
  MlpSpec spec{std::move(widths), head};
  try {
    spec.validate();
  } catch (const PreconditionError& e) {
    throw ParseError(std::string("checkpoint holds an invalid spec: ") + e.what());
  }
  const auto n = detail::get_le<std::uint64_t>(is, "value count");
  if (n != num_params(spec)) throw ParseError("checkpoint value count does not match its spec");
  ParamVector p(n);
  for (double& v : p.values()) v = std::bit_cast<double>(detail::get_le<std::uint64_t>(is, "values"));
  return {std::move(spec), std::move(p)};
}

inline void write_ensemble(std::ostream& os, const MlpSpec& spec, const std::vector<ParamVector>& samples) {
  os.write("BDKE", 4);
  detail::put_le<std::uint64_t>(os, samples.size());
  for (const auto& s : samples) write_params(os, spec, s);
}

struct EnsembleCheckpoint {
  MlpSpec spec;
  std::vector<ParamVector> samples;
};

inline EnsembleCheckpoint read_ensemble(std::istream& is) {
  detail::expect_magic(is, "BDKE");
  const auto count = detail::get_le<std::uint64_t>(is, "sample count");
  EnsembleCheckpoint out;
  for (std::uint64_t i = 0; i < count; ++i) {
    auto c = read_params(is);
    if (i == 0) {
      out.spec = c.spec;
    } else if (!(c.spec == out.spec)) {
      throw ParseError("ensemble record " + std::to_string(i) + " has a different spec");
    }
    out.samples.push_back(std::move(c.params));
  }
  return out;
}

// Writes to a sibling temp file and renames it over the target.
template <typename Fn>
void write_file_atomic(const std::filesystem::path& path, Fn&& write, bool binary = true) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, binary ? std::ios::binary : std::ios::out);
    if (!os) throw Error("cannot open " + tmp.string() + " for writing");
    write(os);
    if (!os) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void save_params(const std::filesystem::path& path, const MlpSpec& spec, const ParamVector& params) {
  write_file_atomic(path, [&](std::ostream& os) { write_params(os, spec, params); });
}

inline void save_ensemble(const std::filesystem::path& path, const MlpSpec& spec,
                          const std::vector<ParamVector>& samples) {
  write_file_atomic(path, [&](std::ostream& os) { write_ensemble(os, spec, samples); });
}

inline Checkpoint load_params(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint " + path.string());
  return read_params(is);
}

inline EnsembleCheckpoint load_ensemble(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open ensemble " + path.string());
  return read_ensemble(is);
}

// Accepts either file kind; a single-parameter checkpoint loads as a
// one-member ensemble.
inline EnsembleCheckpoint load_any(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  char magic[4] = {};
  is.read(magic, 4);
  is.seekg(0);
  if (std::memcmp(magic, "BDKE", 4) == 0) return read_ensemble(is);
  auto c = read_params(is);
  return {std::move(c.spec), {std::move(c.params)}};
}

}  // namespace bdk
