#pragma once

// Toy dataset generators and loaders for CSV regression tables and MNIST IDX
// files.

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "bdk/dataset.hpp"
#include "bdk/error.hpp"
#include "bdk/rng.hpp"

namespace bdk {

inline constexpr std::uint64_t kCanonicalToy2dSeed = 1;
inline constexpr std::uint64_t kCanonicalToy1dSeed = 1;

// 10 points from N((-2,-2), I) labeled 0, then 10 from N((2,2), I) labeled 1.
inline Dataset gen_toy2d(std::uint64_t seed) {
  auto rng = make_engine(seed, Stream::DataGen);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset d;
  d.kind = TargetKind::ClassLabels;
  d.num_classes = 2;
  d.inputs = Matrix(20, 2);
  for (std::size_t i = 0; i < 20; ++i) {
    const int label = i < 10 ? 0 : 1;
    const double center = label == 0 ? -2.0 : 2.0;
    d.inputs(i, 0) = center + normal(rng);
    d.inputs(i, 1) = center + normal(rng);
    d.labels.push_back(label);
  }
  return d;
}

struct Toy1dOptions {
  std::size_t n = 20;
  double x_low = -4.0;
  double x_high = 4.0;
  double noise_sd = 3.0;  // 0 gives y = x^3 exactly
};

// y = x^3 + eps, x ~ U[x_low, x_high], eps ~ N(0, noise_sd^2).
inline Dataset gen_toy1d(std::uint64_t seed, const Toy1dOptions& opt = {}) {
  require(opt.n >= 1 && opt.x_low < opt.x_high && opt.noise_sd >= 0.0, "gen_toy1d: bad options");
  auto rng = make_engine(seed, Stream::DataGen);
  std::uniform_real_distribution<double> unif(opt.x_low, opt.x_high);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset d;
  d.kind = TargetKind::RealValues;
  d.inputs = Matrix(opt.n, 1);
  for (std::size_t i = 0; i < opt.n; ++i) {
    const double x = unif(rng);
    const double eps = normal(rng);
    d.inputs(i, 0) = x;
    d.targets.push_back(x * x * x + opt.noise_sd * eps);
  }
  return d;
}

// Column means and population standard deviations; constant columns get a
// scale of 1.
inline Standardization column_stats(const Matrix& m) {
  Standardization s{std::vector<double>(m.cols(), 0.0), std::vector<double>(m.cols(), 0.0)};
  const double n = static_cast<double>(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) s.mean[c] += m(r, c);
  for (double& v : s.mean) v /= n;
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) s.stddev[c] += (m(r, c) - s.mean[c]) * (m(r, c) - s.mean[c]);
  for (double& v : s.stddev) {
    v = std::sqrt(v / n);
    if (!(v > 0.0)) v = 1.0;
  }
  return s;
}

inline void standardize(Matrix& m, const Standardization& s) {
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) = (m(r, c) - s.mean[c]) / s.stddev[c];
}

inline void destandardize(Matrix& m, const Standardization& s) {
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) = m(r, c) * s.stddev[c] + s.mean[c];
}

struct CsvTable {
  std::vector<std::string> header;  // empty when the file has none
  Matrix values;
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\"");
  const auto e = s.find_last_not_of(" \t\r\"");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(trim(f));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  std::size_t used = 0;
  try {
    double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace detail

// Comma-separated numbers. The first line is a header when any of its fields
// is non-numeric.
inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path.string());
  CsvTable t;
  std::vector<double> values;
  std::size_t cols = 0, rows = 0, lineno = 0;
  std::string line;
  while (std::getline(is, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv_line(line);
    const bool first = rows == 0 && t.header.empty();
    if (first) {
      const bool numeric = std::all_of(fields.begin(), fields.end(),
                                       [](const std::string& f) { return detail::parse_double(f).has_value(); });
      if (!numeric) {
        t.header = fields;
        cols = fields.size();
        continue;
      }
    }
    if (cols == 0) cols = fields.size();
    if (fields.size() != cols)
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(cols) +
                       " columns, found " + std::to_string(fields.size()));
    for (std::size_t c = 0; c < fields.size(); ++c) {
      auto v = detail::parse_double(fields[c]);
      if (!v)
        throw ParseError(path.string() + ":" + std::to_string(lineno) + ": column " + std::to_string(c + 1) +
                         " is not a number ('" + fields[c] + "')");
      values.push_back(*v);
    }
    ++rows;
  }
  if (rows == 0) throw ParseError(path.string() + ": no data rows");
  t.values = Matrix(rows, cols, std::move(values));
  return t;
}

struct RegressionSplit {
  std::size_t train_n = 456;
  std::size_t test_n = 50;
  std::uint64_t seed = 0;
  bool standardize_inputs = true;
  bool standardize_targets = true;
};

struct TrainTest {
  Dataset train;
  Dataset test;
};

// `target_column` is a header name or a 0-based column index; "-1" means the
// last column.
inline std::size_t resolve_column(const CsvTable& t, const std::string& target_column) {
  const std::size_t cols = t.values.cols();
  auto it = std::find(t.header.begin(), t.header.end(), target_column);
  if (it != t.header.end()) return static_cast<std::size_t>(it - t.header.begin());
  auto idx = detail::parse_double(target_column);
  if (!idx || *idx != std::floor(*idx)) throw PreconditionError("unknown target column '" + target_column + "'");
  long long i = static_cast<long long>(*idx);
  if (i < 0) i += static_cast<long long>(cols);
  if (i < 0 || static_cast<std::size_t>(i) >= cols) throw PreconditionError("target column out of range");
  return static_cast<std::size_t>(i);
}

// Seeded shuffle, then the first train_n rows train and the next test_n rows
// test. Statistics come from the training rows only.
inline TrainTest split_regression(const CsvTable& table, std::size_t target, const RegressionSplit& split) {
  const std::size_t n = table.values.rows(), cols = table.values.cols();
  if (split.train_n == 0 || split.test_n == 0) throw PreconditionError("split sizes must be positive");
  if (split.train_n + split.test_n > n)
    throw PreconditionError("split sizes " + std::to_string(split.train_n) + "+" + std::to_string(split.test_n) +
                            " exceed " + std::to_string(n) + " rows");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_engine(split.seed, Stream::Split);
  std::shuffle(order.begin(), order.end(), rng);

  auto build = [&](std::size_t begin, std::size_t count) {
    Dataset d;
    d.kind = TargetKind::RealValues;
    d.inputs = Matrix(count, cols - 1);
    for (std::size_t i = 0; i < count; ++i) {
      auto src = table.values.row(order[begin + i]);
      std::size_t c2 = 0;
      for (std::size_t c = 0; c < cols; ++c) {
        if (c == target) {
          d.targets.push_back(src[c]);
        } else {
          d.inputs(i, c2++) = src[c];
        }
      }
    }
    return d;
  };
  TrainTest tt{build(0, split.train_n), build(split.train_n, split.test_n)};
  if (split.standardize_inputs) {
    auto s = column_stats(tt.train.inputs);
    standardize(tt.train.inputs, s);
    standardize(tt.test.inputs, s);
    tt.train.input_stats = tt.test.input_stats = s;
  }
  if (split.standardize_targets) {
    Matrix y(split.train_n, 1, tt.train.targets);
    auto s = column_stats(y);
    for (double& v : tt.train.targets) v = (v - s.mean[0]) / s.stddev[0];
    for (double& v : tt.test.targets) v = (v - s.mean[0]) / s.stddev[0];
    tt.train.target_stats = tt.test.target_stats = s;
  }
  return tt;
}

inline TrainTest load_csv_regression(const std::filesystem::path& path, const std::string& target_column,
                                     const RegressionSplit& split) {
  auto table = read_csv(path);
  if (table.values.cols() < 2) throw ParseError(path.string() + ": need at least one feature and a target");
  return split_regression(table, resolve_column(table, target_column), split);
}

// Raw IDX payloads. Files may be gzip-compressed or plain.
struct IdxImages {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols
};

namespace detail {

struct GzCloser {
  void operator()(gzFile f) const { gzclose(f); }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

inline GzHandle gz_open(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error("missing data file " + path.string());
  GzHandle h(gzopen(path.string().c_str(), "rb"));
  if (!h) throw Error("cannot open " + path.string());
  return h;
}

inline void gz_read_exact(gzFile f, void* dst, std::size_t n, const std::filesystem::path& path) {
  auto* out = static_cast<unsigned char*>(dst);
  while (n > 0) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
    const int got = gzread(f, out, chunk);
    if (got <= 0) throw ParseError(path.string() + ": truncated IDX file");
    out += got;
    n -= static_cast<std::size_t>(got);
  }
}

inline std::uint32_t gz_read_be32(gzFile f, const std::filesystem::path& path) {
  std::array<unsigned char, 4> b{};
  gz_read_exact(f, b.data(), 4, path);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

inline IdxImages read_idx_images(const std::filesystem::path& path) {
  auto f = detail::gz_open(path);
  const auto magic = detail::gz_read_be32(f.get(), path);
  if (magic != kIdxImagesMagic) throw ParseError(path.string() + ": bad IDX image magic");
  IdxImages im;
  im.count = detail::gz_read_be32(f.get(), path);
  im.rows = detail::gz_read_be32(f.get(), path);
  im.cols = detail::gz_read_be32(f.get(), path);
  im.pixels.resize(im.count * im.rows * im.cols);
  detail::gz_read_exact(f.get(), im.pixels.data(), im.pixels.size(), path);
  return im;
}

inline std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path) {
  auto f = detail::gz_open(path);
  const auto magic = detail::gz_read_be32(f.get(), path);
  if (magic != kIdxLabelsMagic) throw ParseError(path.string() + ": bad IDX label magic");
  std::vector<std::uint8_t> labels(detail::gz_read_be32(f.get(), path));
  detail::gz_read_exact(f.get(), labels.data(), labels.size(), path);
  return labels;
}

inline constexpr double kMnistPixelScale = 126.0;

struct MnistOptions {
  std::optional<std::size_t> subset;  // keep only the first n examples in file order
  std::size_t train_n = 50000;
  std::size_t valid_n = 10000;
  std::uint64_t seed = 0;
};

struct MnistSplit {
  Dataset train;
  Dataset valid;
};

inline Dataset idx_to_dataset(const IdxImages& im, const std::vector<std::uint8_t>& labels,
                              std::span<const std::size_t> rows) {
  const std::size_t d = im.rows * im.cols;
  Dataset ds;
  ds.kind = TargetKind::ClassLabels;
  ds.num_classes = 10;
  ds.inputs = Matrix(rows.size(), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::uint8_t* src = im.pixels.data() + rows[i] * d;
    auto dst = ds.inputs.row(i);
    for (std::size_t j = 0; j < d; ++j) dst[j] = static_cast<double>(src[j]) / kMnistPixelScale;
    if (labels[rows[i]] > 9) throw ParseError("MNIST label out of range");
    ds.labels.push_back(labels[rows[i]]);
  }
  return ds;
}

// Pixels are divided by 126. After a seeded shuffle the first train_n
// examples train and the last valid_n validate.
inline MnistSplit load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                                 const MnistOptions& opt) {
  const auto im = read_idx_images(images_path);
  const auto labels = read_idx_labels(labels_path);
  if (labels.size() != im.count)
    throw ParseError("IDX count mismatch: " + std::to_string(im.count) + " images, " + std::to_string(labels.size()) +
                     " labels");
  std::size_t n = im.count;
  if (opt.subset) {
    if (*opt.subset > n) throw PreconditionError("MNIST subset larger than the file");
    n = *opt.subset;
  }
  if (opt.train_n + opt.valid_n > n)
    throw PreconditionError("MNIST split " + std::to_string(opt.train_n) + "+" + std::to_string(opt.valid_n) +
                            " exceeds " + std::to_string(n) + " examples");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_engine(opt.seed, Stream::Split);
  std::shuffle(order.begin(), order.end(), rng);
  std::span<const std::size_t> all(order);
  return {idx_to_dataset(im, labels, all.first(opt.train_n)), idx_to_dataset(im, labels, all.last(opt.valid_n))};
}

// Every example in file order.
inline Dataset load_mnist_all(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto im = read_idx_images(images_path);
  const auto labels = read_idx_labels(labels_path);
  if (labels.size() != im.count) throw ParseError("IDX count mismatch between images and labels");
  std::vector<std::size_t> rows(im.count);
  std::iota(rows.begin(), rows.end(), 0);
  return idx_to_dataset(im, labels, rows);
}

}  // namespace bdk
