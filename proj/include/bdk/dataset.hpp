#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "bdk/error.hpp"
#include "bdk/linalg.hpp"

namespace bdk {

enum class TargetKind { ClassLabels, RealValues };

// Per-column affine transform applied as (x - mean) / std.
struct Standardization {
  std::vector<double> mean;
  std::vector<double> stddev;

  bool empty() const noexcept { return mean.empty(); }
};

struct Dataset {
  Matrix inputs;                 // N x D
  TargetKind kind = TargetKind::RealValues;
  std::vector<int> labels;       // ClassLabels
  std::vector<double> targets;   // RealValues
  std::size_t num_classes = 0;   // ClassLabels
  Standardization input_stats;   // empty when inputs are raw
  Standardization target_stats;  // one column; empty when targets are raw

  std::size_t size() const noexcept { return inputs.rows(); }
  std::size_t dim() const noexcept { return inputs.cols(); }
  bool is_classification() const noexcept { return kind == TargetKind::ClassLabels; }

  void validate() const {
    if (size() == 0) throw PreconditionError("Dataset: no rows");
    for (double v : inputs.data())
      if (!std::isfinite(v)) throw PreconditionError("Dataset: non-finite input value");
    if (is_classification()) {
      if (labels.size() != size()) throw ShapeError("Dataset: label count does not match rows");
      for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
          throw PreconditionError("Dataset: label out of range");
    } else {
      if (targets.size() != size()) throw ShapeError("Dataset: target count does not match rows");
      for (double v : targets)
        if (!std::isfinite(v)) throw PreconditionError("Dataset: non-finite target");
    }
  }
};

// Row subset in the given order (repeats allowed). Stats are carried over.
inline Dataset gather_rows(const Dataset& d, std::span<const std::size_t> rows) {
  Dataset out;
  out.kind = d.kind;
  out.num_classes = d.num_classes;
  out.input_stats = d.input_stats;
  out.target_stats = d.target_stats;
  out.inputs = Matrix(rows.size(), d.dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= d.size()) throw ShapeError("gather_rows: row index out of range");
    auto src = d.inputs.row(rows[i]);
    std::copy(src.begin(), src.end(), out.inputs.row(i).begin());
    if (d.is_classification()) {
      out.labels.push_back(d.labels[rows[i]]);
    } else {
      out.targets.push_back(d.targets[rows[i]]);
    }
  }
  return out;
}

}  // namespace bdk
