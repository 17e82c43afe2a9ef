#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dbsde/error.hpp"

namespace dbsde::nn {

struct ParamEntry {
  std::string name;
  std::size_t offset;
  Eigen::Index rows;
  Eigen::Index cols;

  std::size_t size() const { return static_cast<std::size_t>(rows * cols); }

  friend bool operator==(const ParamEntry&, const ParamEntry&) = default;
};

/// Flat storage for every trainable quantity of a model. Entries are
/// column-major matrices laid out back to back.
class ParamStore {
 public:
  using MatrixMap = Eigen::Map<Eigen::MatrixXd>;
  using ConstMatrixMap = Eigen::Map<const Eigen::MatrixXd>;

  /// Appends a zero-initialised entry and returns its index.
  std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    if (rows <= 0 || cols <= 0) throw InvalidSpec("parameter '" + name + "' has an empty shape");
    if (find(name)) throw InvalidSpec("duplicate parameter name '" + name + "'");
    layout_.push_back({std::move(name), values_.size(), rows, cols});
    values_.resize(values_.size() + static_cast<std::size_t>(rows * cols), 0.0);
    return layout_.size() - 1;
  }

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t i = 0; i < layout_.size(); ++i)
      if (layout_[i].name == name) return i;
    return std::nullopt;
  }

  MatrixMap view(std::size_t entry) {
    const auto& e = layout_.at(entry);
    return MatrixMap(values_.data() + e.offset, e.rows, e.cols);
  }
  ConstMatrixMap view(std::size_t entry) const {
    const auto& e = layout_.at(entry);
    return ConstMatrixMap(values_.data() + e.offset, e.rows, e.cols);
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  const std::vector<ParamEntry>& layout() const { return layout_; }
  const ParamEntry& entry(std::size_t i) const { return layout_.at(i); }
  std::size_t size() const { return values_.size(); }

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  std::vector<double> values_;
  std::vector<ParamEntry> layout_;
};

}  // namespace dbsde::nn
