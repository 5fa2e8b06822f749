#pragma once

#include <cstddef>
#include <cstring>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "difd/error.hpp"
#include "difd/ndgrad/tensor.hpp"

namespace difd::ndgrad {

/// Parameters are split into the feature extractor (everything that shapes
/// the sentiment feature and the taggers) and the domain classifier. The two
/// groups are optimized in alternation and never in the same update.
enum class Partition : unsigned char {
  feature_extractor = 0,
  domain_classifier = 1,
};

inline std::string_view to_string(Partition p) {
  return p == Partition::feature_extractor ? "feature_extractor" : "domain_classifier";
}

inline Partition partition_from_string(std::string_view s) {
  if (s == "feature_extractor") return Partition::feature_extractor;
  if (s == "domain_classifier") return Partition::domain_classifier;
  fail(ErrorKind::data, "unknown partition label '" + std::string(s) + "'");
}

class PartitionSet {
 public:
  constexpr PartitionSet() = default;

  static constexpr PartitionSet none() { return PartitionSet{}; }
  static constexpr PartitionSet all() { return PartitionSet{}.with(Partition::feature_extractor).with(Partition::domain_classifier); }
  static constexpr PartitionSet only(Partition p) { return PartitionSet{}.with(p); }

  constexpr PartitionSet with(Partition p) const {
    PartitionSet s = *this;
    s.bits_ |= bit(p);
    return s;
  }

  constexpr bool contains(Partition p) const { return (bits_ & bit(p)) != 0; }
  constexpr bool empty() const { return bits_ == 0; }

 private:
  static constexpr unsigned bit(Partition p) { return 1u << static_cast<unsigned>(p); }
  unsigned bits_ = 0;
};

struct Param {
  std::string name;
  Tensor value;
  Partition partition = Partition::feature_extractor;
  /// Empty means "no gradient accumulated since the last update".
  std::vector<double> grad;
  /// Momentum buffer; only allocated when momentum > 0.
  std::vector<double> velocity;
  /// Rows that never change (the padding embedding).
  std::vector<std::size_t> frozen_rows;

  bool has_grad() const noexcept { return !grad.empty(); }
};

/// Named, partitioned trainable parameters. Names are unique and insertion
/// order is preserved, which fixes the iteration order of every reduction
/// over parameters (gradient norms, checkpoints).
class ParamStore {
 public:
  Param& add(std::string name, Tensor value, Partition partition,
             std::vector<std::size_t> frozen_rows = {}) {
    if (index_.count(name)) fail(ErrorKind::usage, "duplicate parameter name '" + name + "'");
    for (auto r : frozen_rows) {
      if (r >= value.rows()) fail(ErrorKind::shape, "frozen row out of range for '" + name + "'");
    }
    index_.emplace(name, params_.size());
    params_.push_back(Param{std::move(name), std::move(value), partition, {}, {}, std::move(frozen_rows)});
    return params_.back();
  }

  bool contains(std::string_view name) const { return index_.find(std::string(name)) != index_.end(); }

  std::size_t index_of(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) fail(ErrorKind::usage, "unknown parameter '" + std::string(name) + "'");
    return it->second;
  }

  Param& at(std::string_view name) { return params_[index_of(name)]; }
  const Param& at(std::string_view name) const { return params_[index_of(name)]; }
  Param& at(std::size_t i) { return params_.at(i); }
  const Param& at(std::size_t i) const { return params_.at(i); }

  std::size_t size() const noexcept { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) p.grad.clear();
  }

  std::size_t num_scalars(PartitionSet set = PartitionSet::all()) const {
    std::size_t n = 0;
    for (const auto& p : params_) {
      if (set.contains(p.partition)) n += p.value.size();
    }
    return n;
  }

 private:
  std::vector<Param> params_;
  std::map<std::string, std::size_t> index_;
};

/// True when every parameter value in `partition` is bit-identical in both stores.
inline bool partition_equal(const ParamStore& a, const ParamStore& b, Partition partition) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& pa = a.at(i);
    const auto& pb = b.at(i);
    if (pa.name != pb.name || pa.partition != pb.partition) return false;
    if (pa.partition != partition) continue;
    if (pa.value.shape != pb.value.shape) return false;
    if (std::memcmp(pa.value.data.data(), pb.value.data.data(), pa.value.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace difd::ndgrad
