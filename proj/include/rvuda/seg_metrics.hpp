#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

namespace rvuda {

/// How classes with an empty union (absent from both prediction and ground
/// truth) enter the mean.
enum class AbsentClassPolicy { exclude, zero };

/// counts[g][p] = points with ground truth g predicted as p.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes, std::optional<int32_t> ignore_class = std::nullopt);

  int classes() const { return classes_; }
  std::optional<int32_t> ignore_class() const { return ignore_; }

  /// Points whose ground truth is the ignore class are skipped. Predictions
  /// must be real classes.
  void accumulate(std::span<const int32_t> pred, std::span<const int32_t> gt);
  void merge(const ConfusionMatrix& other);

  uint64_t count(int gt, int pred) const { return counts_[static_cast<size_t>(gt) * classes_ + pred]; }
  uint64_t total() const;

  /// Per-class IoU in [0,1]; nullopt for the ignore class and for classes
  /// whose union is empty. Throws Errc::empty_input on an empty matrix.
  std::vector<std::optional<double>> iou() const;
  /// Mean IoU in percent.
  double miou(AbsentClassPolicy policy = AbsentClassPolicy::exclude) const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int classes_;
  std::optional<int32_t> ignore_;
  std::vector<uint64_t> counts_;
};

/// `class,iou` rows (undefined classes print "undefined") plus `miou,<v>`.
void write_iou_csv(std::ostream& out, const ConfusionMatrix& cm, AbsentClassPolicy policy);
/// Aligned human-readable table of the same numbers.
void write_iou_table(std::ostream& out, const ConfusionMatrix& cm, AbsentClassPolicy policy);

}  // namespace rvuda
