#include "rvuda/seg_metrics.hpp"

#include <iomanip>
#include <string>

#include "rvuda/error.hpp"

namespace rvuda {

ConfusionMatrix::ConfusionMatrix(int classes, std::optional<int32_t> ignore_class)
    : classes_(classes), ignore_(ignore_class), counts_(static_cast<size_t>(classes) * classes, 0) {
  if (classes < 1) throw Error(Errc::invalid_argument, "confusion matrix needs at least one class");
}

void ConfusionMatrix::accumulate(std::span<const int32_t> pred, std::span<const int32_t> gt) {
  if (pred.size() != gt.size()) throw Error(Errc::shape_mismatch, "prediction and ground truth lengths differ");
  auto in_range = [&](int32_t id) { return id >= 0 && id < classes_; };
  for (size_t i = 0; i < gt.size(); ++i) {
    if (ignore_ && gt[i] == *ignore_) continue;
    if (!in_range(gt[i])) throw Error(Errc::label_out_of_range, "ground truth id " + std::to_string(gt[i]));
    if (!in_range(pred[i])) throw Error(Errc::label_out_of_range, "predicted id " + std::to_string(pred[i]));
  }
  for (size_t i = 0; i < gt.size(); ++i) {
    if (ignore_ && gt[i] == *ignore_) continue;
    ++counts_[static_cast<size_t>(gt[i]) * classes_ + pred[i]];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_ || other.ignore_ != ignore_)
    throw Error(Errc::shape_mismatch, "cannot merge confusion matrices of different layouts");
  for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

uint64_t ConfusionMatrix::total() const {
  uint64_t n = 0;
  for (uint64_t c : counts_) n += c;
  return n;
}

std::vector<std::optional<double>> ConfusionMatrix::iou() const {
  if (total() == 0) throw Error(Errc::empty_input, "confusion matrix is empty");
  std::vector<std::optional<double>> out(classes_);
  for (int c = 0; c < classes_; ++c) {
    if (ignore_ && c == *ignore_) continue;
    uint64_t row = 0, col = 0;
    for (int k = 0; k < classes_; ++k) {
      row += count(c, k);
      col += count(k, c);
    }
    const uint64_t inter = count(c, c);
    const uint64_t uni = row + col - inter;
    if (uni > 0) out[c] = static_cast<double>(inter) / static_cast<double>(uni);
  }
  return out;
}

double ConfusionMatrix::miou(AbsentClassPolicy policy) const {
  const auto per_class = iou();
  double sum = 0.0;
  int n = 0;
  for (int c = 0; c < classes_; ++c) {
    if (ignore_ && c == *ignore_) continue;
    if (per_class[c]) {
      sum += *per_class[c];
      ++n;
    } else if (policy == AbsentClassPolicy::zero) {
      ++n;
    }
  }
  return n == 0 ? 0.0 : 100.0 * sum / n;
}

void write_iou_csv(std::ostream& out, const ConfusionMatrix& cm, AbsentClassPolicy policy) {
  const auto per_class = cm.iou();
  out << "class,iou\n" << std::setprecision(10);
  for (int c = 0; c < cm.classes(); ++c) {
    if (cm.ignore_class() && c == *cm.ignore_class()) continue;
    out << c << ',';
    if (per_class[c]) {
      out << *per_class[c];
    } else {
      out << "undefined";
    }
    out << '\n';
  }
  out << "miou," << cm.miou(policy) << '\n';
}

void write_iou_table(std::ostream& out, const ConfusionMatrix& cm, AbsentClassPolicy policy) {
  const auto per_class = cm.iou();
  out << std::left << std::setw(8) << "class" << "IoU%\n";
  for (int c = 0; c < cm.classes(); ++c) {
    if (cm.ignore_class() && c == *cm.ignore_class()) continue;
    out << std::left << std::setw(8) << c;
    if (per_class[c]) {
      out << std::fixed << std::setprecision(2) << 100.0 * *per_class[c] << '\n';
    } else {
      out << "undefined\n";
    }
  }
  out << std::left << std::setw(8) << "mIoU" << std::fixed << std::setprecision(2) << cm.miou(policy) << '\n';
  out.unsetf(std::ios::fixed);
}

}  // namespace rvuda
