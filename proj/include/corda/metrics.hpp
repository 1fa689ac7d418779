#pragma once

#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "corda/tensor.hpp"

namespace corda {

/// C x C pixel counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes = 0)
      : classes_(classes), counts_(static_cast<std::size_t>(classes) * classes, 0) {
    require(classes >= 0, "ConfusionMatrix: negative class count");
  }

  int classes() const { return classes_; }
  std::uint64_t operator()(int gt, int pred) const { return counts_[index(gt, pred)]; }
  std::uint64_t& operator()(int gt, int pred) { return counts_[index(gt, pred)]; }

  void update(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
              int ignore_index = kIgnoreLabel) {
    require(pred.size() == gt.size(), "update_confusion: size mismatch");
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] == ignore_index) continue;
      require(gt[i] < classes_ && pred[i] < classes_, "update_confusion: class id out of range");
      ++counts_[index(gt[i], pred[i])];
    }
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    require(o.classes_ == classes_, "ConfusionMatrix +=: class count mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
    return *this;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t index(int gt, int pred) const {
    return static_cast<std::size_t>(gt) * classes_ + static_cast<std::size_t>(pred);
  }

  int classes_;
  std::vector<std::uint64_t> counts_;
};

inline void update_confusion(ConfusionMatrix& conf, std::span<const std::uint8_t> pred,
                             std::span<const std::uint8_t> gt, int ignore_index = kIgnoreLabel) {
  conf.update(pred, gt, ignore_index);
}

/// IoU per class; nullopt when the class is absent from both gt and prediction.
inline std::vector<std::optional<double>> iou_per_class(const ConfusionMatrix& conf) {
  const int c = conf.classes();
  std::vector<std::optional<double>> out(c);
  for (int k = 0; k < c; ++k) {
    std::uint64_t row = 0, col = 0;
    for (int j = 0; j < c; ++j) {
      row += conf(k, j);
      col += conf(j, k);
    }
    const std::uint64_t denom = row + col - conf(k, k);
    if (denom > 0) out[k] = static_cast<double>(conf(k, k)) / static_cast<double>(denom);
  }
  return out;
}

/// Mean of the defined IoUs over all classes, or over `subset` when given.
inline double mean_iou(const ConfusionMatrix& conf, std::optional<std::vector<int>> subset = {}) {
  const auto ious = iou_per_class(conf);
  std::vector<int> ids;
  if (subset) {
    ids = *subset;
  } else {
    for (int k = 0; k < conf.classes(); ++k) ids.push_back(k);
  }
  double sum = 0.0;
  int n = 0;
  for (int k : ids) {
    require(k >= 0 && k < conf.classes(), "mean_iou: subset class out of range");
    if (ious[k]) {
      sum += *ious[k];
      ++n;
    }
  }
  if (n == 0) throw ContractError("mean_iou: no defined class in the evaluated set");
  return sum / n;
}

struct EvalReport {
  std::vector<std::string> class_names;
  std::vector<std::optional<double>> iou;
  double miou = 0.0;
  double miou_subset = 0.0;
  std::vector<int> subset;
};

inline EvalReport make_report(const ConfusionMatrix& conf, std::vector<std::string> names, std::vector<int> subset) {
  EvalReport r;
  r.class_names = std::move(names);
  r.iou = iou_per_class(conf);
  r.miou = mean_iou(conf);
  r.subset = std::move(subset);
  r.miou_subset = mean_iou(conf, r.subset);
  return r;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json per_class = nlohmann::json::object();
  for (std::size_t k = 0; k < r.iou.size(); ++k) {
    const std::string name = k < r.class_names.size() ? r.class_names[k] : std::to_string(k);
    per_class[name] = r.iou[k] ? nlohmann::json(*r.iou[k]) : nlohmann::json(nullptr);
  }
  return {{"per_class_iou", per_class}, {"miou", r.miou}, {"miou_subset", r.miou_subset}, {"subset", r.subset}};
}

/// One row of per-class IoU (percent) followed by mIoU* and mIoU.
inline void print_report_table(std::ostream& os, const EvalReport& r) {
  os << std::left;
  for (const auto& n : r.class_names) os << std::setw(9) << n.substr(0, 8);
  os << std::setw(9) << "mIoU*" << "mIoU\n" << std::fixed << std::setprecision(1);
  for (const auto& v : r.iou) {
    if (v)
      os << std::setw(9) << *v * 100.0;
    else
      os << std::setw(9) << "-";
  }
  os << std::setw(9) << r.miou_subset * 100.0 << r.miou * 100.0 << '\n';
}

}  // namespace corda
