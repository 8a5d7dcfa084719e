#pragma once

#include <map>
#include <string>
#include <vector>

#include "tamperseg/image.hpp"

namespace tamperseg {

// edited class = positive
struct ConfusionCounts {
  long long tp = 0, fp = 0, fn = 0, tn = 0;
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

ConfusionCounts confusion(const Mask& pred, const Mask& gt);

// empty-union classes count as IoU 1
double iou_edited(const ConfusionCounts& c);
double iou_authentic(const ConfusionCounts& c);
double miou(const ConfusionCounts& c);

// f1 = 0 when tp=0 with errors present; 1 when tp=fp=fn=0
double precision(const ConfusionCounts& c);
double recall(const ConfusionCounts& c);
double f1(const ConfusionCounts& c);

struct PerImageMetrics {
  std::string id;
  double iou_edited = 0, iou_authentic = 0, miou = 0;
  double precision = 0, recall = 0, f1 = 0;
};

struct MetricsReport {
  std::vector<PerImageMetrics> records;  // sorted by id
  double miou = 0, f1 = 0;
  double iou_edited = 0, iou_authentic = 0;
  double precision = 0, recall = 0;
  std::string reduction = "per-image";  // or "pooled"
};

// reduction "per-image": aggregate = arithmetic mean of per-image values;
// "pooled": confusions summed over the split before computing metrics
MetricsReport evaluate_split(const std::map<std::string, Mask>& predictions,
                             const std::map<std::string, Mask>& ground_truth,
                             const std::string& reduction = "per-image");

}  // namespace tamperseg
