#include "tamperseg/metrics.hpp"

#include <algorithm>
#include <stdexcept>

#include "tamperseg/common.hpp"

namespace tamperseg {

ConfusionCounts confusion(const Mask& pred, const Mask& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw std::invalid_argument("confusion: mask shapes differ");
  ConfusionCounts c;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    bool p = pred.data[i] != 0, g = gt.data[i] != 0;
    if (p && g)
      ++c.tp;
    else if (p && !g)
      ++c.fp;
    else if (!p && g)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

double iou_edited(const ConfusionCounts& c) {
  long long u = c.tp + c.fp + c.fn;
  return u == 0 ? 1.0 : double(c.tp) / double(u);
}

double iou_authentic(const ConfusionCounts& c) {
  long long u = c.tn + c.fn + c.fp;
  return u == 0 ? 1.0 : double(c.tn) / double(u);
}

double miou(const ConfusionCounts& c) {
  return 0.5 * (iou_edited(c) + iou_authentic(c));
}

double precision(const ConfusionCounts& c) {
  long long d = c.tp + c.fp;
  return d == 0 ? (c.fn == 0 ? 1.0 : 0.0) : double(c.tp) / double(d);
}

double recall(const ConfusionCounts& c) {
  long long d = c.tp + c.fn;
  return d == 0 ? (c.fp == 0 ? 1.0 : 0.0) : double(c.tp) / double(d);
}

double f1(const ConfusionCounts& c) {
  if (c.tp == 0) return (c.fp + c.fn) == 0 ? 1.0 : 0.0;
  double p = double(c.tp) / double(c.tp + c.fp);
  double r = double(c.tp) / double(c.tp + c.fn);
  return 2.0 * p * r / (p + r);
}

MetricsReport evaluate_split(const std::map<std::string, Mask>& predictions,
                             const std::map<std::string, Mask>& ground_truth,
                             const std::string& reduction) {
  if (reduction != "per-image" && reduction != "pooled")
    throw std::invalid_argument("evaluate_split: unknown reduction " + reduction);
  for (const auto& [id, m] : ground_truth)
    if (!predictions.count(id))
      throw missing_sample_error("evaluate_split: no prediction for " + id);
  for (const auto& [id, m] : predictions)
    if (!ground_truth.count(id))
      throw missing_sample_error("evaluate_split: no ground truth for " + id);

  MetricsReport rep;
  rep.reduction = reduction;
  ConfusionCounts pooled;
  for (const auto& [id, gt] : ground_truth) {  // std::map: iterates sorted by id
    ConfusionCounts c = confusion(predictions.at(id), gt);
    pooled += c;
    PerImageMetrics r;
    r.id = id;
    r.iou_edited = iou_edited(c);
    r.iou_authentic = iou_authentic(c);
    r.miou = miou(c);
    r.precision = precision(c);
    r.recall = recall(c);
    r.f1 = f1(c);
    rep.records.push_back(r);
  }

  if (reduction == "pooled") {
    rep.iou_edited = iou_edited(pooled);
    rep.iou_authentic = iou_authentic(pooled);
    rep.miou = miou(pooled);
    rep.precision = precision(pooled);
    rep.recall = recall(pooled);
    rep.f1 = f1(pooled);
  } else {
    const double n = double(rep.records.size());
    for (const auto& r : rep.records) {
      rep.iou_edited += r.iou_edited / n;
      rep.iou_authentic += r.iou_authentic / n;
      rep.miou += r.miou / n;
      rep.precision += r.precision / n;
      rep.recall += r.recall / n;
      rep.f1 += r.f1 / n;
    }
  }
  return rep;
}

}  // namespace tamperseg
