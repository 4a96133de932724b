#pragma once

// Digital (IoU, AP at IoU 0.5) and physical-protocol (frame ASR) metrics, plus
// Likert score aggregation.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "pgecap/detector.hpp"

namespace pgecap {

inline double iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument("iou of a degenerate box");
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

/// Person boxes per image.
using GroundTruth = std::vector<std::vector<Box>>;

/// Person-class average precision at IoU >= 0.5 with all-points interpolation.
///
/// Predictions are ranked by score (ties keep image order, then detection
/// order). Each prediction claims the unmatched ground-truth box of highest IoU
/// in its image; it is a true positive when that IoU reaches the threshold.
inline double map50(std::span<const DetectionSet> predictions, const GroundTruth& gt,
                    int person_class = kPersonClass, double iou_threshold = 0.5) {
  if (predictions.size() != gt.size()) {
    throw std::invalid_argument("predictions and ground truth cover different image counts");
  }
  std::size_t total_gt = 0;
  for (const auto& g : gt) total_gt += g.size();
  if (total_gt == 0) throw DataError("AP undefined: no ground-truth boxes");

  struct Ranked {
    double score;
    std::size_t image;
    const Box* box;
  };
  std::vector<Ranked> ranked;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    for (const auto& d : predictions[i]) {
      if (d.label == person_class) ranked.push_back({d.score, i, &d.box});
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

  std::vector<std::vector<bool>> matched(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) matched[i].assign(gt[i].size(), false);

  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    const auto& r = ranked[k];
    double best = -1.0;
    std::size_t best_j = 0;
    for (std::size_t j = 0; j < gt[r.image].size(); ++j) {
      if (matched[r.image][j]) continue;
      const double o = iou(*r.box, gt[r.image][j]);
      if (o > best) {
        best = o;
        best_j = j;
      }
    }
    if (best >= iou_threshold) {
      matched[r.image][best_j] = true;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
  }

  // Precision envelope, then area under the step function over recall.
  for (std::size_t k = precision.size(); k-- > 1;) {
    precision[k - 1] = std::max(precision[k - 1], precision[k]);
  }
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t k = 0; k < recall.size(); ++k) {
    ap += (recall[k] - prev_recall) * precision[k];
    prev_recall = recall[k];
  }
  return ap;
}

/// Per-frame outcome of the physical protocol.
struct FrameOutcome {
  bool evaded = false;
};

using FrameSequence = std::vector<FrameOutcome>;

/// A frame is evaded when no person detection scoring >= score_threshold
/// overlaps the subject with IoU >= iou_threshold.
inline bool frame_evaded(const DetectionSet& detections, const Box& subject,
                         int person_class = kPersonClass, double score_threshold = 0.5,
                         double iou_threshold = 0.5) {
  for (const auto& d : detections) {
    if (d.label == person_class && d.score >= score_threshold && iou(d.box, subject) >= iou_threshold) {
      return false;
    }
  }
  return true;
}

/// Attack success rate in percent.
inline double asr(const FrameSequence& frames) {
  if (frames.empty()) throw std::invalid_argument("ASR of an empty frame sequence");
  const auto evaded = std::count_if(frames.begin(), frames.end(), [](const FrameOutcome& f) { return f.evaded; });
  return 100.0 * static_cast<double>(evaded) / static_cast<double>(frames.size());
}

inline double mean_asr(std::span<const double> per_posture) {
  if (per_posture.empty()) throw std::invalid_argument("mean ASR of an empty list");
  return std::accumulate(per_posture.begin(), per_posture.end(), 0.0) /
         static_cast<double>(per_posture.size());
}

struct LikertSummary {
  double mean = 0.0;
  double stddev = 0.0;  // sample (n - 1) standard deviation
};

inline LikertSummary likert_summary(std::span<const int> scores) {
  if (scores.size() < 2) throw std::invalid_argument("Likert summary needs at least two scores");
  for (int s : scores) {
    if (s < 1 || s > 7) throw std::invalid_argument("Likert score outside 1..7: " + std::to_string(s));
  }
  const double n = static_cast<double>(scores.size());
  const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / n;
  double ss = 0.0;
  for (int s : scores) ss += (s - mean) * (s - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

}  // namespace pgecap
