#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <vector>

#include "featflow/rng.hpp"
#include "featflow/seqnms.hpp"
#include "featflow/tensor.hpp"

namespace testsupport {

inline featflow::Tensor random_tensor(featflow::Rng& rng, int c, int h, int w, double lo = -1.0,
                                      double hi = 1.0) {
  featflow::Tensor t(c, h, w);
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// ---- brute-force Seq-NMS oracle -------------------------------------------
// Independent re-derivation of the pipeline from the operation definitions:
// chains found by exhaustive enumeration instead of dynamic programming, NMS
// and IoU re-written from scratch. Used to cross-check the library on small
// instances.

namespace oracle {

inline double iou(const featflow::Box& a, const featflow::Box& b) {
  const double w = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double h = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = w * h;
  if (inter <= 0.0) return 0.0;
  const double uni =
      (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return inter / uni;
}

inline std::vector<featflow::Detection> nms(const std::vector<featflow::Detection>& dets,
                                            double thresh) {
  std::vector<size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return dets[a].score > dets[b].score; });
  std::vector<featflow::Detection> kept;
  for (size_t idx : order) {
    bool ok = true;
    for (const auto& k : kept) {
      if (oracle::iou(dets[idx].box, k.box) >= thresh) {
        ok = false;
        break;
      }
    }
    if (ok) kept.push_back(dets[idx]);
  }
  return kept;
}

struct Chain {
  double sum = 0.0;
  int start_frame = 0;
  int start_t = 0;              // position in the per_frame vector
  std::vector<int> path;        // box index per covered frame
};

inline bool chain_better(const Chain& a, const Chain& b) {
  if (a.sum != b.sum) return a.sum > b.sum;
  if (a.start_frame != b.start_frame) return a.start_frame < b.start_frame;
  return a.path < b.path;
}

// Enumerates every chain (all starts, lengths and member combinations) and
// keeps the best under (sum desc, start asc, path lex asc).
inline std::optional<featflow::BoxSequence> best_chain(
    const std::vector<std::pair<int, std::vector<featflow::Detection>>>& per_frame,
    double link_iou) {
  std::optional<Chain> best;

  const int T = static_cast<int>(per_frame.size());
  // depth-first extension; every prefix is a candidate
  std::vector<int> path;
  auto consider = [&](const Chain& c) {
    if (!best || chain_better(c, *best)) best = c;
  };
  std::function<void(int, double, int)> extend = [&](int t, double sum, int start_t) {
    Chain c{sum, per_frame[start_t].first, start_t, path};
    consider(c);
    const int next = t + 1;
    if (next >= T || per_frame[next].first != per_frame[t].first + 1) return;
    const auto& cur_box = per_frame[t].second[path.back()].box;
    for (int b = 0; b < static_cast<int>(per_frame[next].second.size()); ++b) {
      if (oracle::iou(cur_box, per_frame[next].second[b].box) < link_iou) continue;
      path.push_back(b);
      extend(next, sum + per_frame[next].second[b].score, start_t);
      path.pop_back();
    }
  };
  for (int t = 0; t < T; ++t) {
    for (int b = 0; b < static_cast<int>(per_frame[t].second.size()); ++b) {
      path = {b};
      extend(t, per_frame[t].second[b].score, t);
    }
  }
  if (!best) return std::nullopt;

  featflow::BoxSequence seq;
  seq.start_frame = best->start_frame;
  seq.score_sum = best->sum;
  seq.member_box_indices = best->path;
  for (size_t k = 0; k < best->path.size(); ++k) {
    seq.members.push_back(per_frame[best->start_t + k].second[best->path[k]]);
  }
  return seq;
}

inline std::vector<featflow::SequencedDetection> seqnms(
    const std::vector<featflow::Detection>& all, const featflow::SeqNmsConfig& cfg) {
  std::map<int, std::map<int, std::vector<featflow::Detection>>> by_class;
  for (const auto& d : all) by_class[d.class_id][d.frame].push_back(d);

  std::vector<featflow::SequencedDetection> out;
  int seq_id = 0;
  for (auto& [cls, frame_map] : by_class) {
    std::vector<std::pair<int, std::vector<featflow::Detection>>> pool(frame_map.begin(),
                                                                       frame_map.end());
    if (cfg.variant == featflow::SeqNmsConfig::Variant::plus) {
      for (auto& [f, boxes] : pool) boxes = oracle::nms(boxes, cfg.nms_iou);
    }
    while (true) {
      auto seq = best_chain(pool, cfg.link_iou);
      if (!seq) break;
      double sum = 0.0, mx = seq->members[0].score;
      for (const auto& m : seq->members) {
        sum += m.score;
        mx = std::max(mx, m.score);
      }
      const double mean = sum / static_cast<double>(seq->members.size());
      double score = 0.0;
      if (cfg.variant == featflow::SeqNmsConfig::Variant::plus) {
        score = 0.5 * mean + 0.5 * mx;
      } else {
        score = cfg.rescore_op == featflow::SeqNmsConfig::RescoreOp::mean ? mean : mx;
      }
      for (const auto& m : seq->members) {
        featflow::SequencedDetection sd;
        sd.det = m;
        sd.det.score = score;
        sd.sequence_id = seq_id;
        out.push_back(sd);
      }
      ++seq_id;
      for (size_t k = 0; k < seq->members.size(); ++k) {
        const int frame = seq->start_frame + static_cast<int>(k);
        for (auto& [pf, boxes] : pool) {
          if (pf == frame) {
            boxes.erase(boxes.begin() + seq->member_box_indices[k]);
            break;
          }
        }
      }
      if (cfg.variant == featflow::SeqNmsConfig::Variant::original) {
        for (size_t k = 0; k < seq->members.size(); ++k) {
          const int frame = seq->start_frame + static_cast<int>(k);
          for (auto& [pf, boxes] : pool) {
            if (pf != frame) continue;
            std::erase_if(boxes, [&](const featflow::Detection& d) {
              return oracle::iou(d.box, seq->members[k].box) >= cfg.nms_iou;
            });
          }
        }
      }
    }
  }
  return out;
}

}  // namespace oracle

// Random detection instances for oracle-equivalence runs.
inline std::vector<featflow::Detection> random_detections(featflow::Rng& rng, int max_frames,
                                                          int max_boxes, int max_classes) {
  std::vector<featflow::Detection> dets;
  const int frames = 1 + rng.index(max_frames);
  for (int f = 0; f < frames; ++f) {
    const int n = rng.index(max_boxes + 1);
    for (int b = 0; b < n; ++b) {
      featflow::Detection d;
      d.frame = f;
      d.class_id = rng.index(max_classes);
      d.score = rng.uniform(0.05, 1.0);
      const double cx = rng.uniform(2.0, 8.0), cy = rng.uniform(2.0, 8.0);
      const double w = rng.uniform(1.0, 4.0), h = rng.uniform(1.0, 4.0);
      d.box = {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
      dets.push_back(d);
    }
  }
  return dets;
}

}  // namespace testsupport
