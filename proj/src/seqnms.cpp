#include "featflow/seqnms.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "featflow/tensor.hpp"  // ParseError

namespace featflow {

void Detection::validate() const {
  const bool finite = std::isfinite(box.x1) && std::isfinite(box.y1) && std::isfinite(box.x2) &&
                      std::isfinite(box.y2) && std::isfinite(score);
  if (!finite || box.x1 >= box.x2 || box.y1 >= box.y2) {
    throw ParseError("detection: invalid box at frame " + std::to_string(frame));
  }
  if (score < 0.0 || score > 1.0) {
    throw ParseError("detection: score " + std::to_string(score) + " outside [0, 1]");
  }
}

void SeqNmsConfig::validate() const {
  if (link_iou <= 0.0 || link_iou >= 1.0 || nms_iou <= 0.0 || nms_iou >= 1.0) {
    throw ParseError("seqnms: thresholds must lie in (0, 1)");
  }
}

double iou(const Box& a, const Box& b) {
  const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  const double area_a = (a.x2 - a.x1) * (a.y2 - a.y1);
  const double area_b = (b.x2 - b.x1) * (b.y2 - b.y1);
  return inter / (area_a + area_b - inter);
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh) {
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return dets[a].score > dets[b].score; });
  std::vector<Detection> kept;
  for (int idx : order) {
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (iou(dets[idx].box, k.box) >= iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(dets[idx]);
  }
  return kept;
}

namespace {

// DP cell: best chain ending at one box. Paths store per-frame box indices
// from the chain's start; at the instance sizes this library targets the
// copies are immaterial and make the tie-break rules direct to apply.
struct Cell {
  double sum = 0.0;
  int start = 0;
  std::vector<int> path;
};

bool key_less(const Cell& a, const Cell& b) {
  if (a.start != b.start) return a.start < b.start;
  return a.path < b.path;
}

// true when candidate should replace incumbent
bool better(const Cell& cand, const Cell& inc) {
  if (cand.sum != inc.sum) return cand.sum > inc.sum;
  return key_less(cand, inc);
}

}  // namespace

std::optional<BoxSequence> best_sequence(
    const std::vector<std::pair<int, std::vector<Detection>>>& per_frame, double link_iou) {
  const int T = static_cast<int>(per_frame.size());
  std::vector<std::vector<Cell>> dp(T);
  const Cell* best = nullptr;
  int best_t = -1;

  for (int t = 0; t < T; ++t) {
    const auto& [frame, boxes] = per_frame[t];
    dp[t].resize(boxes.size());
    const bool has_prev = t > 0 && per_frame[t - 1].first == frame - 1;
    for (int b = 0; b < static_cast<int>(boxes.size()); ++b) {
      Cell cell{boxes[b].score, frame, {b}};
      if (has_prev) {
        for (int pb = 0; pb < static_cast<int>(dp[t - 1].size()); ++pb) {
          if (iou(per_frame[t - 1].second[pb].box, boxes[b].box) < link_iou) continue;
          Cell cand = dp[t - 1][pb];
          cand.sum += boxes[b].score;
          cand.path.push_back(b);
          if (better(cand, cell)) cell = std::move(cand);
        }
      }
      dp[t][b] = std::move(cell);
      if (best == nullptr || better(dp[t][b], *best)) {
        best = &dp[t][b];
        best_t = t;
      }
    }
  }
  if (best == nullptr) return std::nullopt;

  BoxSequence seq;
  seq.start_frame = best->start;
  seq.score_sum = best->sum;
  seq.member_box_indices = best->path;
  const int len = static_cast<int>(best->path.size());
  for (int k = 0; k < len; ++k) {
    const int t = best_t - (len - 1 - k);
    seq.members.push_back(per_frame[t].second[best->path[k]]);
  }
  return seq;
}

double rescore(const BoxSequence& seq, const SeqNmsConfig& cfg) {
  if (seq.members.empty()) throw ParseError("rescore: empty sequence");
  double sum = 0.0, mx = seq.members[0].score;
  for (const Detection& d : seq.members) {
    sum += d.score;
    mx = std::max(mx, d.score);
  }
  const double mean = sum / static_cast<double>(seq.members.size());
  if (cfg.variant == SeqNmsConfig::Variant::plus) return 0.5 * mean + 0.5 * mx;
  return cfg.rescore_op == SeqNmsConfig::RescoreOp::mean ? mean : mx;
}

std::vector<SequencedDetection> seqnms(const std::vector<Detection>& all_dets,
                                       const SeqNmsConfig& cfg) {
  cfg.validate();
  for (const Detection& d : all_dets) d.validate();

  // classes in ascending order; within a class, frames in ascending order
  std::map<int, std::map<int, std::vector<Detection>>> by_class;
  for (const Detection& d : all_dets) by_class[d.class_id][d.frame].push_back(d);

  std::vector<SequencedDetection> out;
  int next_seq_id = 0;
  for (auto& [class_id, frame_map] : by_class) {
    std::vector<std::pair<int, std::vector<Detection>>> pool(frame_map.begin(), frame_map.end());
    if (cfg.variant == SeqNmsConfig::Variant::plus) {
      for (auto& [frame, boxes] : pool) boxes = nms(boxes, cfg.nms_iou);
    }

    while (true) {
      auto seq = best_sequence(pool, cfg.link_iou);
      if (!seq) break;
      const double new_score = rescore(*seq, cfg);
      for (size_t k = 0; k < seq->members.size(); ++k) {
        SequencedDetection sd;
        sd.det = seq->members[k];
        sd.det.score = new_score;
        sd.sequence_id = next_seq_id;
        out.push_back(sd);
      }
      ++next_seq_id;

      // drop the selected members from the pool, by index
      for (size_t k = 0; k < seq->members.size(); ++k) {
        const int frame = seq->start_frame + static_cast<int>(k);
        for (auto& [pf, boxes] : pool) {
          if (pf != frame) continue;
          boxes.erase(boxes.begin() + seq->member_box_indices[k]);
          break;
        }
      }

      // original ordering: suppression against the selected members runs now
      if (cfg.variant == SeqNmsConfig::Variant::original) {
        for (size_t k = 0; k < seq->members.size(); ++k) {
          const int frame = seq->start_frame + static_cast<int>(k);
          for (auto& [pf, boxes] : pool) {
            if (pf != frame) continue;
            std::erase_if(boxes, [&](const Detection& d) {
              return iou(d.box, seq->members[k].box) >= cfg.nms_iou;
            });
          }
        }
      }
    }
  }
  return out;
}

std::vector<Detection> load_detections_json(std::istream& is) {
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("detections JSON: ") + e.what());
  }
  if (!j.is_array()) throw ParseError("detections JSON: top level must be an array");
  std::vector<Detection> dets;
  for (const auto& item : j) {
    try {
      Detection d;
      d.frame = item.at("frame").get<int>();
      d.class_id = item.at("class").get<int>();
      d.score = item.at("score").get<double>();
      const auto& box = item.at("box");
      if (!box.is_array() || box.size() != 4) {
        throw ParseError("detections JSON: box must be [x1, y1, x2, y2]");
      }
      d.box = {box[0].get<double>(), box[1].get<double>(), box[2].get<double>(),
               box[3].get<double>()};
      d.validate();
      dets.push_back(d);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("detections JSON: ") + e.what());
    }
  }
  return dets;
}

void save_detections_json(std::ostream& os, const std::vector<SequencedDetection>& dets) {
  nlohmann::json arr = nlohmann::json::array();
  for (const SequencedDetection& sd : dets) {
    arr.push_back({{"frame", sd.det.frame},
                   {"class", sd.det.class_id},
                   {"score", sd.det.score},
                   {"box", {sd.det.box.x1, sd.det.box.y1, sd.det.box.x2, sd.det.box.y2}},
                   {"sequence_id", sd.sequence_id}});
  }
  os << arr.dump(1) << '\n';
}

}  // namespace featflow
