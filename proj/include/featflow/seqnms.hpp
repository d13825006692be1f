#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace featflow {

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

// One scored, class-labeled axis-aligned box at a frame.
struct Detection {
  int frame = 0;
  int class_id = 0;
  double score = 0.0;
  Box box;

  void validate() const;  // finite coords, x1<x2, y1<y2, score in [0,1]
};

// Temporally ordered chain of linked detections over strictly consecutive
// frames, all of one class. member_box_indices[k] is the index of member k
// within the per-frame candidate list it was selected from.
struct BoxSequence {
  int start_frame = 0;
  std::vector<Detection> members;
  std::vector<int> member_box_indices;
  double score_sum = 0.0;
};

struct SeqNmsConfig {
  enum class Variant { original, plus };
  enum class RescoreOp { mean, max };

  double link_iou = 0.5;
  double nms_iou = 0.3;
  Variant variant = Variant::plus;
  RescoreOp rescore_op = RescoreOp::mean;  // original variant only

  void validate() const;
};

double iou(const Box& a, const Box& b);

// Greedy descending-score suppression for one frame+class. Kept boxes have
// pairwise IoU < iou_thresh; score ties keep the earlier list entry.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh);

// Maximum score-sum chain over consecutive frames with pairwise-consecutive
// IoU >= link_iou, via dynamic programming. per_frame holds (frame index,
// boxes) pairs sorted by frame. Ties prefer the earlier start frame, then
// the lexicographically smaller per-frame box-index path. Returns nullopt
// when every list is empty.
std::optional<BoxSequence> best_sequence(
    const std::vector<std::pair<int, std::vector<Detection>>>& per_frame, double link_iou);

// plus variant: 0.5*mean + 0.5*max of the member scores; original variant:
// mean or max per cfg.rescore_op.
double rescore(const BoxSequence& seq, const SeqNmsConfig& cfg);

struct SequencedDetection {
  Detection det;
  int sequence_id = 0;
};

// Full pipeline, per class: the plus variant runs per-frame NMS first, then
// repeatedly selects the best sequence, rescores it and removes its members;
// the original variant selects first and applies NMS per frame against each
// selected sequence's members as the final suppression step. Output is
// ordered by (sequence_id, frame); boxes are passed through unchanged, only
// scores are replaced.
std::vector<SequencedDetection> seqnms(const std::vector<Detection>& all_dets,
                                       const SeqNmsConfig& cfg);

// Detections JSON: array of {"frame": int, "class": int, "score": float,
// "box": [x1, y1, x2, y2]}; written detections additionally carry
// "sequence_id".
std::vector<Detection> load_detections_json(std::istream& is);
void save_detections_json(std::ostream& os, const std::vector<SequencedDetection>& dets);

}  // namespace featflow
