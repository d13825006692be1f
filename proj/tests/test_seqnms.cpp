#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "featflow/seqnms.hpp"
#include "support.hpp"

using namespace featflow;
namespace oracle = testsupport::oracle;

namespace {

Detection det(int frame, int cls, double score, Box box) {
  Detection d;
  d.frame = frame;
  d.class_id = cls;
  d.score = score;
  d.box = box;
  return d;
}

bool same_output(const std::vector<SequencedDetection>& a,
                 const std::vector<SequencedDetection>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].det.frame != b[i].det.frame || a[i].det.class_id != b[i].det.class_id) return false;
    if (a[i].det.box.x1 != b[i].det.box.x1 || a[i].det.box.y1 != b[i].det.box.y1 ||
        a[i].det.box.x2 != b[i].det.box.x2 || a[i].det.box.y2 != b[i].det.box.y2) {
      return false;
    }
    if (std::fabs(a[i].det.score - b[i].det.score) > 1e-12) return false;
    if (a[i].sequence_id != b[i].sequence_id) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("iou basics") {
  const Box a{0, 0, 1, 1};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, Box{2, 2, 3, 3}) == 0.0);
  // unit squares overlapping by half: 0.5 / (1 + 1 - 0.5) = 1/3
  CHECK(iou(a, Box{0.5, 0, 1.5, 1}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("nms keeps a lone box and drops the lower duplicate") {
  const Box b{0, 0, 2, 2};
  const auto solo = nms({det(0, 0, 0.4, b)}, 0.3);
  REQUIRE(solo.size() == 1);
  CHECK(solo[0].score == 0.4);

  const auto two = nms({det(0, 0, 0.9, b), det(0, 0, 0.8, b)}, 0.3);
  REQUIRE(two.size() == 1);
  CHECK(two[0].score == 0.9);
}

TEST_CASE("nms breaks score ties by the earlier list entry") {
  const Box b1{0, 0, 2, 2};
  const Box b2{0.1, 0, 2.1, 2};  // heavy overlap with b1
  const auto kept = nms({det(0, 0, 0.5, b1), det(0, 0, 0.5, b2)}, 0.3);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].box.x1 == 0.0);
}

TEST_CASE("nms agrees with an independent greedy implementation") {
  Rng rng(91);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Detection> dets;
    const int n = 1 + rng.index(6);
    for (int i = 0; i < n; ++i) {
      const double cx = rng.uniform(2, 6), cy = rng.uniform(2, 6);
      const double w = rng.uniform(1, 4), h = rng.uniform(1, 4);
      dets.push_back(det(0, 0, rng.uniform(0.05, 1.0),
                         Box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}));
    }
    const auto got = nms(dets, 0.3);
    const auto want = oracle::nms(dets, 0.3);
    REQUIRE(got.size() == want.size());
    for (size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].score == want[i].score);
      CHECK(got[i].box.x1 == want[i].box.x1);
    }
  }
}

TEST_CASE("best_sequence picks the higher singleton on one frame") {
  const Box b{0, 0, 2, 2};
  std::vector<std::pair<int, std::vector<Detection>>> pf{
      {0, {det(0, 0, 0.3, b), det(0, 0, 0.7, Box{5, 5, 7, 7})}}};
  const auto seq = best_sequence(pf, 0.5);
  REQUIRE(seq.has_value());
  CHECK(seq->members.size() == 1);
  CHECK(seq->members[0].score == 0.7);
  CHECK(seq->score_sum == 0.7);
}

TEST_CASE("best_sequence chains a stationary track across three frames") {
  const Box b{1, 1, 3, 3};
  std::vector<std::pair<int, std::vector<Detection>>> pf{
      {0, {det(0, 0, 0.5, b)}}, {1, {det(1, 0, 0.6, b)}}, {2, {det(2, 0, 0.7, b)}}};
  const auto seq = best_sequence(pf, 0.5);
  REQUIRE(seq.has_value());
  CHECK(seq->members.size() == 3);
  CHECK(seq->start_frame == 0);
  CHECK(seq->score_sum == doctest::Approx(1.8).epsilon(1e-15));
}

TEST_CASE("best_sequence on empty lists signals no result") {
  std::vector<std::pair<int, std::vector<Detection>>> pf{{0, {}}, {1, {}}};
  CHECK(!best_sequence(pf, 0.5).has_value());
  CHECK(!best_sequence({}, 0.5).has_value());
}

TEST_CASE("best_sequence does not chain across a frame gap") {
  const Box b{1, 1, 3, 3};
  std::vector<std::pair<int, std::vector<Detection>>> pf{
      {0, {det(0, 0, 0.5, b)}}, {2, {det(2, 0, 0.6, b)}}};
  const auto seq = best_sequence(pf, 0.5);
  REQUIRE(seq.has_value());
  CHECK(seq->members.size() == 1);
  CHECK(seq->members[0].score == 0.6);
}

TEST_CASE("best_sequence equals exhaustive enumeration on random instances") {
  Rng rng(92);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::pair<int, std::vector<Detection>>> pf;
    const int frames = 1 + rng.index(4);
    for (int f = 0; f < frames; ++f) {
      std::vector<Detection> boxes;
      const int n = rng.index(4);
      for (int b = 0; b < n; ++b) {
        const double cx = rng.uniform(2, 8), cy = rng.uniform(2, 8);
        const double w = rng.uniform(1, 5), h = rng.uniform(1, 5);
        boxes.push_back(det(f, 0, rng.uniform(0.05, 1.0),
                            Box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}));
      }
      pf.emplace_back(f, boxes);
    }
    const auto got = best_sequence(pf, 0.5);
    const auto want = oracle::best_chain(pf, 0.5);
    REQUIRE(got.has_value() == want.has_value());
    if (!got) continue;
    CHECK(got->score_sum == want->score_sum);
    CHECK(got->start_frame == want->start_frame);
    CHECK(got->member_box_indices == want->member_box_indices);
  }
}

TEST_CASE("rescore formulas") {
  BoxSequence seq;
  seq.members = {det(0, 0, 0.4, {0, 0, 1, 1}), det(1, 0, 0.8, {0, 0, 1, 1})};
  SeqNmsConfig plus;
  plus.variant = SeqNmsConfig::Variant::plus;
  CHECK(rescore(seq, plus) == doctest::Approx(0.7).epsilon(1e-15));

  BoxSequence eq;
  eq.members = {det(0, 0, 0.55, {0, 0, 1, 1}), det(1, 0, 0.55, {0, 0, 1, 1})};
  SeqNmsConfig orig_mean, orig_max;
  orig_mean.variant = orig_max.variant = SeqNmsConfig::Variant::original;
  orig_mean.rescore_op = SeqNmsConfig::RescoreOp::mean;
  orig_max.rescore_op = SeqNmsConfig::RescoreOp::max;
  CHECK(rescore(eq, plus) == doctest::Approx(0.55).epsilon(1e-15));
  CHECK(rescore(eq, orig_mean) == doctest::Approx(0.55).epsilon(1e-15));
  CHECK(rescore(eq, orig_max) == doctest::Approx(0.55).epsilon(1e-15));

  BoxSequence three;
  three.members = {det(0, 0, 0.2, {0, 0, 1, 1}), det(1, 0, 0.2, {0, 0, 1, 1}),
                   det(2, 0, 0.8, {0, 0, 1, 1})};
  CHECK(rescore(three, plus) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(rescore(three, orig_mean) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(rescore(three, orig_max) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("empty input yields empty output") {
  CHECK(seqnms({}, SeqNmsConfig{}).empty());
}

TEST_CASE("a single detection keeps its score") {
  const auto out = seqnms({det(3, 1, 0.42, {0, 0, 2, 2})}, SeqNmsConfig{});
  REQUIRE(out.size() == 1);
  CHECK(out[0].det.score == 0.42);
  CHECK(out[0].det.frame == 3);
  CHECK(out[0].sequence_id == 0);
}

TEST_CASE("three-frame toy: track rescored, spurious box untouched") {
  const Box track{1, 1, 3, 3};
  const Box spur{8, 8, 10, 10};
  const std::vector<Detection> dets{det(0, 0, 0.5, track), det(1, 0, 0.9, track),
                                    det(2, 0, 0.5, track), det(1, 0, 0.6, spur)};
  const auto out = seqnms(dets, SeqNmsConfig{});
  REQUIRE(out.size() == 4);
  // sequence 0 is the track (sum 1.9 beats 0.6)
  const double expected = 0.5 * (1.9 / 3.0) + 0.5 * 0.9;
  int track_members = 0, spur_members = 0;
  for (const auto& sd : out) {
    if (sd.sequence_id == 0) {
      CHECK(sd.det.score == doctest::Approx(expected).epsilon(1e-12));
      ++track_members;
    } else {
      CHECK(sd.det.score == 0.6);
      ++spur_members;
    }
  }
  CHECK(track_members == 3);
  CHECK(spur_members == 1);
}

TEST_CASE("pipeline equals the brute-force oracle on 100 seeded instances") {
  for (uint64_t seed = 1; seed <= 100; ++seed) {
    Rng rng(seed);
    const auto dets = testsupport::random_detections(rng, 4, 4, 2);
    for (auto variant : {SeqNmsConfig::Variant::plus, SeqNmsConfig::Variant::original}) {
      SeqNmsConfig cfg;
      cfg.variant = variant;
      const auto got = seqnms(dets, cfg);
      const auto want = oracle::seqnms(dets, cfg);
      CHECK(same_output(got, want));
    }
  }
}

TEST_CASE("rescored values respect raw-score bounds and operator ordering") {
  Rng rng(93);
  for (int trial = 0; trial < 40; ++trial) {
    BoxSequence seq;
    const int n = 1 + rng.index(5);
    double lo = 1.0, hi = 0.0;
    for (int k = 0; k < n; ++k) {
      const double s = rng.uniform(0.05, 1.0);
      lo = std::min(lo, s);
      hi = std::max(hi, s);
      seq.members.push_back(det(k, 0, s, {0, 0, 1, 1}));
    }
    SeqNmsConfig plus;
    SeqNmsConfig m, x;
    m.variant = x.variant = SeqNmsConfig::Variant::original;
    m.rescore_op = SeqNmsConfig::RescoreOp::mean;
    x.rescore_op = SeqNmsConfig::RescoreOp::max;
    const double rp = rescore(seq, plus), rm = rescore(seq, m), rx = rescore(seq, x);
    CHECK(rp >= lo - 1e-15);
    CHECK(rp <= hi + 1e-15);
    CHECK(rm <= rp + 1e-15);
    CHECK(rp <= rx + 1e-15);
  }
}

TEST_CASE("classes never interact") {
  Rng rng(94);
  const auto dets = testsupport::random_detections(rng, 4, 3, 2);
  std::vector<Detection> remapped = dets;
  for (auto& d : remapped) d.class_id = d.class_id == 0 ? 7 : 1;  // swap processing order

  const SeqNmsConfig cfg;
  const auto base = seqnms(dets, cfg);
  const auto swapped = seqnms(remapped, cfg);
  REQUIRE(base.size() == swapped.size());

  // per original class, the (frame, box, score) multisets must agree
  auto key = [](const SequencedDetection& sd) {
    std::ostringstream os;
    os << sd.det.frame << ',' << sd.det.box.x1 << ',' << sd.det.box.y1 << ',' << sd.det.box.x2
       << ',' << sd.det.box.y2 << ',' << sd.det.score;
    return os.str();
  };
  std::multiset<std::string> base0, base1, swap0, swap1;
  for (const auto& sd : base) (sd.det.class_id == 0 ? base0 : base1).insert(key(sd));
  for (const auto& sd : swapped) (sd.det.class_id == 7 ? swap0 : swap1).insert(key(sd));
  CHECK(base0 == swap0);
  CHECK(base1 == swap1);
}

TEST_CASE("boxes are conserved; only scores change") {
  Rng rng(95);
  const auto dets = testsupport::random_detections(rng, 4, 4, 2);
  for (auto variant : {SeqNmsConfig::Variant::plus, SeqNmsConfig::Variant::original}) {
    SeqNmsConfig cfg;
    cfg.variant = variant;
    const auto out = seqnms(dets, cfg);
    CHECK(out.size() <= dets.size());
    for (const auto& sd : out) {
      bool found = false;
      for (const auto& d : dets) {
        if (d.frame == sd.det.frame && d.class_id == sd.det.class_id &&
            d.box.x1 == sd.det.box.x1 && d.box.y1 == sd.det.box.y1 &&
            d.box.x2 == sd.det.box.x2 && d.box.y2 == sd.det.box.y2) {
          found = true;
          break;
        }
      }
      CHECK(found);
    }
  }
}

TEST_CASE("the two variants run on the same input without any equality claim") {
  Rng rng(96);
  const auto dets = testsupport::random_detections(rng, 4, 4, 2);
  SeqNmsConfig plus, orig;
  orig.variant = SeqNmsConfig::Variant::original;
  const auto a = seqnms(dets, plus);
  const auto b = seqnms(dets, orig);
  CHECK(a.size() <= dets.size());
  CHECK(b.size() <= dets.size());
}

TEST_CASE("detections JSON round trip and validation") {
  const std::string json = R"([
    {"frame": 0, "class": 1, "score": 0.5, "box": [1.0, 2.0, 3.0, 4.0]},
    {"frame": 1, "class": 0, "score": 0.25, "box": [0.0, 0.0, 2.5, 2.5]}
  ])";
  std::istringstream is(json);
  const auto dets = load_detections_json(is);
  REQUIRE(dets.size() == 2);
  CHECK(dets[0].frame == 0);
  CHECK(dets[0].class_id == 1);
  CHECK(dets[0].box.x2 == 3.0);

  std::vector<SequencedDetection> out;
  for (const auto& d : dets) out.push_back({d, 0});
  std::ostringstream os;
  save_detections_json(os, out);
  std::istringstream is2(os.str());
  const auto back = load_detections_json(is2);
  REQUIRE(back.size() == 2);
  CHECK(back[0].score == dets[0].score);
  CHECK(back[1].box.x2 == dets[1].box.x2);

  std::istringstream bad1("{\"frame\": 0}");
  CHECK_THROWS_AS(load_detections_json(bad1), ParseError);
  std::istringstream bad2(R"([{"frame": 0, "class": 0, "score": 1.5, "box": [0,0,1,1]}])");
  CHECK_THROWS_AS(load_detections_json(bad2), ParseError);
  std::istringstream bad3(R"([{"frame": 0, "class": 0, "score": 0.5, "box": [2,0,1,1]}])");
  CHECK_THROWS_AS(load_detections_json(bad3), ParseError);
}

TEST_CASE("pipeline is deterministic across repeated runs") {
  Rng rng(97);
  const auto dets = testsupport::random_detections(rng, 4, 4, 2);
  const SeqNmsConfig cfg;
  CHECK(same_output(seqnms(dets, cfg), seqnms(dets, cfg)));
}
