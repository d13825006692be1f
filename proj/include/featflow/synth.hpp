#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "featflow/seqnms.hpp"
#include "featflow/tensor.hpp"

namespace featflow {

// Synthetic video feature sequences with known ground-truth displacement.
// Frames sample a smooth analytic pattern that moves under the configured
// motion; gt_flows[t] maps frame t+1 positions to their source in frame t,
// so bilinear_warp(frames[t], gt_flows[t]) reproduces frames[t+1] up to
// noise, interpolation and border effects.
struct SynthSpec {
  int channels = 8;
  int height = 16;
  int width = 16;
  int num_frames = 8;

  enum class Pattern { gaussian_blobs, sinusoid, random_smooth };
  enum class Motion { constant_shift, rotation, random_walk };
  Pattern pattern = Pattern::gaussian_blobs;
  Motion motion = Motion::constant_shift;

  double shift_dx = 1.0;  // constant_shift: pattern translation per frame
  double shift_dy = 0.0;
  double angle_per_frame = 0.02;  // rotation: radians about the grid center
  double walk_sigma = 0.5;        // random_walk: per-frame blob step stddev
  int num_blobs = 3;
  double noise_sigma = 0.0;
  uint64_t seed = 0;

  void validate() const;
};

SynthSpec::Pattern parse_pattern(const std::string& s);
SynthSpec::Motion parse_motion(const std::string& s);

// Flat key=value config file; '#' starts a comment line. Keys match the
// field names above (pattern/motion take the spelled-out names
// gaussian-blobs, sinusoid, random-smooth, constant-shift, rotation,
// random-walk).
SynthSpec parse_synth_spec(std::istream& is);
SynthSpec parse_synth_spec_file(const std::string& path);

struct SynthResult {
  std::vector<Tensor> frames;     // num_frames entries
  std::vector<FlowMap> gt_flows;  // num_frames - 1 entries
};

SynthResult generate_synthetic(const SynthSpec& spec);

// Mean L2 distance between flow vectors over positions at least `border`
// cells away from every edge.
double endpoint_error(const FlowMap& pred, const FlowMap& gt, int border = 1);

// Mean squared element-wise difference over the same interior.
double interior_mse(const Tensor& a, const Tensor& b, int border);

// ---- motion categories ----

struct TrackAnnotation {
  int object_id = 0;
  std::map<int, Box> boxes;  // frame -> ground-truth box
};

enum class MotionCategory { slow, middle, fast };

// Average IoU between the box at frame t and the boxes at the existing
// frames in [t-radius, t+radius] (excluding t): > 0.9 slow, in [0.7, 0.9]
// middle, < 0.7 fast. nullopt when no other frame exists in the window.
std::optional<MotionCategory> motion_category(const TrackAnnotation& track, int t,
                                              int radius = 10);

}  // namespace featflow
