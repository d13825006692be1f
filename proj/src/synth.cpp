#include "featflow/synth.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "featflow/rng.hpp"

namespace featflow {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

void SynthSpec::validate() const {
  if (channels < 1 || height < 2 || width < 2) {
    throw ShapeError("synth: degenerate dims " + std::to_string(channels) + "x" +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  if (num_frames < 1) throw ShapeError("synth: num_frames must be >= 1");
  if (noise_sigma < 0.0) throw ShapeError("synth: noise_sigma must be >= 0");
  if (num_blobs < 1) throw ShapeError("synth: num_blobs must be >= 1");
  if (motion == Motion::random_walk && pattern != Pattern::gaussian_blobs) {
    throw ShapeError("synth: random-walk motion requires the gaussian-blobs pattern");
  }
}

SynthSpec::Pattern parse_pattern(const std::string& s) {
  if (s == "gaussian-blobs") return SynthSpec::Pattern::gaussian_blobs;
  if (s == "sinusoid") return SynthSpec::Pattern::sinusoid;
  if (s == "random-smooth") return SynthSpec::Pattern::random_smooth;
  throw ParseError("synth: unknown pattern '" + s + "'");
}

SynthSpec::Motion parse_motion(const std::string& s) {
  if (s == "constant-shift") return SynthSpec::Motion::constant_shift;
  if (s == "rotation") return SynthSpec::Motion::rotation;
  if (s == "random-walk") return SynthSpec::Motion::random_walk;
  throw ParseError("synth: unknown motion '" + s + "'");
}

SynthSpec parse_synth_spec(std::istream& is) {
  SynthSpec spec;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    // trim
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("synth spec line " + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    try {
      if (key == "channels") spec.channels = std::stoi(val);
      else if (key == "height") spec.height = std::stoi(val);
      else if (key == "width") spec.width = std::stoi(val);
      else if (key == "num_frames") spec.num_frames = std::stoi(val);
      else if (key == "pattern") spec.pattern = parse_pattern(val);
      else if (key == "motion") spec.motion = parse_motion(val);
      else if (key == "shift_dx") spec.shift_dx = std::stod(val);
      else if (key == "shift_dy") spec.shift_dy = std::stod(val);
      else if (key == "angle_per_frame") spec.angle_per_frame = std::stod(val);
      else if (key == "walk_sigma") spec.walk_sigma = std::stod(val);
      else if (key == "num_blobs") spec.num_blobs = std::stoi(val);
      else if (key == "noise_sigma") spec.noise_sigma = std::stod(val);
      else if (key == "seed") spec.seed = std::stoull(val);
      else throw ParseError("synth spec: unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw ParseError("synth spec line " + std::to_string(lineno) + ": bad value '" + val + "'");
    }
  }
  spec.validate();
  return spec;
}

SynthSpec parse_synth_spec_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open: " + path);
  return parse_synth_spec(is);
}

namespace {

struct Blob {
  double cx, cy, sigma;
};

struct SinComponent {
  double fx, fy, phase, amp;
};

}  // namespace

SynthResult generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const int C = spec.channels, H = spec.height, W = spec.width, T = spec.num_frames;
  const double ctr_x = (W - 1) / 2.0, ctr_y = (H - 1) / 2.0;

  // Pattern constants. Wavelengths stay in [0.5, 1.0] grid-widths so the
  // pattern is smooth at the scale of a few cells.
  std::vector<Blob> blobs;
  std::vector<std::vector<double>> blob_amp(C);  // [channel][blob]
  std::vector<std::vector<SinComponent>> sines(C);
  if (spec.pattern == SynthSpec::Pattern::gaussian_blobs) {
    for (int b = 0; b < spec.num_blobs; ++b) {
      blobs.push_back({rng.uniform(0.15 * W, 0.85 * W), rng.uniform(0.15 * H, 0.85 * H),
                       rng.uniform(0.15, 0.3) * std::min(W, H)});
    }
    for (int c = 0; c < C; ++c) {
      for (int b = 0; b < spec.num_blobs; ++b) {
        const double mag = rng.uniform(0.5, 1.5);
        blob_amp[c].push_back(rng.uniform() < 0.5 ? -mag : mag);
      }
    }
  } else {
    const int comps = spec.pattern == SynthSpec::Pattern::sinusoid ? 2 : 4;
    for (int c = 0; c < C; ++c) {
      for (int k = 0; k < comps; ++k) {
        const double wavelength = rng.uniform(0.5, 1.0) * std::min(W, H);
        const double angle = rng.uniform(0.0, kTwoPi);
        sines[c].push_back({std::cos(angle) / wavelength, std::sin(angle) / wavelength,
                            rng.uniform(0.0, kTwoPi), rng.uniform(0.4, 1.0)});
      }
    }
  }

  // Blob centers per frame (shared across channels so the flow field is
  // well-defined).
  std::vector<std::vector<Blob>> centers(T, blobs);
  if (spec.motion == SynthSpec::Motion::random_walk) {
    for (int t = 1; t < T; ++t) {
      for (int b = 0; b < spec.num_blobs; ++b) {
        centers[t][b] = centers[t - 1][b];
        centers[t][b].cx += rng.normal(0.0, spec.walk_sigma);
        centers[t][b].cy += rng.normal(0.0, spec.walk_sigma);
      }
    }
  }

  auto pattern_at = [&](int c, double u, double v) -> double {
    double acc = 0.0;
    if (spec.pattern == SynthSpec::Pattern::gaussian_blobs) {
      for (int b = 0; b < spec.num_blobs; ++b) {
        const double dx = u - blobs[b].cx, dy = v - blobs[b].cy;
        acc += blob_amp[c][b] *
               std::exp(-(dx * dx + dy * dy) / (2.0 * blobs[b].sigma * blobs[b].sigma));
      }
    } else {
      for (const SinComponent& s : sines[c]) {
        acc += s.amp * std::sin(kTwoPi * (s.fx * u + s.fy * v) + s.phase);
      }
    }
    return acc;
  };

  // frame value at integer position via the motion's inverse coordinate map
  auto frame_value = [&](int t, int c, int x, int y) -> double {
    switch (spec.motion) {
      case SynthSpec::Motion::constant_shift:
        return pattern_at(c, x - t * spec.shift_dx, y - t * spec.shift_dy);
      case SynthSpec::Motion::rotation: {
        const double a = -t * spec.angle_per_frame;
        const double px = x - ctr_x, py = y - ctr_y;
        return pattern_at(c, ctr_x + std::cos(a) * px - std::sin(a) * py,
                          ctr_y + std::sin(a) * px + std::cos(a) * py);
      }
      case SynthSpec::Motion::random_walk: {
        double acc = 0.0;
        for (int b = 0; b < spec.num_blobs; ++b) {
          const double dx = x - centers[t][b].cx, dy = y - centers[t][b].cy;
          acc += blob_amp[c][b] * std::exp(-(dx * dx + dy * dy) /
                                           (2.0 * centers[t][b].sigma * centers[t][b].sigma));
        }
        return acc;
      }
    }
    return 0.0;
  };

  SynthResult out;
  for (int t = 0; t < T; ++t) {
    Tensor frame(C, H, W);
    for (int c = 0; c < C; ++c) {
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          frame.at(c, y, x) = frame_value(t, c, x, y);
        }
      }
    }
    if (spec.noise_sigma > 0.0) {
      for (double& v : frame.data) v += rng.normal(0.0, spec.noise_sigma);
    }
    out.frames.push_back(std::move(frame));
  }

  // gt_flows[t](p) points from a frame t+1 position to its source in frame t
  for (int t = 0; t + 1 < T; ++t) {
    FlowMap flow(2, H, W);
    switch (spec.motion) {
      case SynthSpec::Motion::constant_shift:
        for (int y = 0; y < H; ++y) {
          for (int x = 0; x < W; ++x) {
            flow.at(0, y, x) = -spec.shift_dx;
            flow.at(1, y, x) = -spec.shift_dy;
          }
        }
        break;
      case SynthSpec::Motion::rotation: {
        const double a = -spec.angle_per_frame;
        for (int y = 0; y < H; ++y) {
          for (int x = 0; x < W; ++x) {
            const double px = x - ctr_x, py = y - ctr_y;
            flow.at(0, y, x) = std::cos(a) * px - std::sin(a) * py - px;
            flow.at(1, y, x) = std::sin(a) * px + std::cos(a) * py - py;
          }
        }
        break;
      }
      case SynthSpec::Motion::random_walk:
        for (int y = 0; y < H; ++y) {
          for (int x = 0; x < W; ++x) {
            double wsum = 0.0, fx = 0.0, fy = 0.0;
            for (int b = 0; b < spec.num_blobs; ++b) {
              const Blob& nb = centers[t + 1][b];
              const double dx = x - nb.cx, dy = y - nb.cy;
              const double w = std::exp(-(dx * dx + dy * dy) / (2.0 * nb.sigma * nb.sigma));
              wsum += w;
              fx += w * (centers[t][b].cx - nb.cx);
              fy += w * (centers[t][b].cy - nb.cy);
            }
            if (wsum > 1e-12) {
              flow.at(0, y, x) = fx / wsum;
              flow.at(1, y, x) = fy / wsum;
            }
          }
        }
        break;
    }
    out.gt_flows.push_back(std::move(flow));
  }
  return out;
}

double endpoint_error(const FlowMap& pred, const FlowMap& gt, int border) {
  require_same_shape(pred, gt, "endpoint_error");
  if (pred.channels != 2) {
    throw ShapeError("endpoint_error: flow maps must have 2 channels, got " + pred.shape_str());
  }
  const int H = pred.height, W = pred.width;
  if (H - 2 * border <= 0 || W - 2 * border <= 0) {
    throw ShapeError("endpoint_error: border " + std::to_string(border) +
                     " leaves no interior in " + pred.shape_str());
  }
  double acc = 0.0;
  int n = 0;
  for (int y = border; y < H - border; ++y) {
    for (int x = border; x < W - border; ++x) {
      const double dx = pred.at(0, y, x) - gt.at(0, y, x);
      const double dy = pred.at(1, y, x) - gt.at(1, y, x);
      acc += std::sqrt(dx * dx + dy * dy);
      ++n;
    }
  }
  return acc / n;
}

double interior_mse(const Tensor& a, const Tensor& b, int border) {
  require_same_shape(a, b, "interior_mse");
  const int H = a.height, W = a.width;
  if (H - 2 * border <= 0 || W - 2 * border <= 0) {
    throw ShapeError("interior_mse: border leaves no interior");
  }
  double acc = 0.0;
  long long n = 0;
  for (int c = 0; c < a.channels; ++c) {
    for (int y = border; y < H - border; ++y) {
      for (int x = border; x < W - border; ++x) {
        const double d = a.at(c, y, x) - b.at(c, y, x);
        acc += d * d;
        ++n;
      }
    }
  }
  return acc / static_cast<double>(n);
}

std::optional<MotionCategory> motion_category(const TrackAnnotation& track, int t, int radius) {
  const auto it = track.boxes.find(t);
  if (it == track.boxes.end()) {
    throw ParseError("motion_category: track has no box at frame " + std::to_string(t));
  }
  double acc = 0.0;
  int n = 0;
  for (int f = t - radius; f <= t + radius; ++f) {
    if (f == t) continue;
    const auto jt = track.boxes.find(f);
    if (jt == track.boxes.end()) continue;
    acc += iou(it->second, jt->second);
    ++n;
  }
  if (n == 0) return std::nullopt;
  const double avg = acc / n;
  if (avg > 0.9) return MotionCategory::slow;
  if (avg >= 0.7) return MotionCategory::middle;
  return MotionCategory::fast;
}

}  // namespace featflow
