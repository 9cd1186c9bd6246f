#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tsim/geometry.hpp"
#include "tsim/scenario.hpp"

namespace tsim {

// H consecutive per-step relative poses: rel_poses[h] is the pose increment
// from step h to h+1, expressed in the frame of step h. The segment is
// normalized so the start pose is the identity.
struct MotionSegment {
  std::vector<Pose2> rel_poses;

  int horizon() const { return static_cast<int>(rel_poses.size()); }
  // Poses reached after each step, in the start frame (chained composition).
  std::vector<Pose2> cumulative_poses() const;
};

struct TokenVocab {
  std::vector<MotionSegment> tokens;  // tokens[0] is the zero-motion segment
  double radius = 0.05;               // K-disk separation epsilon, meters
  double distance_lambda = 1.0;       // heading weight, m/rad
  int horizon = 2;

  int size() const { return static_cast<int>(tokens.size()); }
};

struct TokenId {
  int index = 0;
};

// max over steps h of (|Δcumulative position_h| + lambda * |Δcumulative heading_h|).
double segment_distance(const MotionSegment& a, const MotionSegment& b, double lambda);

struct KdiskFit {
  TokenVocab vocab;
  double coverage = 0.0;  // fraction of inputs within radius of some token
};

// Greedy K-disk: zero token first, seeded shuffle, candidate admitted iff it
// is farther than radius from every existing token, capped at k_max.
KdiskFit fit_kdisk(const std::vector<MotionSegment>& segments, double radius,
                   int k_max, std::uint64_t seed);

// Bisects the radius so the natural (uncapped) vocabulary lands on k_target.
KdiskFit fit_kdisk_auto(const std::vector<MotionSegment>& segments, int k_target,
                        std::uint64_t seed);

// Nearest token by segment_distance; ties broken by lowest index.
TokenId encode_segment(const MotionSegment& seg, const TokenVocab& vocab);

struct TokenMotion {
  Pose2 pose;
  double speed = 0.0;  // |final displacement| / (H * dt)
};

// Chains the token's relative poses onto `pose`.
TokenMotion apply_token(const Pose2& pose, double speed, const MotionSegment& token,
                        double dt = kSimDt);

// Stride-H windows starting at start_step; token per fully valid window,
// -1 where any step in the window is invalid. Throws InvariantError when the
// track has no usable window at all.
std::vector<int> tokenize_track(const AgentTrack& track, const TokenVocab& vocab,
                                int start_step = 0);

// Window is [step, step + H] of the track, as increments in the start frame.
MotionSegment segment_from_track(const AgentTrack& track, int step, int horizon);

// Vocabulary files: JSON, schema_version 1, bit-exact double round trip.
void save_vocab(const TokenVocab& v, const std::string& path);
TokenVocab load_vocab(const std::string& path);

}  // namespace tsim
