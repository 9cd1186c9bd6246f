#include "tsim/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "tsim/common.hpp"
#include "tsim/rng.hpp"

namespace tsim {

std::vector<Pose2> MotionSegment::cumulative_poses() const {
  std::vector<Pose2> out;
  out.reserve(rel_poses.size());
  Pose2 cur{0.0, 0.0, 0.0};
  for (const auto& rel : rel_poses) {
    cur = compose(cur, rel);
    out.push_back(cur);
  }
  return out;
}

double segment_distance(const MotionSegment& a, const MotionSegment& b, double lambda) {
  if (a.horizon() != b.horizon()) {
    throw InvariantError("segment_distance: horizon mismatch");
  }
  auto ca = a.cumulative_poses();
  auto cb = b.cumulative_poses();
  double d = 0.0;
  for (std::size_t h = 0; h < ca.size(); ++h) {
    double dp = std::hypot(ca[h].x - cb[h].x, ca[h].y - cb[h].y);
    double dh = std::abs(normalize_angle(ca[h].heading - cb[h].heading));
    d = std::max(d, dp + lambda * dh);
  }
  return d;
}

namespace {

MotionSegment zero_segment(int horizon) {
  MotionSegment seg;
  seg.rel_poses.assign(horizon, Pose2{0.0, 0.0, 0.0});
  return seg;
}

double nearest_token_distance(const MotionSegment& seg, const TokenVocab& vocab) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& tok : vocab.tokens) {
    best = std::min(best, segment_distance(seg, tok, vocab.distance_lambda));
  }
  return best;
}

}  // namespace

KdiskFit fit_kdisk(const std::vector<MotionSegment>& segments, double radius,
                   int k_max, std::uint64_t seed) {
  if (segments.empty()) throw InvariantError("fit_kdisk: empty input");
  if (!(radius > 0.0)) throw InvariantError("fit_kdisk: radius <= 0");
  const int horizon = segments.front().horizon();
  for (const auto& s : segments) {
    if (s.horizon() != horizon) throw InvariantError("fit_kdisk: mixed horizons");
  }

  KdiskFit fit;
  fit.vocab.radius = radius;
  fit.vocab.horizon = horizon;
  fit.vocab.tokens.push_back(zero_segment(horizon));

  std::vector<int> order(segments.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x6b6469736bULL));  // "kdisk"
  fisher_yates(order, rng);

  for (int idx : order) {
    if (fit.vocab.size() >= k_max) break;
    if (nearest_token_distance(segments[idx], fit.vocab) > radius) {
      fit.vocab.tokens.push_back(segments[idx]);
    }
  }

  std::size_t covered = 0;
  for (const auto& s : segments) {
    if (nearest_token_distance(s, fit.vocab) <= radius) ++covered;
  }
  fit.coverage = static_cast<double>(covered) / static_cast<double>(segments.size());
  return fit;
}

KdiskFit fit_kdisk_auto(const std::vector<MotionSegment>& segments, int k_target,
                        std::uint64_t seed) {
  if (k_target < 2) throw InvariantError("fit_kdisk_auto: k_target < 2");
  // Vocabulary size shrinks as the radius grows; bisect until the uncapped
  // greedy pass lands on k_target (or the bracket collapses).
  double lo = 1e-4, hi = 20.0;
  KdiskFit best = fit_kdisk(segments, hi, k_target, seed);
  for (int it = 0; it < 60; ++it) {
    double mid = 0.5 * (lo + hi);
    KdiskFit fit = fit_kdisk(segments, mid, k_target + 1, seed);
    if (fit.vocab.size() > k_target) {
      lo = mid;  // too fine
    } else {
      hi = mid;
      best = std::move(fit);
      if (best.vocab.size() == k_target) break;
    }
  }
  if (best.vocab.size() == k_target) {
    // Redo at the chosen radius with the cap for an exact coverage figure.
    return fit_kdisk(segments, best.vocab.radius, k_target, seed);
  }
  return best;
}

TokenId encode_segment(const MotionSegment& seg, const TokenVocab& vocab) {
  if (seg.horizon() != vocab.horizon) {
    throw InvariantError("encode_segment: horizon mismatch");
  }
  int best_idx = 0;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < vocab.size(); ++i) {
    double d = segment_distance(seg, vocab.tokens[i], vocab.distance_lambda);
    if (d < best) {
      best = d;
      best_idx = i;
    }
  }
  return TokenId{best_idx};
}

TokenMotion apply_token(const Pose2& pose, double /*speed*/, const MotionSegment& token,
                        double dt) {
  Pose2 cur = pose;
  for (const auto& rel : token.rel_poses) cur = compose(cur, rel);
  double disp = std::hypot(cur.x - pose.x, cur.y - pose.y);
  return {cur, disp / (token.horizon() * dt)};
}

MotionSegment segment_from_track(const AgentTrack& track, int step, int horizon) {
  MotionSegment seg;
  seg.rel_poses.reserve(horizon);
  for (int h = 0; h < horizon; ++h) {
    seg.rel_poses.push_back(relative_to(track.states[step + h].pose, track.states[step + h + 1].pose));
  }
  return seg;
}

std::vector<int> tokenize_track(const AgentTrack& track, const TokenVocab& vocab,
                                int start_step) {
  const int H = vocab.horizon;
  const int n = static_cast<int>(track.states.size());
  std::vector<int> out;
  bool any = false;
  for (int t = start_step; t + H < n; t += H) {
    bool ok = true;
    for (int h = 0; h <= H; ++h) ok = ok && track.states[t + h].valid;
    if (ok) {
      out.push_back(encode_segment(segment_from_track(track, t, H), vocab).index);
      any = true;
    } else {
      out.push_back(-1);
    }
  }
  if (!any) throw InvariantError("tokenize_track: no fully valid window");
  return out;
}

void save_vocab(const TokenVocab& v, const std::string& path) {
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["radius"] = v.radius;
  j["distance_lambda"] = v.distance_lambda;
  j["horizon"] = v.horizon;
  auto tokens = nlohmann::ordered_json::array();
  for (const auto& tok : v.tokens) {
    auto steps = nlohmann::ordered_json::array();
    for (const auto& p : tok.rel_poses) steps.push_back(nlohmann::ordered_json::array({p.x, p.y, p.heading}));
    tokens.push_back(std::move(steps));
  }
  j["tokens"] = std::move(tokens);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vocab file: " + path);
  out << j.dump(1) << "\n";
}

TokenVocab load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocab file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed vocab file: ") + e.what());
  }
  if (!j.contains("schema_version") || j["schema_version"].get<int>() != 1) {
    throw SchemaError("vocab schema_version missing or unsupported");
  }
  TokenVocab v;
  try {
    v.radius = j.at("radius").get<double>();
    v.distance_lambda = j.at("distance_lambda").get<double>();
    v.horizon = j.at("horizon").get<int>();
    for (const auto& jt : j.at("tokens")) {
      MotionSegment seg;
      for (const auto& jp : jt) {
        seg.rel_poses.push_back({jp.at(0).get<double>(), jp.at(1).get<double>(), jp.at(2).get<double>()});
      }
      v.tokens.push_back(std::move(seg));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("vocab field error: ") + e.what());
  }
  if (v.tokens.empty()) throw InvariantError("vocab has no tokens");
  return v;
}

}  // namespace tsim
