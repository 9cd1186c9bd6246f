#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tsim/nn.hpp"
#include "tsim/sim.hpp"

namespace tsim {

// Late-fusion architecture; shared by the decentralized policy (observation
// input, actor + critic) and the centralized reference (context input, actor
// only, wider trunk).
struct FusionSpec {
  FeatureLayout layout;
  int embed = 64;
  int trunk_hidden = 128;
  int n_actions = 64;
  bool has_critic = true;
  bool input_is_context = false;  // true: built from GlobalContext features
  double dropout_rate = 0.01;

  std::string to_json() const;
  static FusionSpec from_json(const std::string& text);
};

struct FusionCache {
  int batch = 0;
  bool train = false;
  const double* obs = nullptr;
  std::vector<double> ego_in, ego_h1, ego_h2;
  std::vector<double> part_in, part_h1, part_h2, part_pool, part_count;
  std::vector<double> road_in, road_h1, road_h2, road_pool, road_count;
  std::vector<double> fused, trunk_h, trunk_out, dropout_mask;
};

class LateFusionNet {
 public:
  LateFusionNet() = default;
  LateFusionNet(const FusionSpec& spec, std::uint64_t seed);

  const FusionSpec& spec() const { return spec_; }
  ParamSet params();
  std::size_t param_count();

  // obs: (batch, layout.total_dim()) row-major. logits: (batch, K).
  // values: (batch), ignored unless has_critic. Dropout is active only in
  // train mode and is fully determined by dropout_seed.
  void forward(const double* obs, int batch, FusionCache& cache, bool train,
               std::uint64_t dropout_seed, double* logits, double* values) const;

  // Accumulates parameter gradients for the batch recorded in cache.
  void backward(const FusionCache& cache, const double* dlogits, const double* dvalues);

  CategoricalDist dist(const std::vector<double>& features, double* value = nullptr) const;

 private:
  FusionSpec spec_;
  Linear ego1_, ego2_, part1_, part2_, road1_, road2_, trunk_, actor_, critic_;
};

FusionSpec policy_spec(const SimConfig& config, int n_actions);
// Reference trunk is 2x the policy's; decentralized=true reproduces the
// local-observation reference configuration.
FusionSpec reference_spec(const SimConfig& config, int n_actions, bool decentralized);

void save_net(LateFusionNet& net, const std::string& path, const AdamState* adam,
              std::uint64_t seed, long progress);
LateFusionNet load_net(const std::string& path, AdamState* adam = nullptr,
                       long* progress = nullptr);

// (context, target token) pairs extracted from expert tracks; the context
// features use the same constants and builders as rollout time.
struct BcDataset {
  int feature_dim = 0;
  int n_actions = 0;
  std::vector<std::vector<double>> contexts;
  std::vector<int> targets;
  std::vector<int> train_indices;
  std::vector<int> val_indices;
};

BcDataset build_bc_dataset(const std::vector<Scenario>& scenarios, const TokenVocab& vocab,
                           const SimConfig& config, bool decentralized, double val_fraction,
                           std::uint64_t seed);

struct BcEpochRow {
  int epoch = 0;
  double train_nll = 0.0;
  double val_nll = 0.0;
  double val_acc = 0.0;
};

struct BcReport {
  std::vector<BcEpochRow> rows;
  double final_val_nll() const { return rows.empty() ? 0.0 : rows.back().val_nll; }
  double final_val_acc() const { return rows.empty() ? 0.0 : rows.back().val_acc; }
  void write_csv(const std::string& path) const;
};

// Cross-entropy on target tokens with Adam; deterministic given seed. Row 0
// of the report is the pre-training evaluation.
BcReport bc_train(LateFusionNet& net, const BcDataset& dataset, int epochs, double lr,
                  std::uint64_t seed, int batch_size = 256);

}  // namespace tsim
