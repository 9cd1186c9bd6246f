#include "tsim/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "tsim/common.hpp"

namespace tsim {

std::string FusionSpec::to_json() const {
  nlohmann::ordered_json j;
  j["kind"] = "late_fusion";
  j["input"] = input_is_context ? "context" : "observation";
  j["n_partner"] = layout.n_partner;
  j["n_road"] = layout.n_road;
  j["embed"] = embed;
  j["trunk_hidden"] = trunk_hidden;
  j["n_actions"] = n_actions;
  j["has_critic"] = has_critic;
  j["dropout_rate"] = dropout_rate;
  return j.dump();
}

FusionSpec FusionSpec::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad arch json: ") + e.what());
  }
  if (j.value("kind", "") != "late_fusion") throw SchemaError("unknown net kind");
  FusionSpec s;
  s.input_is_context = j.at("input").get<std::string>() == "context";
  s.layout.n_partner = j.at("n_partner").get<int>();
  s.layout.n_road = j.at("n_road").get<int>();
  s.embed = j.at("embed").get<int>();
  s.trunk_hidden = j.at("trunk_hidden").get<int>();
  s.n_actions = j.at("n_actions").get<int>();
  s.has_critic = j.at("has_critic").get<bool>();
  s.dropout_rate = j.at("dropout_rate").get<double>();
  return s;
}

LateFusionNet::LateFusionNet(const FusionSpec& spec, std::uint64_t seed) : spec_(spec) {
  Rng rng(derive_seed(seed, 0x6e6574ULL));  // "net"
  const int E = spec.embed;
  ego1_.init(FeatureLayout::kEgoDim, E, rng);
  ego2_.init(E, E, rng);
  part1_.init(FeatureLayout::kPartnerDim, E, rng);
  part2_.init(E, E, rng);
  road1_.init(FeatureLayout::kRoadDim, E, rng);
  road2_.init(E, E, rng);
  trunk_.init(3 * E, spec.trunk_hidden, rng);
  // Heads start at zero: the policy opens uniform over tokens.
  actor_.init(spec.trunk_hidden, spec.n_actions, rng, /*zero_init=*/true);
  critic_.init(spec.trunk_hidden, 1, rng, /*zero_init=*/true);
}

ParamSet LateFusionNet::params() {
  ParamSet ps;
  auto add = [&ps](const char* name, Linear& l) {
    ps.refs.push_back({std::string(name) + ".W", &l.W, &l.gW});
    ps.refs.push_back({std::string(name) + ".b", &l.b, &l.gb});
  };
  add("ego1", ego1_);
  add("ego2", ego2_);
  add("part1", part1_);
  add("part2", part2_);
  add("road1", road1_);
  add("road2", road2_);
  add("trunk", trunk_);
  add("actor", actor_);
  if (spec_.has_critic) add("critic", critic_);
  return ps;
}

std::size_t LateFusionNet::param_count() { return params().total_size(); }

namespace {

// Strided copy of a feature block into a dense matrix.
void gather_block(const double* obs, int batch, int row_dim, int offset, int block,
                  std::vector<double>& out) {
  out.resize(static_cast<std::size_t>(batch) * block);
  for (int i = 0; i < batch; ++i) {
    const double* src = obs + static_cast<long>(i) * row_dim + offset;
    std::copy(src, src + block, out.begin() + static_cast<long>(i) * block);
  }
}

void masked_mean_pool(const std::vector<double>& h, const double* obs, int batch, int row_dim,
                      int mask_offset, int slots, int embed, std::vector<double>& pooled,
                      std::vector<double>& counts) {
  pooled.assign(static_cast<std::size_t>(batch) * embed, 0.0);
  counts.assign(batch, 0.0);
  for (int i = 0; i < batch; ++i) {
    const double* mask = obs + static_cast<long>(i) * row_dim + mask_offset;
    double* out = pooled.data() + static_cast<long>(i) * embed;
    int count = 0;
    for (int s = 0; s < slots; ++s) {
      if (mask[s] <= 0.0) continue;
      ++count;
      const double* src = h.data() + (static_cast<long>(i) * slots + s) * embed;
      for (int e = 0; e < embed; ++e) out[e] += src[e];
    }
    counts[i] = count;
    if (count > 1) {
      double inv = 1.0 / count;
      for (int e = 0; e < embed; ++e) out[e] *= inv;
    }
  }
}

void masked_pool_backward(const std::vector<double>& dpooled, const double* obs, int batch,
                          int row_dim, int mask_offset, int slots, int embed,
                          std::vector<double>& dh) {
  dh.assign(static_cast<std::size_t>(batch) * slots * embed, 0.0);
  for (int i = 0; i < batch; ++i) {
    const double* mask = obs + static_cast<long>(i) * row_dim + mask_offset;
    int count = 0;
    for (int s = 0; s < slots; ++s) {
      if (mask[s] > 0.0) ++count;
    }
    if (count == 0) continue;
    double inv = 1.0 / count;
    const double* dsrc = dpooled.data() + static_cast<long>(i) * embed;
    for (int s = 0; s < slots; ++s) {
      if (mask[s] <= 0.0) continue;
      double* dst = dh.data() + (static_cast<long>(i) * slots + s) * embed;
      for (int e = 0; e < embed; ++e) dst[e] = dsrc[e] * inv;
    }
  }
}

}  // namespace

void LateFusionNet::forward(const double* obs, int batch, FusionCache& cache, bool train,
                            std::uint64_t dropout_seed, double* logits, double* values) const {
  const FeatureLayout& L = spec_.layout;
  const int D = L.total_dim();
  const int E = spec_.embed;
  const int H = spec_.trunk_hidden;
  cache.batch = batch;
  cache.train = train;
  cache.obs = obs;

  gather_block(obs, batch, D, L.ego_offset(), FeatureLayout::kEgoDim, cache.ego_in);
  cache.ego_h1.resize(static_cast<std::size_t>(batch) * E);
  ego1_.forward(cache.ego_in.data(), batch, cache.ego_h1.data());
  tanh_forward(cache.ego_h1.data(), cache.ego_h1.size());
  cache.ego_h2.resize(static_cast<std::size_t>(batch) * E);
  ego2_.forward(cache.ego_h1.data(), batch, cache.ego_h2.data());
  tanh_forward(cache.ego_h2.data(), cache.ego_h2.size());

  const int P = L.n_partner;
  gather_block(obs, batch, D, L.partner_offset(), P * FeatureLayout::kPartnerDim, cache.part_in);
  cache.part_h1.resize(static_cast<std::size_t>(batch) * P * E);
  part1_.forward(cache.part_in.data(), batch * P, cache.part_h1.data());
  tanh_forward(cache.part_h1.data(), cache.part_h1.size());
  cache.part_h2.resize(static_cast<std::size_t>(batch) * P * E);
  part2_.forward(cache.part_h1.data(), batch * P, cache.part_h2.data());
  tanh_forward(cache.part_h2.data(), cache.part_h2.size());
  masked_mean_pool(cache.part_h2, obs, batch, D, L.partner_mask_offset(), P, E, cache.part_pool,
                   cache.part_count);

  const int R = L.n_road;
  gather_block(obs, batch, D, L.road_offset(), R * FeatureLayout::kRoadDim, cache.road_in);
  cache.road_h1.resize(static_cast<std::size_t>(batch) * R * E);
  road1_.forward(cache.road_in.data(), batch * R, cache.road_h1.data());
  tanh_forward(cache.road_h1.data(), cache.road_h1.size());
  cache.road_h2.resize(static_cast<std::size_t>(batch) * R * E);
  road2_.forward(cache.road_h1.data(), batch * R, cache.road_h2.data());
  tanh_forward(cache.road_h2.data(), cache.road_h2.size());
  masked_mean_pool(cache.road_h2, obs, batch, D, L.road_mask_offset(), R, E, cache.road_pool,
                   cache.road_count);

  cache.fused.resize(static_cast<std::size_t>(batch) * 3 * E);
  for (int i = 0; i < batch; ++i) {
    double* dst = cache.fused.data() + static_cast<long>(i) * 3 * E;
    std::copy_n(cache.ego_h2.data() + static_cast<long>(i) * E, E, dst);
    std::copy_n(cache.part_pool.data() + static_cast<long>(i) * E, E, dst + E);
    std::copy_n(cache.road_pool.data() + static_cast<long>(i) * E, E, dst + 2 * E);
  }

  cache.trunk_h.resize(static_cast<std::size_t>(batch) * H);
  trunk_.forward(cache.fused.data(), batch, cache.trunk_h.data());
  tanh_forward(cache.trunk_h.data(), cache.trunk_h.size());

  cache.trunk_out = cache.trunk_h;
  if (train && spec_.dropout_rate > 0.0) {
    cache.dropout_mask.resize(cache.trunk_h.size());
    Rng rng(derive_seed(dropout_seed, 0x64726f70ULL));  // "drop"
    const double keep = 1.0 - spec_.dropout_rate;
    const double inv_keep = 1.0 / keep;
    for (std::size_t i = 0; i < cache.trunk_out.size(); ++i) {
      bool kept = rng.uniform() < keep;
      cache.dropout_mask[i] = kept ? 1.0 : 0.0;
      cache.trunk_out[i] = kept ? cache.trunk_out[i] * inv_keep : 0.0;
    }
  } else {
    cache.dropout_mask.clear();
  }

  actor_.forward(cache.trunk_out.data(), batch, logits);
  if (spec_.has_critic && values != nullptr) {
    critic_.forward(cache.trunk_out.data(), batch, values);
  }
}

void LateFusionNet::backward(const FusionCache& cache, const double* dlogits,
                             const double* dvalues) {
  const FeatureLayout& L = spec_.layout;
  const int batch = cache.batch;
  const int D = L.total_dim();
  const int E = spec_.embed;
  const int H = spec_.trunk_hidden;

  std::vector<double> dtrunk_out(static_cast<std::size_t>(batch) * H, 0.0);
  actor_.backward(cache.trunk_out.data(), dlogits, batch, dtrunk_out.data());
  if (spec_.has_critic && dvalues != nullptr) {
    std::vector<double> dtmp(static_cast<std::size_t>(batch) * H);
    critic_.backward(cache.trunk_out.data(), dvalues, batch, dtmp.data());
    for (std::size_t i = 0; i < dtrunk_out.size(); ++i) dtrunk_out[i] += dtmp[i];
  }

  if (cache.train && !cache.dropout_mask.empty()) {
    const double inv_keep = 1.0 / (1.0 - spec_.dropout_rate);
    for (std::size_t i = 0; i < dtrunk_out.size(); ++i) {
      dtrunk_out[i] *= cache.dropout_mask[i] * inv_keep;
    }
  }
  tanh_backward(cache.trunk_h.data(), dtrunk_out.data(), dtrunk_out.size());

  std::vector<double> dfused(static_cast<std::size_t>(batch) * 3 * E);
  trunk_.backward(cache.fused.data(), dtrunk_out.data(), batch, dfused.data());

  std::vector<double> dego2(static_cast<std::size_t>(batch) * E);
  std::vector<double> dpool_p(static_cast<std::size_t>(batch) * E);
  std::vector<double> dpool_r(static_cast<std::size_t>(batch) * E);
  for (int i = 0; i < batch; ++i) {
    const double* src = dfused.data() + static_cast<long>(i) * 3 * E;
    std::copy_n(src, E, dego2.data() + static_cast<long>(i) * E);
    std::copy_n(src + E, E, dpool_p.data() + static_cast<long>(i) * E);
    std::copy_n(src + 2 * E, E, dpool_r.data() + static_cast<long>(i) * E);
  }

  tanh_backward(cache.ego_h2.data(), dego2.data(), dego2.size());
  std::vector<double> dego1(static_cast<std::size_t>(batch) * E);
  ego2_.backward(cache.ego_h1.data(), dego2.data(), batch, dego1.data());
  tanh_backward(cache.ego_h1.data(), dego1.data(), dego1.size());
  ego1_.backward(cache.ego_in.data(), dego1.data(), batch, nullptr);

  const int P = L.n_partner;
  std::vector<double> dpart_h2;
  masked_pool_backward(dpool_p, cache.obs, batch, D, L.partner_mask_offset(), P, E, dpart_h2);
  tanh_backward(cache.part_h2.data(), dpart_h2.data(), dpart_h2.size());
  std::vector<double> dpart_h1(dpart_h2.size());
  part2_.backward(cache.part_h1.data(), dpart_h2.data(), batch * P, dpart_h1.data());
  tanh_backward(cache.part_h1.data(), dpart_h1.data(), dpart_h1.size());
  part1_.backward(cache.part_in.data(), dpart_h1.data(), batch * P, nullptr);

  const int R = L.n_road;
  std::vector<double> droad_h2;
  masked_pool_backward(dpool_r, cache.obs, batch, D, L.road_mask_offset(), R, E, droad_h2);
  tanh_backward(cache.road_h2.data(), droad_h2.data(), droad_h2.size());
  std::vector<double> droad_h1(droad_h2.size());
  road2_.backward(cache.road_h1.data(), droad_h2.data(), batch * R, droad_h1.data());
  tanh_backward(cache.road_h1.data(), droad_h1.data(), droad_h1.size());
  road1_.backward(cache.road_in.data(), droad_h1.data(), batch * R, nullptr);
}

CategoricalDist LateFusionNet::dist(const std::vector<double>& features, double* value) const {
  if (static_cast<int>(features.size()) != spec_.layout.total_dim()) {
    throw InvariantError("LateFusionNet::dist: feature size mismatch");
  }
  FusionCache cache;
  std::vector<double> logits(spec_.n_actions);
  double v = 0.0;
  forward(features.data(), 1, cache, /*train=*/false, 0, logits.data(),
          spec_.has_critic ? &v : nullptr);
  if (value != nullptr) *value = v;
  return CategoricalDist::from_logits(logits);
}

FusionSpec policy_spec(const SimConfig& config, int n_actions) {
  FusionSpec s;
  s.layout = FeatureLayout{config.partner_cap, config.road_cap};
  s.embed = 64;
  s.trunk_hidden = 128;
  s.n_actions = n_actions;
  s.has_critic = true;
  s.input_is_context = false;
  return s;
}

FusionSpec reference_spec(const SimConfig& config, int n_actions, bool decentralized) {
  FusionSpec s;
  s.layout = decentralized ? FeatureLayout{config.partner_cap, config.road_cap}
                           : FeatureLayout{config.ref_partner_cap, config.road_cap};
  s.embed = 64;
  s.trunk_hidden = 256;  // ~2x policy capacity
  s.n_actions = n_actions;
  s.has_critic = false;
  s.input_is_context = !decentralized;
  return s;
}

void save_net(LateFusionNet& net, const std::string& path, const AdamState* adam,
              std::uint64_t seed, long progress) {
  ParamSet ps = net.params();
  save_checkpoint(make_checkpoint(net.spec().to_json(), ps, adam, seed, progress), path);
}

LateFusionNet load_net(const std::string& path, AdamState* adam, long* progress) {
  Checkpoint ck = load_checkpoint(path);
  FusionSpec spec = FusionSpec::from_json(ck.arch_json);
  LateFusionNet net(spec, ck.rng_seed);
  ParamSet ps = net.params();
  restore_params(ck, ps);
  if (adam != nullptr && ck.has_adam) *adam = ck.adam;
  if (progress != nullptr) *progress = ck.progress;
  return net;
}

BcDataset build_bc_dataset(const std::vector<Scenario>& scenarios, const TokenVocab& vocab,
                           const SimConfig& config, bool decentralized, double val_fraction,
                           std::uint64_t seed) {
  BcDataset ds;
  ds.n_actions = vocab.size();
  for (const Scenario& orig : scenarios) {
    Scenario replay = orig;
    std::fill(replay.controlled.begin(), replay.controlled.end(), 0);
    WorldState world = reset(replay, config);
    JointActions none;
    none.tokens.assign(replay.num_agents(), -1);

    // Token targets per policy window, aligned to policy boundaries.
    std::vector<std::vector<int>> tokens(orig.num_agents());
    for (int a = 0; a < orig.num_agents(); ++a) {
      if (!orig.controlled[a]) continue;
      try {
        tokens[a] = tokenize_track(orig.tracks[a], vocab, orig.init_step);
      } catch (const InvariantError&) {
        tokens[a].clear();
      }
    }

    int window = 0;
    while (!episode_over(world, replay)) {
      for (int a = 0; a < orig.num_agents(); ++a) {
        if (!orig.controlled[a] || tokens[a].empty()) continue;
        if (window >= static_cast<int>(tokens[a].size()) || tokens[a][window] < 0) continue;
        if (!world.agent_present(a) || world.done[a]) continue;
        std::vector<double> feats =
            decentralized
                ? build_observation(world, a, orig, config, /*goal_dropout=*/false).features
                : build_global_context(world, a, orig, config).features;
        ds.contexts.push_back(std::move(feats));
        ds.targets.push_back(tokens[a][window]);
      }
      step(world, none, vocab, replay, config);
      ++window;
    }
  }
  if (ds.contexts.empty()) throw InvariantError("build_bc_dataset: empty dataset");
  ds.feature_dim = static_cast<int>(ds.contexts.front().size());

  std::vector<int> order(ds.contexts.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x626373ULL));  // "bcs"
  fisher_yates(order, rng);
  std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(val_fraction * order.size()));
  ds.val_indices.assign(order.end() - n_val, order.end());
  ds.train_indices.assign(order.begin(), order.end() - n_val);
  return ds;
}

namespace {

void eval_bc(LateFusionNet& net, const BcDataset& ds, const std::vector<int>& idx,
             double& nll, double& acc) {
  const int K = ds.n_actions;
  constexpr int kEvalBatch = 512;
  nll = 0.0;
  int correct = 0;
  std::vector<double> batch_in, logits, lp(K);
  FusionCache cache;
  for (std::size_t start = 0; start < idx.size(); start += kEvalBatch) {
    const int B = static_cast<int>(std::min<std::size_t>(kEvalBatch, idx.size() - start));
    batch_in.resize(static_cast<std::size_t>(B) * ds.feature_dim);
    for (int b = 0; b < B; ++b) {
      const auto& ctx = ds.contexts[idx[start + b]];
      std::copy(ctx.begin(), ctx.end(), batch_in.begin() + static_cast<long>(b) * ds.feature_dim);
    }
    logits.resize(static_cast<std::size_t>(B) * K);
    net.forward(batch_in.data(), B, cache, /*train=*/false, 0, logits.data(), nullptr);
    for (int b = 0; b < B; ++b) {
      const int tgt = ds.targets[idx[start + b]];
      log_softmax(logits.data() + static_cast<long>(b) * K, K, lp.data());
      nll -= lp[tgt];
      int best = 0;
      for (int k = 1; k < K; ++k) {
        if (lp[k] > lp[best]) best = k;
      }
      if (best == tgt) ++correct;
    }
  }
  nll /= std::max<std::size_t>(1, idx.size());
  acc = static_cast<double>(correct) / std::max<std::size_t>(1, idx.size());
}

}  // namespace

BcReport bc_train(LateFusionNet& net, const BcDataset& dataset, int epochs, double lr,
                  std::uint64_t seed, int batch_size) {
  if (dataset.contexts.empty()) throw InvariantError("bc_train: empty dataset");
  const int K = dataset.n_actions;
  ParamSet ps = net.params();
  AdamState adam;
  adam.reset(ps.total_size());

  BcReport report;
  BcEpochRow row0;
  row0.epoch = 0;
  double unused_acc = 0.0;
  eval_bc(net, dataset, dataset.train_indices, row0.train_nll, unused_acc);
  eval_bc(net, dataset, dataset.val_indices, row0.val_nll, row0.val_acc);
  report.rows.push_back(row0);

  std::vector<int> order = dataset.train_indices;
  std::vector<double> batch_in, logits, lp, dlogits;
  FusionCache cache;
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    Rng rng(derive_seed(seed, 0x62637472ULL, epoch));  // "bctr"
    fisher_yates(order, rng);
    double train_nll_sum = 0.0;
    std::size_t train_n = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const int B = static_cast<int>(std::min<std::size_t>(batch_size, order.size() - start));
      batch_in.resize(static_cast<std::size_t>(B) * dataset.feature_dim);
      for (int b = 0; b < B; ++b) {
        const auto& ctx = dataset.contexts[order[start + b]];
        std::copy(ctx.begin(), ctx.end(), batch_in.begin() + static_cast<long>(b) * dataset.feature_dim);
      }
      logits.resize(static_cast<std::size_t>(B) * K);
      net.forward(batch_in.data(), B, cache, /*train=*/true,
                  derive_seed(seed, epoch, start), logits.data(), nullptr);

      lp.resize(static_cast<std::size_t>(B) * K);
      dlogits.assign(static_cast<std::size_t>(B) * K, 0.0);
      for (int b = 0; b < B; ++b) {
        const int tgt = dataset.targets[order[start + b]];
        log_softmax(logits.data() + static_cast<long>(b) * K, K, lp.data() + static_cast<long>(b) * K);
        train_nll_sum -= lp[static_cast<long>(b) * K + tgt];
        for (int k = 0; k < K; ++k) {
          double p = std::exp(lp[static_cast<long>(b) * K + k]);
          dlogits[static_cast<long>(b) * K + k] = (p - (k == tgt ? 1.0 : 0.0)) / B;
        }
      }
      train_n += B;
      ps.zero_grads();
      net.backward(cache, dlogits.data(), nullptr);
      adam_step(ps, adam, lr, /*clip_norm=*/0.0);
    }
    BcEpochRow row;
    row.epoch = epoch;
    row.train_nll = train_n > 0 ? train_nll_sum / train_n : 0.0;
    eval_bc(net, dataset, dataset.val_indices, row.val_nll, row.val_acc);
    report.rows.push_back(row);
  }
  return report;
}

void BcReport::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write BC report: " + path);
  out << "epoch,train_nll,val_nll,val_acc\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.train_nll << ',' << r.val_nll << ',' << r.val_acc << "\n";
  }
}

}  // namespace tsim
