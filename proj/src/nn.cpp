#include "tsim/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "tsim/common.hpp"
#include "tsim/gemm.hpp"

namespace tsim {

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Linear::init(int in_dim, int out_dim, Rng& rng, bool zero_init) {
  in = in_dim;
  out = out_dim;
  W.resize({out, in});
  b.resize({out});
  gW.resize({out, in});
  gb.resize({out});
  if (!zero_init) {
    double bound = std::sqrt(6.0 / (in + out));
    for (double& w : W.data) w = rng.uniform(-bound, bound);
  }
}

void Linear::forward(const double* X, int batch, double* Y) const {
  gemm_nt(X, W.data.data(), Y, batch, in, out);
  for (int i = 0; i < batch; ++i) {
    double* y = Y + static_cast<long>(i) * out;
    for (int j = 0; j < out; ++j) y[j] += b.data[j];
  }
}

void Linear::backward(const double* X, const double* dY, int batch, double* dX) {
  // gW(out,in) += dY(batch,out)^T X(batch,in)
  gemm_tn(dY, X, gW.data.data(), out, batch, in, true);
  for (int i = 0; i < batch; ++i) {
    const double* dy = dY + static_cast<long>(i) * out;
    for (int j = 0; j < out; ++j) gb.data[j] += dy[j];
  }
  if (dX != nullptr) {
    // dX(batch,in) = dY(batch,out) W(out,in)
    gemm_nn(dY, W.data.data(), dX, batch, out, in);
  }
}

void tanh_forward(double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = std::tanh(x[i]);
}

void tanh_backward(const double* y, double* dy, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dy[i] *= (1.0 - y[i] * y[i]);
}

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const auto& r : refs) n += r.value->size();
  return n;
}

void ParamSet::zero_grads() {
  for (auto& r : refs) r.grad->zero();
}

std::vector<double> ParamSet::flat_values() const {
  std::vector<double> out;
  out.reserve(total_size());
  for (const auto& r : refs) out.insert(out.end(), r.value->data.begin(), r.value->data.end());
  return out;
}

std::vector<double> ParamSet::flat_grads() const {
  std::vector<double> out;
  out.reserve(total_size());
  for (const auto& r : refs) out.insert(out.end(), r.grad->data.begin(), r.grad->data.end());
  return out;
}

void ParamSet::set_flat_values(std::span<const double> v) {
  std::size_t off = 0;
  for (auto& r : refs) {
    std::copy(v.begin() + off, v.begin() + off + r.value->size(), r.value->data.begin());
    off += r.value->size();
  }
}

double ParamSet::grad_norm() const {
  double acc = 0.0;
  for (const auto& r : refs) {
    for (double g : r.grad->data) acc += g * g;
  }
  return std::sqrt(acc);
}

void ParamSet::scale_grads(double s) {
  for (auto& r : refs) {
    for (double& g : r.grad->data) g *= s;
  }
}

void adam_step(ParamSet& params, AdamState& state, double lr, double clip_norm,
               const AdamConfig& cfg) {
  if (state.m.size() != params.total_size()) state.reset(params.total_size());
  if (clip_norm > 0.0) {
    double norm = params.grad_norm();
    if (norm > clip_norm) params.scale_grads(clip_norm / norm);
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  std::size_t off = 0;
  for (auto& r : params.refs) {
    double* p = r.value->data.data();
    const double* g = r.grad->data.data();
    for (std::size_t i = 0; i < r.value->size(); ++i) {
      double& m = state.m[off + i];
      double& v = state.v[off + i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g[i];
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g[i] * g[i];
      p[i] -= lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
    }
    off += r.value->size();
  }
}

void log_softmax(const double* logits, int k, double* log_probs) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < k; ++i) mx = std::max(mx, logits[i]);
  double sum = 0.0;
  for (int i = 0; i < k; ++i) sum += std::exp(logits[i] - mx);
  double lse = mx + std::log(sum);
  for (int i = 0; i < k; ++i) log_probs[i] = logits[i] - lse;
}

CategoricalDist CategoricalDist::from_logits(std::span<const double> logits) {
  CategoricalDist d;
  d.log_probs.resize(logits.size());
  log_softmax(logits.data(), static_cast<int>(logits.size()), d.log_probs.data());
  return d;
}

double CategoricalDist::log_prob(int id) const {
  if (id < 0 || id >= k()) throw InvariantError("CategoricalDist::log_prob: id out of range");
  return log_probs[id];
}

double CategoricalDist::entropy() const {
  double h = 0.0;
  for (double lp : log_probs) h -= std::exp(lp) * lp;
  return h;
}

int CategoricalDist::sample(Rng& rng) const {
  double u = rng.uniform();
  double cum = 0.0;
  for (int i = 0; i < k(); ++i) {
    cum += std::exp(log_probs[i]);
    if (u < cum) return i;
  }
  return k() - 1;
}

int CategoricalDist::argmax() const {
  int best = 0;
  for (int i = 1; i < k(); ++i) {
    if (log_probs[i] > log_probs[best]) best = i;
  }
  return best;
}

double kl_from_logprobs(std::span<const double> ref_log_probs,
                        std::span<const double> q_log_probs) {
  if (ref_log_probs.size() != q_log_probs.size()) {
    throw InvariantError("kl: distribution size mismatch");
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < ref_log_probs.size(); ++i) {
    double p = std::exp(ref_log_probs[i]);
    double lq = std::max(q_log_probs[i], kLogProbFloor);
    kl += p * (ref_log_probs[i] - lq);
  }
  return std::max(kl, 0.0);
}

double kl_categorical(const CategoricalDist& p_ref, const CategoricalDist& q) {
  return kl_from_logprobs(p_ref.log_probs, q.log_probs);
}

namespace {
using Json = nlohmann::ordered_json;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  Json j;
  j["schema_version"] = 1;
  j["arch"] = Json::parse(ck.arch_json.empty() ? "{}" : ck.arch_json);
  Json params = Json::object();
  for (const auto& [name, data] : ck.params) params[name] = data;
  j["params"] = std::move(params);
  if (ck.has_adam) {
    j["adam"] = Json{{"m", ck.adam.m}, {"v", ck.adam.v}, {"t", ck.adam.t}};
  }
  j["rng"] = Json{{"seed", ck.rng_seed}, {"progress", ck.progress}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out << j.dump() << "\n";
  if (!out) throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  Json j;
  try {
    j = Json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  }
  if (!j.contains("schema_version") || j["schema_version"].get<int>() != 1) {
    throw SchemaError("checkpoint schema_version missing or unsupported");
  }
  Checkpoint ck;
  try {
    ck.arch_json = j.at("arch").dump();
    for (const auto& [name, arr] : j.at("params").items()) {
      ck.params.emplace_back(name, arr.get<std::vector<double>>());
    }
    if (j.contains("adam")) {
      ck.has_adam = true;
      ck.adam.m = j["adam"].at("m").get<std::vector<double>>();
      ck.adam.v = j["adam"].at("v").get<std::vector<double>>();
      ck.adam.t = j["adam"].at("t").get<long>();
    }
    ck.rng_seed = j.at("rng").at("seed").get<std::uint64_t>();
    ck.progress = j.at("rng").at("progress").get<long>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("checkpoint field error: ") + e.what());
  }
  return ck;
}

Checkpoint make_checkpoint(const std::string& arch_json, const ParamSet& params,
                           const AdamState* adam, std::uint64_t rng_seed, long progress) {
  Checkpoint ck;
  ck.arch_json = arch_json;
  for (const auto& r : params.refs) ck.params.emplace_back(r.name, r.value->data);
  if (adam != nullptr) {
    ck.adam = *adam;
    ck.has_adam = true;
  }
  ck.rng_seed = rng_seed;
  ck.progress = progress;
  return ck;
}

void restore_params(const Checkpoint& ck, ParamSet& params) {
  for (auto& r : params.refs) {
    bool found = false;
    for (const auto& [name, data] : ck.params) {
      if (name == r.name) {
        if (data.size() != r.value->size()) {
          throw SchemaError("checkpoint param size mismatch for " + name);
        }
        r.value->data = data;
        found = true;
        break;
      }
    }
    if (!found) throw SchemaError("checkpoint missing param " + r.name);
  }
}

}  // namespace tsim
