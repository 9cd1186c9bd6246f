#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tsim/rng.hpp"

namespace tsim {

struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::initializer_list<int> dims) { resize(dims); }

  void resize(std::initializer_list<int> dims) {
    shape.assign(dims);
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    data.assign(n, 0.0);
  }
  std::size_t size() const { return data.size(); }
  void zero() { std::fill(data.begin(), data.end(), 0.0); }
  bool all_finite() const;
};

// Affine layer, W is (out, in) row-major; forward is Y = X W^T + b.
struct Linear {
  int in = 0;
  int out = 0;
  Tensor W, b, gW, gb;

  void init(int in_dim, int out_dim, Rng& rng, bool zero_init = false);
  void forward(const double* X, int batch, double* Y) const;
  // Accumulates gW/gb; writes dX when non-null.
  void backward(const double* X, const double* dY, int batch, double* dX);
};

void tanh_forward(double* x, std::size_t n);
// dx = dy * (1 - y^2), y being the tanh outputs.
void tanh_backward(const double* y, double* dy, std::size_t n);

// Non-owning view over a net's parameters, in registration order.
struct ParamRef {
  std::string name;
  Tensor* value = nullptr;
  Tensor* grad = nullptr;
};

struct ParamSet {
  std::vector<ParamRef> refs;
  std::uint64_t init_seed = 0;

  std::size_t total_size() const;
  void zero_grads();
  std::vector<double> flat_values() const;
  std::vector<double> flat_grads() const;
  void set_flat_values(std::span<const double> v);
  double grad_norm() const;
  void scale_grads(double s);
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m, v;
  long t = 0;

  void reset(std::size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    t = 0;
  }
};

// Global-norm gradient clipping to clip_norm (skipped when <= 0), then the
// bias-corrected first/second moment update.
void adam_step(ParamSet& params, AdamState& state, double lr, double clip_norm,
               const AdamConfig& cfg = {});

// Stable log-softmax over one K-vector.
void log_softmax(const double* logits, int k, double* log_probs);

struct CategoricalDist {
  std::vector<double> log_probs;

  static CategoricalDist from_logits(std::span<const double> logits);
  int k() const { return static_cast<int>(log_probs.size()); }
  double log_prob(int id) const;
  double entropy() const;
  // Inverse-CDF over ascending indices on the seeded stream.
  int sample(Rng& rng) const;
  int argmax() const;
};

// Forward KL  sum_a p_ref(a) * (log p_ref(a) - log q(a)), with q log-probs
// floored at log(1e-20).
double kl_categorical(const CategoricalDist& p_ref, const CategoricalDist& q);
double kl_from_logprobs(std::span<const double> ref_log_probs,
                        std::span<const double> q_log_probs);

inline constexpr double kLogProbFloor = -46.0517018598809136804;  // log(1e-20)

// Checkpoint files: JSON, schema_version 1, lossless double round trip.
struct Checkpoint {
  std::string arch_json;  // architecture description (free-form JSON text)
  std::vector<std::pair<std::string, std::vector<double>>> params;
  AdamState adam;
  bool has_adam = false;
  std::uint64_t rng_seed = 0;
  long progress = 0;  // e.g. completed updates / epochs
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint make_checkpoint(const std::string& arch_json, const ParamSet& params,
                           const AdamState* adam, std::uint64_t rng_seed, long progress);
void restore_params(const Checkpoint& ck, ParamSet& params);

}  // namespace tsim
