#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dbsde/error.hpp"
#include "dbsde/nn/param_store.hpp"
#include "dbsde/nn/tape.hpp"
#include "dbsde/rng.hpp"

namespace dbsde::nn {

enum class Activation { Elu };
enum class OutputActivation { Identity };

struct MlpSpec {
  int input_dim = 1;
  std::vector<int> hidden_widths;
  Activation activation = Activation::Elu;
  int output_dim = 1;
  OutputActivation output_activation = OutputActivation::Identity;

  /// Two hidden layers of width problem_dim + 10.
  static MlpSpec standard(int input_dim, int problem_dim, int output_dim) {
    return MlpSpec{input_dim, {problem_dim + 10, problem_dim + 10}, Activation::Elu, output_dim,
                   OutputActivation::Identity};
  }

  std::vector<int> layer_dims() const {
    std::vector<int> dims{input_dim};
    dims.insert(dims.end(), hidden_widths.begin(), hidden_widths.end());
    dims.push_back(output_dim);
    return dims;
  }

  std::size_t parameter_count() const {
    const auto dims = layer_dims();
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l)
      n += static_cast<std::size_t>(dims[l + 1]) * (dims[l] + 1);
    return n;
  }

  void validate() const {
    if (input_dim <= 0 || output_dim <= 0) throw InvalidSpec("mlp: input and output dims must be positive");
    for (int w : hidden_widths)
      if (w <= 0) throw InvalidSpec("mlp: zero-width hidden layer");
  }
};

/// Where one network lives inside a ParamStore.
struct MlpHandle {
  MlpSpec spec;
  std::vector<std::size_t> weights;
  std::vector<std::size_t> biases;
};

inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }

/// Registers a network in `store` under `prefix`. Weights are uniform in
/// +-sqrt(6 / (fan_in + fan_out)), biases zero.
inline MlpHandle add_mlp(ParamStore& store, const MlpSpec& spec, const std::string& prefix,
                         std::uint64_t seed) {
  spec.validate();
  MlpHandle h{spec, {}, {}};
  const CounterRng rng(seed);
  const auto dims = spec.layer_dims();
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int fan_in = dims[l];
    const int fan_out = dims[l + 1];
    const std::size_t w = store.add(prefix + ".w" + std::to_string(l), fan_out, fan_in);
    const std::size_t b = store.add(prefix + ".b" + std::to_string(l), fan_out, 1);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    auto wv = store.view(w);
    const auto stream = CounterRng::stream(0x4d4c50, l);
    for (Eigen::Index k = 0; k < wv.size(); ++k)
      wv.data()[k] = limit * (2.0 * rng.uniform(stream, static_cast<std::uint64_t>(k)) - 1.0);
    h.weights.push_back(w);
    h.biases.push_back(b);
  }
  return h;
}

inline ParamStore init_mlp(const MlpSpec& spec, std::uint64_t seed) {
  ParamStore store;
  add_mlp(store, spec, "mlp", seed);
  return store;
}

/// Handle for a store produced by init_mlp.
inline MlpHandle handle_of(const ParamStore& store, const MlpSpec& spec) {
  spec.validate();
  MlpHandle h{spec, {}, {}};
  const std::size_t layers = spec.hidden_widths.size() + 1;
  for (std::size_t l = 0; l < layers; ++l) {
    auto w = store.find("mlp.w" + std::to_string(l));
    auto b = store.find("mlp.b" + std::to_string(l));
    if (!w || !b) throw InvalidSpec("store does not hold a network of this spec");
    h.weights.push_back(*w);
    h.biases.push_back(*b);
  }
  return h;
}

/// Plain evaluation on a (input_dim x batch) matrix.
inline Matrix forward_mlp(const ParamStore& store, const MlpHandle& net, const Matrix& x) {
  if (x.rows() != net.spec.input_dim) throw InvalidSpec("forward_mlp: input dimension mismatch");
  Matrix h = x;
  const std::size_t layers = net.weights.size();
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix z = store.view(net.weights[l]).lazyProduct(h);
    z.colwise() += store.view(net.biases[l]).col(0);
    if (l + 1 < layers) z = elu_values(z);
    h = std::move(z);
  }
  return h;
}

inline Eigen::VectorXd forward_mlp(const ParamStore& store, const MlpSpec& spec, const Eigen::VectorXd& x) {
  return forward_mlp(store, handle_of(store, spec), Matrix(x)).col(0);
}

/// The same network recorded on a tape.
inline Var forward_mlp(Tape& tape, const ParamStore& store, const MlpHandle& net, Var x) {
  if (tape.value(x).rows() != net.spec.input_dim)
    throw InvalidSpec("forward_mlp: input dimension mismatch");
  Var h = x;
  const std::size_t layers = net.weights.size();
  for (std::size_t l = 0; l < layers; ++l) {
    h = tape.affine(tape.param(store, net.weights[l]), tape.param(store, net.biases[l]), h);
    if (l + 1 < layers) h = tape.elu(h);
  }
  return h;
}

}  // namespace dbsde::nn
