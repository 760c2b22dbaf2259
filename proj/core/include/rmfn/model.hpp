#pragma once

#include <map>
#include <string>
#include <vector>

#include "rmfn/autodiff.hpp"
#include "rmfn/frequency_init.hpp"
#include "rmfn/rng.hpp"
#include "rmfn/tensor.hpp"

namespace rmfn {

struct ModelConfig {
  int d_in = 2;
  int d_h = 16;
  int d_out = 1;
  int layers = 3;  // L; output heads sit on layers 1..L
  double b_max = 16.0;
  double lambda1 = kDefaultLambda1;
  double lambda2 = kDefaultLambda2;
  bool bias_free = false;

  // Baseline switches: residual=false reads each head directly, init=kUniform
  // swaps the shifted directional scheme for cube-uniform layer increments
  // with identical per-layer band limits.
  bool residual = true;
  enum class Init { kShifted, kUniform };
  Init init = Init::kShifted;
};

// Band-limited multiplicative network with frozen sinusoidal filters.
// Parameter names: filter{i}.omega / filter{i}.phi (frozen), linear{i}.w /
// linear{i}.b, head{i}.w / head{i}.b (trainable).
struct RMFNModel {
  ModelConfig cfg;
  // band_limits[0] is the base filter band; band_limits[i] for i in 1..L is
  // the band limit shared by z^(i) and output scale i. Strictly increasing,
  // band_limits[L] == b_max.
  std::vector<double> band_limits;
  ad::ParamSet params;

  const Tensor& omega(int i) const { return params.at(filter_key(i, "omega")).value; }
  const Tensor& phi(int i) const { return params.at(filter_key(i, "phi")).value; }

  static std::string filter_key(int i, const char* leaf);
  static std::string linear_key(int i, const char* leaf);
  static std::string head_key(int i, const char* leaf);
};

RMFNModel create_model(const ModelConfig& cfg, Rng& rng);

// Binds every parameter as a tape leaf. with_grads=false binds all of them
// as constants (e.g. pose-only optimization steps).
std::map<std::string, ad::Value> bind_params(ad::Tape& tape, const ad::ParamSet& params,
                                             bool with_grads = true);

// z[i] is the activation of layer i (z[0] = g^(0)); y[s-1] is output scale s.
struct ModelProgram {
  std::vector<ad::Value> z;
  std::vector<ad::Value> y;
};

// Filter responses g^(i)(x) as tape values; differentiable w.r.t. x.
std::vector<ad::Value> build_filters(ad::Tape& tape,
                                     const std::map<std::string, ad::Value>& leaves,
                                     const ModelConfig& cfg, ad::Value x);

// Same responses computed outside any tape; used when coordinates are fixed
// across iterations and the filters can be entered as constants.
std::vector<Tensor> filters_numeric(const RMFNModel& model, const Tensor& x);

// Hidden chain and heads on top of filter values g. max_scale <= 0 builds
// every scale; a positive value stops the chain there (stages below L skip
// the unused upper layers).
ModelProgram build_model_program(ad::Tape& tape,
                                 const std::map<std::string, ad::Value>& leaves,
                                 const ModelConfig& cfg, const std::vector<ad::Value>& g,
                                 int max_scale = 0);

// Convenience: filters + chain from raw coordinates.
ModelProgram build_model_program(ad::Tape& tape,
                                 const std::map<std::string, ad::Value>& leaves,
                                 const ModelConfig& cfg, ad::Value x, int max_scale = 0);

// Plain forward passes for callers outside the training loop. x is
// [n, d_in]; coordinates outside [-0.5, 0.5]^d trigger a stderr warning.
std::vector<Tensor> forward_hidden(const RMFNModel& model, const Tensor& x);
std::vector<Tensor> forward_outputs(const RMFNModel& model, const Tensor& x);

// Pixel/voxel-center coordinates of a regular grid over [-0.5, 0.5]^d;
// returns [prod(dims), d].
Tensor make_grid_coords(const std::vector<int64_t>& dims);

// Samples output scale `scale` (1-based) on a regular grid; returns
// [dims..., d_out]. Evaluation is chunked, memory stays bounded.
Tensor eval_on_grid(const RMFNModel& model, int scale, const std::vector<int64_t>& dims);

void save_checkpoint(const RMFNModel& model, const std::string& path);
RMFNModel load_checkpoint(const std::string& path);

}  // namespace rmfn
