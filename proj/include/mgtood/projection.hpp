#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mgtood/core.hpp"

namespace mgtood {

enum class Activation { ReLU, Tanh, Identity };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view text);

/// Feed-forward projection head. The activation applies to hidden layers
/// only; the last layer is affine.
struct ProjectionNet {
  std::vector<int> layer_dims;
  std::vector<Mat> weights;  // weights[l] is layer_dims[l+1] x layer_dims[l]
  std::vector<Vec> biases;
  Activation activation = Activation::Tanh;
  std::uint64_t seed = 0;

  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }
  std::size_t num_layers() const { return weights.size(); }
  std::size_t param_count() const;
};

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases.
ProjectionNet init_net(std::vector<int> layer_dims, Activation activation, std::uint64_t seed);

/// Parameters and optional input gradient, shaped like a ProjectionNet.
struct GradientBundle {
  std::vector<Mat> weight_grads;
  std::vector<Vec> bias_grads;
  std::optional<Vec> input_grad;

  static GradientBundle zeros_like(const ProjectionNet& net);
  GradientBundle& operator+=(const GradientBundle& other);
  GradientBundle& operator*=(double scale);
  bool all_finite() const;
  Vec flatten() const;
};

/// Flat parameter vector: per layer, column-major weights then bias.
Vec flatten_params(const ProjectionNet& net);
void assign_params(ProjectionNet& net, const Vec& flat);

/// Pre- and post-activation values of one forward pass.
struct ForwardTrace {
  std::vector<Vec> pre;   // z_1..z_L
  std::vector<Vec> post;  // a_0 = input, a_1..a_L
  const Vec& output() const { return post.back(); }
};

Embedding forward(const ProjectionNet& net, const Embedding& z);
ForwardTrace forward_trace(const ProjectionNet& net, const Embedding& z);

/// Reverse-mode gradients of <upstream, forward(net, z)>.
GradientBundle backward(const ProjectionNet& net, const Embedding& z, const Vec& upstream,
                        bool want_input_grad = false);
GradientBundle backward(const ProjectionNet& net, const ForwardTrace& trace, const Vec& upstream,
                        bool want_input_grad = false);

/// Parameter gradients of the bilinear form <cotangent, J(z) tangent>, where
/// J is the Jacobian of the net at z. `jvp` is J(z) tangent itself. This is
/// the second-order pass behind input-gradient penalties.
struct DirectionalGradient {
  GradientBundle params;
  Vec jvp;
};
DirectionalGradient directional_backward(const ProjectionNet& net, const Embedding& z,
                                         const Vec& tangent, const Vec& cotangent);

struct FdReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  bool pass = false;
};

/// A scalar loss of the network parameters, returning its value and the
/// analytic parameter gradient.
using NetLoss = std::function<std::pair<double, GradientBundle>(const ProjectionNet&, const Embedding&)>;

/// Central differences over every parameter coordinate. Relative error is
/// |a - n| / (|a| + |n| + 1e-12).
FdReport finite_difference_check(const ProjectionNet& net, const Embedding& z, const NetLoss& loss,
                                 double epsilon = 1e-5, double tolerance = 1e-4);

/// True if some hidden pre-activation lies within `margin` of zero.
bool near_relu_kink(const ProjectionNet& net, const Embedding& z, double margin = 1e-3);

nlohmann::json net_to_json(const ProjectionNet& net);
ProjectionNet net_from_json(const nlohmann::json& j);

}  // namespace mgtood
