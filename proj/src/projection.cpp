#include "mgtood/projection.hpp"

#include <cmath>
#include <random>

namespace mgtood {

using json = nlohmann::json;

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
  }
  return "identity";
}

Activation parse_activation(std::string_view text) {
  if (text == "relu") return Activation::ReLU;
  if (text == "tanh") return Activation::Tanh;
  if (text == "identity") return Activation::Identity;
  throw ConfigError("unknown activation '" + std::string(text) + "'");
}

namespace {

double act(Activation a, double x) {
  switch (a) {
    case Activation::ReLU: return x > 0.0 ? x : 0.0;
    case Activation::Tanh: return std::tanh(x);
    case Activation::Identity: return x;
  }
  return x;
}

// Derivatives expressed through the pre-activation x and output y = act(x).
double act_d1(Activation a, double x, double y) {
  switch (a) {
    case Activation::ReLU: return x > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh: return 1.0 - y * y;
    case Activation::Identity: return 1.0;
  }
  return 1.0;
}

double act_d2(Activation a, double y) {
  return a == Activation::Tanh ? -2.0 * y * (1.0 - y * y) : 0.0;
}

Activation layer_activation(const ProjectionNet& net, std::size_t layer) {
  return layer + 1 == net.num_layers() ? Activation::Identity : net.activation;
}

void check_input(const ProjectionNet& net, const Embedding& z) {
  if (z.size() != net.input_dim()) {
    throw ShapeError("projection: input dim " + std::to_string(z.size()) + " != " +
                     std::to_string(net.input_dim()));
  }
}

}  // namespace

std::size_t ProjectionNet::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  }
  return n;
}

ProjectionNet init_net(std::vector<int> layer_dims, Activation activation, std::uint64_t seed) {
  if (layer_dims.size() < 2) throw ConfigError("init_net: need at least input and output dims");
  for (int d : layer_dims) {
    if (d <= 0) throw ConfigError("init_net: layer dims must be positive");
  }
  ProjectionNet net;
  net.layer_dims = std::move(layer_dims);
  net.activation = activation;
  net.seed = seed;
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < net.layer_dims.size(); ++l) {
    const int fan_in = net.layer_dims[l];
    const int fan_out = net.layer_dims[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Mat w(fan_out, fan_in);
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = u(rng);
    }
    net.weights.push_back(std::move(w));
    net.biases.push_back(Vec::Zero(fan_out));
  }
  return net;
}

GradientBundle GradientBundle::zeros_like(const ProjectionNet& net) {
  GradientBundle g;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    g.weight_grads.push_back(Mat::Zero(net.weights[l].rows(), net.weights[l].cols()));
    g.bias_grads.push_back(Vec::Zero(net.biases[l].size()));
  }
  return g;
}

GradientBundle& GradientBundle::operator+=(const GradientBundle& other) {
  if (other.weight_grads.size() != weight_grads.size()) throw ShapeError("GradientBundle shape mismatch");
  for (std::size_t l = 0; l < weight_grads.size(); ++l) {
    weight_grads[l] += other.weight_grads[l];
    bias_grads[l] += other.bias_grads[l];
  }
  if (other.input_grad) {
    if (input_grad) {
      *input_grad += *other.input_grad;
    } else {
      input_grad = other.input_grad;
    }
  }
  return *this;
}

GradientBundle& GradientBundle::operator*=(double scale) {
  for (std::size_t l = 0; l < weight_grads.size(); ++l) {
    weight_grads[l] *= scale;
    bias_grads[l] *= scale;
  }
  if (input_grad) *input_grad *= scale;
  return *this;
}

bool GradientBundle::all_finite() const {
  for (std::size_t l = 0; l < weight_grads.size(); ++l) {
    if (!weight_grads[l].allFinite() || !bias_grads[l].allFinite()) return false;
  }
  return !input_grad || input_grad->allFinite();
}

Vec GradientBundle::flatten() const {
  Eigen::Index n = 0;
  for (std::size_t l = 0; l < weight_grads.size(); ++l) n += weight_grads[l].size() + bias_grads[l].size();
  Vec flat(n);
  Eigen::Index at = 0;
  for (std::size_t l = 0; l < weight_grads.size(); ++l) {
    flat.segment(at, weight_grads[l].size()) = weight_grads[l].reshaped();
    at += weight_grads[l].size();
    flat.segment(at, bias_grads[l].size()) = bias_grads[l];
    at += bias_grads[l].size();
  }
  return flat;
}

Vec flatten_params(const ProjectionNet& net) {
  Vec flat(static_cast<Eigen::Index>(net.param_count()));
  Eigen::Index at = 0;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    flat.segment(at, net.weights[l].size()) = net.weights[l].reshaped();
    at += net.weights[l].size();
    flat.segment(at, net.biases[l].size()) = net.biases[l];
    at += net.biases[l].size();
  }
  return flat;
}

void assign_params(ProjectionNet& net, const Vec& flat) {
  if (flat.size() != static_cast<Eigen::Index>(net.param_count())) {
    throw ShapeError("assign_params: expected " + std::to_string(net.param_count()) + " values");
  }
  Eigen::Index at = 0;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    net.weights[l].reshaped() = flat.segment(at, net.weights[l].size());
    at += net.weights[l].size();
    net.biases[l] = flat.segment(at, net.biases[l].size());
    at += net.biases[l].size();
  }
}

ForwardTrace forward_trace(const ProjectionNet& net, const Embedding& z) {
  check_input(net, z);
  ForwardTrace t;
  t.post.reserve(net.num_layers() + 1);
  t.pre.reserve(net.num_layers());
  t.post.push_back(z);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    Vec pre = net.weights[l] * t.post.back() + net.biases[l];
    const Activation a = layer_activation(net, l);
    Vec post = pre.unaryExpr([a](double x) { return act(a, x); });
    t.pre.push_back(std::move(pre));
    t.post.push_back(std::move(post));
  }
  return t;
}

Embedding forward(const ProjectionNet& net, const Embedding& z) {
  return forward_trace(net, z).output();
}

GradientBundle backward(const ProjectionNet& net, const ForwardTrace& trace, const Vec& upstream,
                        bool want_input_grad) {
  if (upstream.size() != net.output_dim()) {
    throw ShapeError("backward: upstream gradient has dim " + std::to_string(upstream.size()) +
                     ", expected " + std::to_string(net.output_dim()));
  }
  GradientBundle g = GradientBundle::zeros_like(net);
  Vec grad_post = upstream;
  for (std::size_t k = net.num_layers(); k-- > 0;) {
    const Activation a = layer_activation(net, k);
    Vec grad_pre(grad_post.size());
    for (Eigen::Index i = 0; i < grad_pre.size(); ++i) {
      grad_pre[i] = grad_post[i] * act_d1(a, trace.pre[k][i], trace.post[k + 1][i]);
    }
    g.weight_grads[k] = grad_pre * trace.post[k].transpose();
    g.bias_grads[k] = grad_pre;
    if (k > 0 || want_input_grad) grad_post = net.weights[k].transpose() * grad_pre;
  }
  if (want_input_grad) g.input_grad = std::move(grad_post);
  return g;
}

GradientBundle backward(const ProjectionNet& net, const Embedding& z, const Vec& upstream,
                        bool want_input_grad) {
  return backward(net, forward_trace(net, z), upstream, want_input_grad);
}

DirectionalGradient directional_backward(const ProjectionNet& net, const Embedding& z,
                                         const Vec& tangent, const Vec& cotangent) {
  check_input(net, z);
  if (tangent.size() != net.input_dim() || cotangent.size() != net.output_dim()) {
    throw ShapeError("directional_backward: tangent/cotangent shape mismatch");
  }
  const std::size_t L = net.num_layers();
  const ForwardTrace t = forward_trace(net, z);

  // Tangent (forward-mode) pass: dz_l = W_l da_{l-1}, da_l = act'(z_l) * dz_l.
  std::vector<Vec> dpre(L);
  std::vector<Vec> dpost(L + 1);
  dpost[0] = tangent;
  for (std::size_t l = 0; l < L; ++l) {
    const Activation a = layer_activation(net, l);
    dpre[l] = net.weights[l] * dpost[l];
    dpost[l + 1].resize(dpre[l].size());
    for (Eigen::Index i = 0; i < dpre[l].size(); ++i) {
      dpost[l + 1][i] = act_d1(a, t.pre[l][i], t.post[l + 1][i]) * dpre[l][i];
    }
  }

  // Reverse pass over both the primal and tangent streams of <v, da_L>.
  DirectionalGradient out{GradientBundle::zeros_like(net), dpost[L]};
  Vec adj_post = Vec::Zero(net.output_dim());  // adjoint of a_l
  Vec adj_dpost = cotangent;                   // adjoint of da_l
  for (std::size_t k = L; k-- > 0;) {
    const Activation a = layer_activation(net, k);
    const Eigen::Index n = t.pre[k].size();
    Vec adj_dpre(n);
    Vec adj_pre(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double y = t.post[k + 1][i];
      const double d1 = act_d1(a, t.pre[k][i], y);
      adj_dpre[i] = adj_dpost[i] * d1;
      adj_pre[i] = adj_post[i] * d1 + adj_dpost[i] * dpre[k][i] * act_d2(a, y);
    }
    out.params.weight_grads[k] = adj_dpre * dpost[k].transpose() + adj_pre * t.post[k].transpose();
    out.params.bias_grads[k] = adj_pre;
    if (k > 0) {
      adj_dpost = net.weights[k].transpose() * adj_dpre;
      adj_post = net.weights[k].transpose() * adj_pre;
    }
  }
  return out;
}

FdReport finite_difference_check(const ProjectionNet& net, const Embedding& z, const NetLoss& loss,
                                 double epsilon, double tolerance) {
  FdReport report;
  const Vec analytic = loss(net, z).second.flatten();
  const Vec base = flatten_params(net);
  ProjectionNet probe = net;
  for (Eigen::Index i = 0; i < base.size(); ++i) {
    Vec p = base;
    p[i] = base[i] + epsilon;
    assign_params(probe, p);
    const double up = loss(probe, z).first;
    p[i] = base[i] - epsilon;
    assign_params(probe, p);
    const double down = loss(probe, z).first;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double rel = std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + std::abs(numeric) + 1e-12);
    if (!(rel <= report.max_rel_error)) {
      report.max_rel_error = std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel;
      report.worst_index = static_cast<std::size_t>(i);
    }
  }
  report.pass = report.max_rel_error < tolerance;
  return report;
}

bool near_relu_kink(const ProjectionNet& net, const Embedding& z, double margin) {
  const ForwardTrace t = forward_trace(net, z);
  for (std::size_t l = 0; l + 1 < net.num_layers(); ++l) {
    if ((t.pre[l].array().abs() < margin).any()) return true;
  }
  return false;
}

json net_to_json(const ProjectionNet& net) {
  json weights = json::array();
  json biases = json::array();
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < net.weights[l].rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(net.weights[l].cols()));
      for (Eigen::Index c = 0; c < net.weights[l].cols(); ++c) row[static_cast<std::size_t>(c)] = net.weights[l](r, c);
      rows.push_back(row);
    }
    weights.push_back(std::move(rows));
    biases.push_back(std::vector<double>(net.biases[l].data(), net.biases[l].data() + net.biases[l].size()));
  }
  return {{"version", 1},
          {"layer_dims", net.layer_dims},
          {"activation", to_string(net.activation)},
          {"weights", std::move(weights)},
          {"biases", std::move(biases)},
          {"meta", {{"seed", net.seed}}}};
}

ProjectionNet net_from_json(const json& j) {
  try {
    if (j.at("version").get<int>() != 1) {
      throw VersionError("unsupported checkpoint version " + j.at("version").dump());
    }
    ProjectionNet net;
    net.layer_dims = j.at("layer_dims").get<std::vector<int>>();
    net.activation = parse_activation(j.at("activation").get<std::string>());
    if (j.contains("meta") && j["meta"].contains("seed")) net.seed = j["meta"]["seed"].get<std::uint64_t>();
    const auto& weights = j.at("weights");
    const auto& biases = j.at("biases");
    if (net.layer_dims.size() < 2 || weights.size() + 1 != net.layer_dims.size() ||
        biases.size() != weights.size()) {
      throw DataError("checkpoint layer shapes are inconsistent");
    }
    for (std::size_t l = 0; l < weights.size(); ++l) {
      const int rows = net.layer_dims[l + 1];
      const int cols = net.layer_dims[l];
      if (weights[l].size() != static_cast<std::size_t>(rows)) throw DataError("checkpoint weight rows mismatch");
      Mat w(rows, cols);
      for (int r = 0; r < rows; ++r) {
        const auto row = weights[l][static_cast<std::size_t>(r)].get<std::vector<double>>();
        if (row.size() != static_cast<std::size_t>(cols)) throw DataError("checkpoint weight cols mismatch");
        for (int c = 0; c < cols; ++c) w(r, c) = row[static_cast<std::size_t>(c)];
      }
      const auto b = biases[l].get<std::vector<double>>();
      if (b.size() != static_cast<std::size_t>(rows)) throw DataError("checkpoint bias size mismatch");
      net.weights.push_back(std::move(w));
      net.biases.push_back(Eigen::Map<const Vec>(b.data(), rows));
      if (!net.weights.back().allFinite() || !net.biases.back().allFinite()) {
        throw DataError("checkpoint contains non-finite parameters");
      }
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corrupted checkpoint: ") + e.what());
  }
}

}  // namespace mgtood
