#include "trader/neural.hpp"

#include <cmath>
#include <random>

#include "trader/errors.hpp"

namespace trader {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void apply_activation(Activation a, const Matrix& z, Matrix& out) {
  switch (a) {
    case Activation::Tanh:
      out = z.array().tanh().matrix();
      break;
    case Activation::ReLU:
      out = z.cwiseMax(0.0);
      break;
    case Activation::Sigmoid:
      out = (1.0 / (1.0 + (-z.array()).exp())).matrix();
      break;
    case Activation::Softmax: {
      out.resize(z.rows(), z.cols());
      for (Eigen::Index c = 0; c < z.cols(); ++c) {
        const double m = z.col(c).maxCoeff();
        out.col(c) = (z.col(c).array() - m).exp().matrix();
        out.col(c) /= out.col(c).sum();
      }
      break;
    }
    case Activation::Identity:
      out = z;
      break;
  }
}

// dL/dZ from dL/dA.
Matrix activation_backward(Activation a, const Matrix& z, const Matrix& out, const Matrix& g) {
  switch (a) {
    case Activation::Tanh:
      return (g.array() * (1.0 - out.array().square())).matrix();
    case Activation::ReLU:
      return (g.array() * (z.array() > 0.0).cast<double>()).matrix();
    case Activation::Sigmoid:
      return (g.array() * out.array() * (1.0 - out.array())).matrix();
    case Activation::Softmax: {
      const Eigen::RowVectorXd dots = (out.array() * g.array()).colwise().sum();
      return (out.array() * (g.rowwise() - dots).array()).matrix();
    }
    case Activation::Identity:
      return g;
  }
  return g;
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Tanh:
      return "tanh";
    case Activation::ReLU:
      return "relu";
    case Activation::Sigmoid:
      return "sigmoid";
    case Activation::Softmax:
      return "softmax";
    case Activation::Identity:
      return "identity";
  }
  return "unknown";
}

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::ReLU;
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "softmax") return Activation::Softmax;
  if (name == "identity") return Activation::Identity;
  throw InvalidConfig("unknown activation '" + name + "'");
}

Mlp::Mlp(std::vector<std::size_t> sizes, std::vector<Activation> activations)
    : sizes_(std::move(sizes)), activations_(std::move(activations)) {
  if (sizes_.size() < 2 || sizes_.size() != activations_.size() + 1) {
    throw ShapeMismatch("Mlp needs one more layer size than activations");
  }
  for (std::size_t s : sizes_) {
    if (s == 0) {
      throw ShapeMismatch("Mlp layer sizes must be positive");
    }
  }
  for (std::size_t l = 0; l + 1 < activations_.size(); ++l) {
    if (activations_[l] == Activation::Softmax) {
      throw ShapeMismatch("softmax is only permitted as the final activation");
    }
  }
  std::size_t total = 0;
  for (std::size_t l = 0; l < activations_.size(); ++l) {
    offsets_.push_back(total);
    total += sizes_[l] * sizes_[l + 1] + sizes_[l + 1];
  }
  params_.assign(total, 0.0);
}

void Mlp::set_parameters(std::span<const double> values) {
  if (values.size() != params_.size()) {
    throw ShapeMismatch("parameter vector has " + std::to_string(values.size()) + " entries, expected " +
                        std::to_string(params_.size()));
  }
  std::copy(values.begin(), values.end(), params_.begin());
}

void Mlp::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < num_layers(); ++l) {
    const std::size_t fan_in = sizes_[l];
    const std::size_t fan_out = sizes_[l + 1];
    double* w = params_.data() + weight_offset(l);
    if (activations_[l] == Activation::ReLU) {
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
      for (std::size_t i = 0; i < fan_in * fan_out; ++i) w[i] = dist(rng);
    } else {
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (std::size_t i = 0; i < fan_in * fan_out; ++i) w[i] = dist(rng);
    }
    std::fill_n(params_.data() + bias_offset(l), fan_out, 0.0);
  }
}

Matrix Mlp::run(const Matrix& inputs, GradientTape* tape) const {
  if (static_cast<std::size_t>(inputs.rows()) != input_size()) {
    throw ShapeMismatch("input has " + std::to_string(inputs.rows()) + " rows, network expects " +
                        std::to_string(input_size()));
  }
  if (tape) {
    *tape = GradientTape{};
    tape->owner_ = this;
    tape->batch_ = static_cast<std::size_t>(inputs.cols());
    tape->input_.reserve(num_layers());
    tape->pre_.reserve(num_layers());
    tape->post_.reserve(num_layers());
  }
  Matrix x = inputs;
  for (std::size_t l = 0; l < num_layers(); ++l) {
    const auto in = static_cast<Eigen::Index>(sizes_[l]);
    const auto out = static_cast<Eigen::Index>(sizes_[l + 1]);
    Eigen::Map<const RowMajor> w(params_.data() + weight_offset(l), out, in);
    Eigen::Map<const Vector> b(params_.data() + bias_offset(l), out);
    Matrix z = w * x;
    z.colwise() += b;
    Matrix a;
    apply_activation(activations_[l], z, a);
    if (tape) {
      tape->input_.push_back(std::move(x));
      tape->pre_.push_back(std::move(z));
      tape->post_.push_back(a);
    }
    x = std::move(a);
  }
  return x;
}

ForwardPass Mlp::forward(std::span<const double> input) const {
  ForwardPass pass;
  Matrix x = Eigen::Map<const Vector>(input.data(), static_cast<Eigen::Index>(input.size()));
  pass.output = run(x, &pass.tape);
  return pass;
}

BatchForwardPass Mlp::forward_batch(const Matrix& inputs) const {
  BatchForwardPass pass;
  pass.output = run(inputs, &pass.tape);
  return pass;
}

Vector Mlp::predict(std::span<const double> input) const {
  Matrix x = Eigen::Map<const Vector>(input.data(), static_cast<Eigen::Index>(input.size()));
  return run(x, nullptr);
}

Matrix Mlp::predict_batch(const Matrix& inputs) const { return run(inputs, nullptr); }

std::vector<double> Mlp::backward(GradientTape& tape, std::span<const double> output_grad,
                                  GradientAt at) const {
  std::vector<double> grad(parameter_count(), 0.0);
  Matrix g = Eigen::Map<const Vector>(output_grad.data(), static_cast<Eigen::Index>(output_grad.size()));
  backward_batch(tape, g, grad, at);
  return grad;
}

void Mlp::backward_batch(GradientTape& tape, const Matrix& output_grad, std::span<double> grad_out,
                         GradientAt at) const {
  if (tape.consumed_) {
    throw TapeReuse();
  }
  if (tape.owner_ != this || tape.pre_.size() != num_layers()) {
    throw ShapeMismatch("gradient tape was not produced by this network");
  }
  if (static_cast<std::size_t>(output_grad.rows()) != output_size() ||
      static_cast<std::size_t>(output_grad.cols()) != tape.batch_) {
    throw ShapeMismatch("output gradient shape does not match the forward pass");
  }
  if (grad_out.size() != parameter_count()) {
    throw ShapeMismatch("gradient buffer has wrong length");
  }
  tape.consumed_ = true;

  Matrix g = output_grad;
  for (std::size_t l = num_layers(); l-- > 0;) {
    const auto in = static_cast<Eigen::Index>(sizes_[l]);
    const auto out = static_cast<Eigen::Index>(sizes_[l + 1]);
    Matrix dz = (l + 1 == num_layers() && at == GradientAt::FinalPreActivation)
                    ? g
                    : activation_backward(activations_[l], tape.pre_[l], tape.post_[l], g);
    Eigen::Map<RowMajor> dw(grad_out.data() + weight_offset(l), out, in);
    Eigen::Map<Vector> db(grad_out.data() + bias_offset(l), out);
    dw.noalias() += dz * tape.input_[l].transpose();
    db.noalias() += dz.rowwise().sum();
    if (l > 0) {
      Eigen::Map<const RowMajor> w(params_.data() + weight_offset(l), out, in);
      g.noalias() = w.transpose() * dz;
    }
  }
}

nlohmann::json Mlp::to_json() const {
  nlohmann::json j;
  j["sizes"] = sizes_;
  std::vector<std::string> acts;
  for (auto a : activations_) acts.push_back(to_string(a));
  j["activations"] = acts;
  j["parameters"] = params_;
  return j;
}

Mlp Mlp::from_json(const nlohmann::json& j) {
  std::vector<Activation> acts;
  for (const auto& name : j.at("activations")) acts.push_back(activation_from_string(name.get<std::string>()));
  Mlp net(j.at("sizes").get<std::vector<std::size_t>>(), std::move(acts));
  net.set_parameters(j.at("parameters").get<std::vector<double>>());
  return net;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeMismatch("adam_step: parameter, gradient and moment shapes differ");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
}

}  // namespace trader
