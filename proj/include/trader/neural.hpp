#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace trader {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class Activation { Tanh, ReLU, Sigmoid, Softmax, Identity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

/// Where backward() receives its incoming gradient: at the network output, or
/// at the last layer's pre-activation (e.g. logits, or the pre-sigmoid mean).
enum class GradientAt { Output, FinalPreActivation };

class Mlp;

/// Per-layer inputs and activations cached by one forward pass. Columns are samples.
class GradientTape {
 public:
  std::size_t batch_size() const noexcept { return batch_; }
  bool consumed() const noexcept { return consumed_; }
  const Matrix& output() const { return post_.back(); }
  const Matrix& final_preactivation() const { return pre_.back(); }

 private:
  friend class Mlp;
  std::vector<Matrix> input_;
  std::vector<Matrix> pre_;
  std::vector<Matrix> post_;
  const Mlp* owner_ = nullptr;
  std::size_t batch_ = 0;
  bool consumed_ = false;
};

struct ForwardPass {
  Vector output;
  GradientTape tape;
};

struct BatchForwardPass {
  Matrix output;
  GradientTape tape;
};

/// Fully connected network in double precision.
///
/// Parameter layout is one flat vector, layer by layer: the weight matrix
/// (out x in, row-major) followed by the bias (out). Checkpoints store exactly
/// this vector.
class Mlp {
 public:
  Mlp() = default;
  /// `sizes` has one more entry than `activations`. Softmax is only allowed last.
  Mlp(std::vector<std::size_t> sizes, std::vector<Activation> activations);

  std::size_t input_size() const { return sizes_.front(); }
  std::size_t output_size() const { return sizes_.back(); }
  std::size_t num_layers() const { return activations_.size(); }
  std::size_t parameter_count() const { return params_.size(); }
  const std::vector<std::size_t>& sizes() const noexcept { return sizes_; }
  const std::vector<Activation>& activations() const noexcept { return activations_; }

  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }
  void set_parameters(std::span<const double> values);

  /// Glorot-uniform for saturating layers, He-normal for ReLU layers; biases zero.
  void initialize(std::uint64_t seed);

  ForwardPass forward(std::span<const double> input) const;
  BatchForwardPass forward_batch(const Matrix& inputs) const;
  /// Forward without a tape.
  Vector predict(std::span<const double> input) const;
  Matrix predict_batch(const Matrix& inputs) const;

  /// Gradient of sum(output_grad .* output) with respect to the parameters.
  std::vector<double> backward(GradientTape& tape, std::span<const double> output_grad,
                               GradientAt at = GradientAt::Output) const;
  /// Batched form; adds into `grad_out` (length parameter_count()).
  void backward_batch(GradientTape& tape, const Matrix& output_grad, std::span<double> grad_out,
                      GradientAt at = GradientAt::Output) const;

  nlohmann::json to_json() const;
  static Mlp from_json(const nlohmann::json& j);

  friend bool operator==(const Mlp&, const Mlp&) = default;

 private:
  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const {
    return offsets_[layer] + sizes_[layer] * sizes_[layer + 1];
  }
  Matrix run(const Matrix& inputs, GradientTape* tape) const;

  std::vector<std::size_t> sizes_;
  std::vector<Activation> activations_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

struct AdamState {
  std::int64_t step = 0;
  std::vector<double> m;
  std::vector<double> v;
  double learning_rate = 3.0e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1.0e-8;

  AdamState() = default;
  AdamState(std::size_t n, double lr) : m(n, 0.0), v(n, 0.0), learning_rate(lr) {}
};

/// Bias-corrected Adam update in place. Throws ShapeMismatch.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state);

}  // namespace trader
