#pragma once

#include <optional>
#include <random>
#include <variant>

#include "isdet/tensor.hpp"

namespace isdet {

struct ConvSpec {
  int64_t in_channels = 0;
  int64_t out_channels = 0;
  int64_t kernel = 1;
  int64_t stride = 1;
  int64_t padding = 0;
  bool bias = true;

  static ConvSpec same(int64_t cin, int64_t cout, int64_t k, int64_t stride = 1,
                       bool bias = true) {
    return ConvSpec{cin, cout, k, stride, (k - 1) / 2, bias};
  }
};

/// Cross-correlation (deep-learning convention, no kernel flip).
/// x: B×Cin×H×W, weight: Cout×Cin×k×k, bias: Cout or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvSpec& spec);

/// Per-(sample, channel) normalization with population variance; statistics
/// never cross the batch axis.
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                        std::vector<double>* batch_mean_out = nullptr,
                        std::vector<double>* batch_var_out = nullptr);

Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const std::vector<double>& running_mean,
                       const std::vector<double>& running_var, double eps);

Tensor silu(const Tensor& x);

/// Shift-by-max stabilized softmax along the trailing axis.
Tensor softmax_last(const Tensor& x);

// --- stateful layer wrappers ---------------------------------------------

enum class NormKind { batch, instance };
enum class Mode { train, eval };

class Conv2d {
 public:
  Conv2d(ConvSpec spec, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;
  std::vector<Tensor> parameters() const;

  ConvSpec spec;
  Tensor weight;  // Cout×Cin×k×k
  Tensor bias;    // Cout, undefined when spec.bias is false
};

class InstanceNorm {
 public:
  explicit InstanceNorm(int64_t channels, double eps = 1e-5);
  Tensor forward(const Tensor& x) const;
  std::vector<Tensor> parameters() const;

  int64_t channels;
  double eps;
  Tensor gamma, beta;
};

/// Train-mode outputs depend on the whole batch (not batch-decomposable);
/// eval mode normalizes with running statistics only.
class BatchNorm {
 public:
  explicit BatchNorm(int64_t channels, double eps = 1e-5, double momentum = 0.03);
  Tensor forward(const Tensor& x);  // train mode updates running statistics
  std::vector<Tensor> parameters() const;

  int64_t channels;
  double eps;
  double momentum;
  Mode mode = Mode::train;
  Tensor gamma, beta;
  std::vector<double> running_mean, running_var;
};

/// Conv → norm → SiLU. The conv is bias-free: the norm's shift absorbs it.
class ConvNormAct {
 public:
  ConvNormAct(int64_t cin, int64_t cout, int64_t kernel, int64_t stride, NormKind kind,
              std::mt19937_64& rng);
  Tensor forward(const Tensor& x);
  std::vector<Tensor> parameters() const;
  void set_mode(Mode mode);

  Conv2d conv;
  std::variant<BatchNorm, InstanceNorm> norm;
};

// He-style uniform initialization over fan-in.
Tensor conv_weight_init(int64_t cout, int64_t cin, int64_t kernel, std::mt19937_64& rng);
Tensor conv_bias_init(int64_t cout, int64_t cin, int64_t kernel, std::mt19937_64& rng);

}  // namespace isdet
