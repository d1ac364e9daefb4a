#pragma once

// Trainable-prototype attention MIL network.
//
// Per bag with instance features X (M x D):
//   h      = act(X H + h_b)                                  projector
//   a      = softmax_j( w . (tanh(h_j V) * sigm(h_j U)) )    gated attention
//   b      = sum_j a_j h_j,  logits = b C + c_b              bag classifier, CE loss
//   d[j,c] = ||h_j - p_c||,  z_j = softmax(-d_j / tau)       prototype logits
//   y_j    = a_norm_j on the bag class, 1 - a_norm_j on NEG  soft pseudo labels
//   kld    = mean_j KL(y_j || z_j),  total = ce + lambda * kld
//
// Prototype rows are ordered p_1..p_K then the negative prototype p_n.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "tpmil/numerics.hpp"

namespace tpmil {

enum class Activation : std::uint8_t { kNone = 0, kRelu = 1 };
enum class AttentionNorm : std::uint8_t { kMinMax = 0, kSoftmaxRaw = 1 };

std::string_view to_string(Activation a);
std::string_view to_string(AttentionNorm n);
Activation parse_activation(std::string_view s);
AttentionNorm parse_attention_norm(std::string_view s);

struct ModelConfig {
  std::size_t num_classes = 2;    // K
  std::size_t feature_dim = 1024; // D
  std::size_t hidden_dim = 512;   // L
  std::size_t attention_dim = 256;// A
  double tau = 1.0;
  double lambda = 1.0;
  AttentionNorm norm = AttentionNorm::kMinMax;
  Activation activation = Activation::kRelu;
  bool prototype_module = true;

  std::size_t num_prototypes() const { return num_classes + 1; }
  std::size_t negative_index() const { return num_classes; }
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline constexpr std::size_t kNumTensors = 8;

/// All trainable tensors. Gradients use the same type.
struct ModelParams {
  Matrix projector_w;   // D x L
  Matrix projector_b;   // 1 x L
  Matrix attn_v;        // L x A (tanh branch)
  Matrix attn_u;        // L x A (sigmoid gate)
  Matrix attn_w;        // 1 x A
  Matrix classifier_w;  // L x K
  Matrix classifier_b;  // 1 x K
  Matrix prototypes;    // (K+1) x L

  static ModelParams zeros(const ModelConfig& config);
  /// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0, prototypes ~ U(-1/sqrt(L), 1/sqrt(L)).
  static ModelParams initialize(const ModelConfig& config, std::uint64_t seed);

  static const std::array<std::string_view, kNumTensors>& tensor_names();
  std::array<Matrix*, kNumTensors> tensors();
  std::array<const Matrix*, kNumTensors> tensors() const;

  /// Throws InvalidInput when any tensor shape disagrees with `config`.
  void check_shapes(const ModelConfig& config) const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

struct Model {
  ModelConfig config;
  ModelParams params;
  friend bool operator==(const Model&, const Model&) = default;
};

/// Per-bag activations kept for backward and interpretability. The prototype
/// fields are empty when the prototype module is disabled.
struct ForwardTrace {
  Matrix pre;          // M x L projector pre-activation
  Matrix h;            // M x L
  Matrix gate_tanh;    // M x A
  Matrix gate_sigm;    // M x A
  Vector attn_logits;  // M
  Vector a;            // M
  Vector b;            // L
  Vector bag_logits;   // K
  Vector bag_probs;    // K
  Matrix dist;         // M x (K+1)
  Matrix z;            // M x (K+1)
  Matrix y;            // M x (K+1)
  Vector a_norm;       // M
  bool prototype_module = false;

  std::size_t predicted_class() const { return argmax(bag_logits); }
};

struct LossBreakdown {
  double ce = 0.0;
  double kld = 0.0;
  double total = 0.0;
  double lambda = 0.0;
};

struct ForwardResult {
  ForwardTrace trace;
  LossBreakdown loss;
};

Matrix project(const ModelParams& params, const Matrix& features, Activation activation = Activation::kRelu);
Vector attention_scores(const ModelParams& params, const Matrix& h);

struct BagOutput {
  Vector b;
  Vector bag_logits;
};
BagOutput aggregate_and_classify(const ModelParams& params, const Matrix& h, std::span<const double> a);

double cross_entropy(std::span<const double> bag_logits, std::size_t label);

Matrix prototype_distances(const ModelParams& params, const Matrix& h);
Vector prototype_logits(std::span<const double> d_row, double tau = 1.0);
/// Row of K+1 entries: a_norm on `bag_label`, 1 - a_norm on the negative slot.
Vector soft_pseudo_labels(double a_norm, std::size_t bag_label, std::size_t num_classes);
/// Attention rescaled for pseudo labels. Min-max maps a flat bag (incl. M=1) to all ones.
Vector normalize_attention(std::span<const double> a, AttentionNorm mode);

inline constexpr double kKldEpsilon = 1e-12;
double kld_loss(const Matrix& y, const Matrix& z);

/// Full forward pass. `frozen_a_norm`, when given, replaces the attention
/// derived pseudo-label weights; the gradient check uses it to hold the
/// (detached) pseudo labels fixed while probing parameters.
ForwardResult forward(const ModelParams& params, const Matrix& features, std::size_t bag_label,
                      const ModelConfig& config,
                      std::optional<std::span<const double>> frozen_a_norm = std::nullopt);

struct BackwardResult {
  ModelParams grads;
  LossBreakdown loss;
};

/// Gradients of `total` w.r.t. every tensor. Pseudo-label weights a_norm are
/// treated as constants, so the KLD term reaches h only via the distances.
BackwardResult backward(const ModelParams& params, const Matrix& features, std::size_t bag_label,
                        const ModelConfig& config);

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
};

/// Random small model and bag under `seed`, analytic gradients checked by
/// central finite differences with the pseudo labels frozen.
GradCheckReport gradient_check(const ModelConfig& config, std::size_t num_instances,
                               std::uint64_t seed, double eps = 1e-5);

}  // namespace tpmil
