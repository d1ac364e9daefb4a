#include "tpmil/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "tpmil/error.hpp"

namespace tpmil {

std::string_view to_string(Activation a) { return a == Activation::kRelu ? "relu" : "none"; }

std::string_view to_string(AttentionNorm n) {
  return n == AttentionNorm::kMinMax ? "minmax" : "softmax-raw";
}

Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "none") return Activation::kNone;
  throw InvalidInput("unknown activation '" + std::string(s) + "' (expected relu|none)");
}

AttentionNorm parse_attention_norm(std::string_view s) {
  if (s == "minmax") return AttentionNorm::kMinMax;
  if (s == "softmax-raw") return AttentionNorm::kSoftmaxRaw;
  throw InvalidInput("unknown attention normalization '" + std::string(s) +
                     "' (expected minmax|softmax-raw)");
}

void ModelConfig::validate() const {
  if (num_classes < 2) throw InvalidInput("model needs at least 2 classes");
  if (feature_dim < 1 || hidden_dim < 1 || attention_dim < 1) {
    throw InvalidInput("model dimensions must be >= 1");
  }
  if (!(tau > 0.0)) throw InvalidInput("tau must be > 0");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidInput("lambda must be finite and >= 0");
}

ModelParams ModelParams::zeros(const ModelConfig& c) {
  ModelParams p;
  p.projector_w = Matrix(c.feature_dim, c.hidden_dim);
  p.projector_b = Matrix(1, c.hidden_dim);
  p.attn_v = Matrix(c.hidden_dim, c.attention_dim);
  p.attn_u = Matrix(c.hidden_dim, c.attention_dim);
  p.attn_w = Matrix(1, c.attention_dim);
  p.classifier_w = Matrix(c.hidden_dim, c.num_classes);
  p.classifier_b = Matrix(1, c.num_classes);
  p.prototypes = Matrix(c.num_prototypes(), c.hidden_dim);
  return p;
}

ModelParams ModelParams::initialize(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  ModelParams p = zeros(c);
  Rng rng(seed);
  auto fill_uniform = [&rng](Matrix& m, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : m.values()) v = rng.uniform(-bound, bound);
  };
  fill_uniform(p.projector_w, c.feature_dim);
  fill_uniform(p.attn_v, c.hidden_dim);
  fill_uniform(p.attn_u, c.hidden_dim);
  fill_uniform(p.attn_w, c.attention_dim);
  fill_uniform(p.classifier_w, c.hidden_dim);
  fill_uniform(p.prototypes, c.hidden_dim);
  return p;
}

const std::array<std::string_view, kNumTensors>& ModelParams::tensor_names() {
  static const std::array<std::string_view, kNumTensors> names{
      "projector.weight", "projector.bias",    "attention.V",       "attention.U",
      "attention.w",      "classifier.weight", "classifier.bias",   "prototypes"};
  return names;
}

std::array<Matrix*, kNumTensors> ModelParams::tensors() {
  return {&projector_w, &projector_b, &attn_v, &attn_u, &attn_w, &classifier_w, &classifier_b, &prototypes};
}

std::array<const Matrix*, kNumTensors> ModelParams::tensors() const {
  return {&projector_w, &projector_b, &attn_v, &attn_u, &attn_w, &classifier_w, &classifier_b, &prototypes};
}

void ModelParams::check_shapes(const ModelConfig& c) const {
  const ModelParams ref = zeros(c);
  const auto mine = tensors();
  const auto theirs = ref.tensors();
  for (std::size_t i = 0; i < kNumTensors; ++i) {
    if (mine[i]->rows() != theirs[i]->rows() || mine[i]->cols() != theirs[i]->cols()) {
      throw InvalidInput("tensor " + std::string(tensor_names()[i]) + " has shape " +
                         std::to_string(mine[i]->rows()) + "x" + std::to_string(mine[i]->cols()) +
                         ", expected " + std::to_string(theirs[i]->rows()) + "x" +
                         std::to_string(theirs[i]->cols()));
    }
  }
}

namespace {

Matrix project_pre(const ModelParams& params, const Matrix& features) {
  if (features.cols() != params.projector_w.rows()) {
    throw InvalidInput("feature width " + std::to_string(features.cols()) + " != model D " +
                       std::to_string(params.projector_w.rows()));
  }
  Matrix pre = matmul(features, params.projector_w);
  add_row_bias(pre, params.projector_b.row(0));
  return pre;
}

Matrix activate(const Matrix& pre, Activation act) {
  Matrix h = pre;
  if (act == Activation::kRelu) {
    for (double& v : h.values()) v = std::max(v, 0.0);
  }
  return h;
}

struct AttentionParts {
  Matrix gate_tanh;
  Matrix gate_sigm;
  Vector logits;
};

AttentionParts attention_parts(const ModelParams& params, const Matrix& h) {
  if (h.rows() == 0) throw InvalidInput("attention over an empty bag");
  if (h.cols() != params.attn_v.rows()) throw InvalidInput("attention input width mismatch");
  AttentionParts out;
  out.gate_tanh = matmul(h, params.attn_v);
  out.gate_sigm = matmul(h, params.attn_u);
  for (double& v : out.gate_tanh.values()) v = std::tanh(v);
  for (double& v : out.gate_sigm.values()) v = sigmoid(v);
  const auto w = params.attn_w.row(0);
  out.logits.resize(h.rows());
  for (std::size_t j = 0; j < h.rows(); ++j) {
    const auto t = out.gate_tanh.row(j);
    const auto s = out.gate_sigm.row(j);
    double e = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) e += w[k] * t[k] * s[k];
    out.logits[j] = e;
  }
  return out;
}

}  // namespace

Matrix project(const ModelParams& params, const Matrix& features, Activation activation) {
  return activate(project_pre(params, features), activation);
}

Vector attention_scores(const ModelParams& params, const Matrix& h) {
  return softmax(attention_parts(params, h).logits);
}

BagOutput aggregate_and_classify(const ModelParams& params, const Matrix& h, std::span<const double> a) {
  if (a.size() != h.rows()) throw InvalidInput("attention length does not match instance count");
  if (h.cols() != params.classifier_w.rows()) throw InvalidInput("classifier input width mismatch");
  BagOutput out;
  out.b.assign(h.cols(), 0.0);
  for (std::size_t j = 0; j < h.rows(); ++j) {
    const auto hj = h.row(j);
    for (std::size_t l = 0; l < hj.size(); ++l) out.b[l] += a[j] * hj[l];
  }
  out.bag_logits.assign(params.classifier_b.row(0).begin(), params.classifier_b.row(0).end());
  for (std::size_t l = 0; l < out.b.size(); ++l) {
    const auto crow = params.classifier_w.row(l);
    for (std::size_t k = 0; k < crow.size(); ++k) out.bag_logits[k] += out.b[l] * crow[k];
  }
  return out;
}

double cross_entropy(std::span<const double> bag_logits, std::size_t label) {
  if (label >= bag_logits.size()) {
    throw InvalidInput("label " + std::to_string(label) + " out of range for " +
                       std::to_string(bag_logits.size()) + " classes");
  }
  return std::max(0.0, log_sum_exp(bag_logits) - bag_logits[label]);
}

Matrix prototype_distances(const ModelParams& params, const Matrix& h) {
  if (h.cols() != params.prototypes.cols()) throw InvalidInput("prototype width does not match embedding width");
  Matrix d(h.rows(), params.prototypes.rows());
  for (std::size_t j = 0; j < h.rows(); ++j) {
    for (std::size_t c = 0; c < params.prototypes.rows(); ++c) {
      d(j, c) = euclidean_distance(h.row(j), params.prototypes.row(c));
    }
  }
  return d;
}

Vector prototype_logits(std::span<const double> d_row, double tau) {
  if (!(tau > 0.0)) throw InvalidInput("tau must be > 0");
  Vector neg(d_row.size());
  for (std::size_t c = 0; c < d_row.size(); ++c) neg[c] = -d_row[c] / tau;
  return softmax(neg);
}

Vector soft_pseudo_labels(double a_norm, std::size_t bag_label, std::size_t num_classes) {
  if (!(a_norm >= 0.0 && a_norm <= 1.0)) {
    throw InvalidInput("normalized attention " + std::to_string(a_norm) + " outside [0, 1]");
  }
  if (bag_label >= num_classes) throw InvalidInput("bag label out of range");
  Vector y(num_classes + 1, 0.0);
  y[bag_label] = a_norm;
  y[num_classes] = 1.0 - a_norm;
  return y;
}

Vector normalize_attention(std::span<const double> a, AttentionNorm mode) {
  if (a.empty()) throw InvalidInput("empty vector");
  if (mode == AttentionNorm::kSoftmaxRaw) return Vector(a.begin(), a.end());
  const auto [lo, hi] = std::minmax_element(a.begin(), a.end());
  const double range = *hi - *lo;
  Vector out(a.size(), 1.0);
  if (range > 0.0) {
    for (std::size_t j = 0; j < a.size(); ++j) out[j] = std::clamp((a[j] - *lo) / range, 0.0, 1.0);
  }
  return out;
}

double kld_loss(const Matrix& y, const Matrix& z) {
  if (y.rows() != z.rows() || y.cols() != z.cols()) throw InvalidInput("kld_loss shape mismatch");
  if (y.rows() == 0) throw InvalidInput("kld_loss over zero instances");
  double total = 0.0;
  for (std::size_t j = 0; j < y.rows(); ++j) {
    double ysum = 0.0;
    double zsum = 0.0;
    double row = 0.0;
    for (std::size_t c = 0; c < y.cols(); ++c) {
      const double yc = y(j, c);
      ysum += yc;
      zsum += z(j, c);
      if (yc > 0.0) row += yc * (std::log(yc) - std::log(std::max(z(j, c), kKldEpsilon)));
    }
    if (std::abs(ysum - 1.0) > 1e-6 || std::abs(zsum - 1.0) > 1e-6) {
      throw InvalidInput("kld_loss: row " + std::to_string(j) + " is not a distribution");
    }
    total += row;
  }
  // Gibbs' inequality makes every row >= 0; clamp away rounding noise.
  return std::max(0.0, total / static_cast<double>(y.rows()));
}

ForwardResult forward(const ModelParams& params, const Matrix& features, std::size_t bag_label,
                      const ModelConfig& config, std::optional<std::span<const double>> frozen_a_norm) {
  if (bag_label >= config.num_classes) throw InvalidInput("bag label out of range");
  ForwardResult out;
  ForwardTrace& t = out.trace;
  t.pre = project_pre(params, features);
  t.h = activate(t.pre, config.activation);
  auto parts = attention_parts(params, t.h);
  t.gate_tanh = std::move(parts.gate_tanh);
  t.gate_sigm = std::move(parts.gate_sigm);
  t.attn_logits = std::move(parts.logits);
  t.a = softmax(t.attn_logits);
  auto bag = aggregate_and_classify(params, t.h, t.a);
  t.b = std::move(bag.b);
  t.bag_logits = std::move(bag.bag_logits);
  t.bag_probs = softmax(t.bag_logits);

  LossBreakdown& loss = out.loss;
  loss.lambda = config.lambda;
  loss.ce = cross_entropy(t.bag_logits, bag_label);
  t.prototype_module = config.prototype_module;
  if (config.prototype_module) {
    const std::size_t m = t.h.rows();
    const std::size_t kp = config.num_prototypes();
    if (frozen_a_norm) {
      if (frozen_a_norm->size() != m) throw InvalidInput("frozen a_norm length mismatch");
      t.a_norm.assign(frozen_a_norm->begin(), frozen_a_norm->end());
    } else {
      t.a_norm = normalize_attention(t.a, config.norm);
    }
    t.dist = prototype_distances(params, t.h);
    t.z = Matrix(m, kp);
    t.y = Matrix(m, kp);
    for (std::size_t j = 0; j < m; ++j) {
      const Vector zj = prototype_logits(t.dist.row(j), config.tau);
      const Vector yj = soft_pseudo_labels(t.a_norm[j], bag_label, config.num_classes);
      std::copy(zj.begin(), zj.end(), t.z.row(j).begin());
      std::copy(yj.begin(), yj.end(), t.y.row(j).begin());
    }
    loss.kld = kld_loss(t.y, t.z);
  }
  loss.total = loss.ce + config.lambda * loss.kld;
  if (!std::isfinite(loss.total)) throw NonFiniteError("non-finite loss in forward pass");
  return out;
}

BackwardResult backward(const ModelParams& params, const Matrix& features, std::size_t bag_label,
                        const ModelConfig& config) {
  ForwardResult fwd = forward(params, features, bag_label, config);
  const ForwardTrace& t = fwd.trace;
  const std::size_t m = t.h.rows();
  const std::size_t hidden = t.h.cols();
  const std::size_t attn = t.gate_tanh.cols();
  const std::size_t k = config.num_classes;

  BackwardResult out;
  out.loss = fwd.loss;
  ModelParams& g = out.grads;
  g = ModelParams::zeros(config);

  // classifier: d ce / d logits = softmax - onehot
  Vector dlogits = t.bag_probs;
  dlogits[bag_label] -= 1.0;
  Vector db(hidden, 0.0);
  for (std::size_t l = 0; l < hidden; ++l) {
    const auto crow = params.classifier_w.row(l);
    auto grow = g.classifier_w.row(l);
    double acc = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      grow[c] = t.b[l] * dlogits[c];
      acc += crow[c] * dlogits[c];
    }
    db[l] = acc;
  }
  std::copy(dlogits.begin(), dlogits.end(), g.classifier_b.row(0).begin());

  // aggregation b = sum_j a_j h_j
  Matrix dh(m, hidden);
  Vector da(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    const auto hj = t.h.row(j);
    auto dhj = dh.row(j);
    for (std::size_t l = 0; l < hidden; ++l) dhj[l] = t.a[j] * db[l];
    da[j] = dot(hj, db);
  }

  // softmax over instances
  const double mean_da = dot(t.a, da);
  Vector de(m);
  for (std::size_t j = 0; j < m; ++j) de[j] = t.a[j] * (da[j] - mean_da);

  // gated attention branches
  const auto w = params.attn_w.row(0);
  auto gw = g.attn_w.row(0);
  Matrix dpre_v(m, attn);
  Matrix dpre_u(m, attn);
  for (std::size_t j = 0; j < m; ++j) {
    const auto tj = t.gate_tanh.row(j);
    const auto sj = t.gate_sigm.row(j);
    auto dv = dpre_v.row(j);
    auto du = dpre_u.row(j);
    for (std::size_t q = 0; q < attn; ++q) {
      gw[q] += de[j] * tj[q] * sj[q];
      const double dg = de[j] * w[q];
      dv[q] = dg * sj[q] * (1.0 - tj[q] * tj[q]);
      du[q] = dg * tj[q] * sj[q] * (1.0 - sj[q]);
    }
  }
  matmul_at_b_accumulate(t.h, dpre_v, g.attn_v);
  matmul_at_b_accumulate(t.h, dpre_u, g.attn_u);
  {
    const Matrix back_v = matmul_a_bt(dpre_v, params.attn_v);
    const Matrix back_u = matmul_a_bt(dpre_u, params.attn_u);
    auto dhv = dh.values();
    const auto bv = back_v.values();
    const auto bu = back_u.values();
    for (std::size_t i = 0; i < dhv.size(); ++i) dhv[i] += bv[i] + bu[i];
  }

  // prototype branch; a_norm is a constant here
  if (config.prototype_module && config.lambda != 0.0) {
    const std::size_t kp = config.num_prototypes();
    const double scale = config.lambda / static_cast<double>(m);
    Vector dq(kp);
    for (std::size_t j = 0; j < m; ++j) {
      const auto yj = t.y.row(j);
      const auto zj = t.z.row(j);
      double active_mass = 0.0;
      for (std::size_t c = 0; c < kp; ++c) {
        if (zj[c] > kKldEpsilon) active_mass += yj[c];
      }
      const auto hj = t.h.row(j);
      auto dhj = dh.row(j);
      for (std::size_t c = 0; c < kp; ++c) {
        dq[c] = zj[c] * active_mass - (zj[c] > kKldEpsilon ? yj[c] : 0.0);
        // q = -d / tau
        const double dd = -scale * dq[c] / config.tau;
        const double dist = t.dist(j, c);
        if (dd == 0.0 || dist == 0.0) continue;
        const auto pc = params.prototypes.row(c);
        auto gp = g.prototypes.row(c);
        const double coef = dd / dist;
        for (std::size_t l = 0; l < hidden; ++l) {
          const double diff = coef * (hj[l] - pc[l]);
          dhj[l] += diff;
          gp[l] -= diff;
        }
      }
    }
  }

  // projector
  if (config.activation == Activation::kRelu) {
    auto dhv = dh.values();
    const auto pre = t.pre.values();
    for (std::size_t i = 0; i < dhv.size(); ++i) {
      if (!(pre[i] > 0.0)) dhv[i] = 0.0;
    }
  }
  matmul_at_b_accumulate(features, dh, g.projector_w);
  auto gb = g.projector_b.row(0);
  for (std::size_t j = 0; j < m; ++j) {
    const auto dhj = dh.row(j);
    for (std::size_t l = 0; l < hidden; ++l) gb[l] += dhj[l];
  }

  const auto grads = g.tensors();
  for (std::size_t i = 0; i < kNumTensors; ++i) {
    if (!all_finite(grads[i]->values())) {
      throw NonFiniteError("non-finite gradient in " + std::string(ModelParams::tensor_names()[i]));
    }
  }
  return out;
}

GradCheckReport gradient_check(const ModelConfig& config, std::size_t num_instances,
                               std::uint64_t seed, double eps) {
  config.validate();
  if (num_instances < 1) throw InvalidInput("gradient_check needs at least one instance");
  ModelParams params = ModelParams::initialize(config, derive_seed(seed, 1));
  Rng rng(derive_seed(seed, 2));
  Matrix features(num_instances, config.feature_dim);
  for (double& v : features.values()) v = rng.normal();
  const auto label = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(config.num_classes) - 1));

  const BackwardResult analytic = backward(params, features, label, config);
  const Vector frozen = forward(params, features, label, config).trace.a_norm;
  auto loss = [&]() {
    if (config.prototype_module) {
      return forward(params, features, label, config, std::span<const double>(frozen)).loss.total;
    }
    return forward(params, features, label, config).loss.total;
  };

  std::vector<std::span<double>> blocks;
  std::vector<std::span<const double>> grads;
  const auto ptensors = params.tensors();
  const auto gtensors = analytic.grads.tensors();
  for (std::size_t i = 0; i < kNumTensors; ++i) {
    blocks.push_back(ptensors[i]->values());
    grads.push_back(gtensors[i]->values());
  }
  const FdCheckResult fd = finite_difference_check(loss, blocks, grads, eps);
  GradCheckReport report;
  report.max_relative_error = fd.max_relative_error;
  report.worst_tensor = std::string(ModelParams::tensor_names()[fd.worst_block]);
  report.worst_index = fd.worst_index;
  return report;
}

}  // namespace tpmil
