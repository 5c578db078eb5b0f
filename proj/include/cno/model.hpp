#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cno/autodiff.hpp"
#include "json.hpp"

namespace cno {

struct CnoConfig {
  int depth = 3;                 // M
  int lift_channels = 16;        // d_e
  int n_res_bottleneck = 4;      // N_res,b
  int n_res_intermediate = 1;    // N_res,i
  int in_channels = 1;
  int out_channels = 1;
  int train_resolution = 64;
  double leaky_slope = 0.01;
  int sigma_factor = 2;          // N_σ
  FilterSpec filter;
  Boundary boundary = Boundary::periodic;
  ResampleKind resample_kind = ResampleKind::windowed;

  /// Throws a config error describing the first violated constraint.
  void validate() const;
  /// Channel width at encoder level l (0 is the lifted width d_e/2).
  int encoder_width(int level) const;
};

void to_json(nlohmann::json& j, const CnoConfig& c);
void from_json(const nlohmann::json& j, CnoConfig& c);
void to_json(nlohmann::json& j, const FilterSpec& f);
void from_json(const nlohmann::json& j, FilterSpec& f);

namespace blocks {

/// A 3×3 convolution optionally followed by batch norm (when `norm` is set).
template <class T>
struct ConvUnit {
  ad::Var<T> weight, bias;
  ad::Var<T> gamma, beta;
  ad::BatchNormState<T>* norm = nullptr;
};

/// Σ = down(σ(up(·))) with leaky-ReLU σ.
template <class T>
struct ActivationOps {
  const ad::ResampleOp<T>* up = nullptr;
  const ad::ResampleOp<T>* down = nullptr;
  double slope = 0.01;
};

template <class T>
ad::Var<T> conv_unit(ad::Tape<T>& tape, const ad::Var<T>& x, const ConvUnit<T>& c, Boundary boundary, bool train);
template <class T>
ad::Var<T> activation_layer(ad::Tape<T>& tape, const ad::Var<T>& x, const ActivationOps<T>& act);
/// I(v) = Σ(K v)
template <class T>
ad::Var<T> invariant_block(ad::Tape<T>& tape, const ad::Var<T>& x, const ConvUnit<T>& c, const ActivationOps<T>& act,
                           Boundary boundary, bool train);
/// R(v) = v + K_b Σ(K_a v)
template <class T>
ad::Var<T> resnet_block(ad::Tape<T>& tape, const ad::Var<T>& x, const ConvUnit<T>& a, const ConvUnit<T>& b,
                        const ActivationOps<T>& act, Boundary boundary, bool train);

}  // namespace blocks

/// Convolutional neural operator: lift, a U-Net of M down/up levels with
/// ResNet skip paths and a ResNet bottleneck, then projection. T is float for
/// training; double is used for gradient checks.
template <class T>
class BasicCnoModel {
 public:
  BasicCnoModel(const CnoConfig& config, std::uint64_t seed);
  BasicCnoModel(const BasicCnoModel&) = delete;
  BasicCnoModel& operator=(const BasicCnoModel&) = delete;
  BasicCnoModel(BasicCnoModel&&) noexcept = default;
  BasicCnoModel& operator=(BasicCnoModel&&) noexcept = default;

  const CnoConfig& config() const { return config_; }

  /// x: (batch, in_channels, s, s) at the training resolution.
  ad::Var<T> forward(ad::Tape<T>& tape, const ad::Var<T>& x, bool train);
  /// Eval-mode forward without graph recording. Read-only on the model.
  Tensor<T> predict(const Tensor<T>& x) const;

  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  /// Every persistent tensor in registry order: parameters, then batch-norm
  /// running statistics.
  std::vector<std::pair<std::string, Tensor<T>*>> state();
  std::vector<std::pair<std::string, const Tensor<T>*>> state() const;

 private:
  struct Conv {
    std::size_t weight, bias;
    int bn = -1;  // batch-norm index, -1 for none
  };
  struct Resnet {
    Conv a, b;
  };
  struct Level {
    Conv down;
    std::vector<Resnet> skip;
  };
  struct UpLevel {
    Conv pre, post, up;
  };
  struct Norm {
    std::size_t gamma, beta;
    // Shared so const predict() can use eval-mode statistics.
    std::shared_ptr<ad::BatchNormState<T>> state;
  };
  struct Resampling {
    ad::ResampleOp<T> act_up, act_down, half, twice;
  };

  Conv make_conv(const std::string& name, int in, int out, bool with_bn, std::mt19937_64& rng);
  blocks::ConvUnit<T> unit(ad::Tape<T>& tape, const Conv& c) const;
  blocks::ActivationOps<T> act_ops(int resolution) const;
  ad::Var<T> apply_conv(ad::Tape<T>& tape, const Conv& c, const ad::Var<T>& x, bool train) const;
  ad::Var<T> invariant(ad::Tape<T>& tape, const Conv& c, const ad::Var<T>& x, bool train) const;
  ad::Var<T> resnet(ad::Tape<T>& tape, const Resnet& r, const ad::Var<T>& x, bool train) const;
  ad::Var<T> leaf(ad::Tape<T>& tape, std::size_t index) const;
  ad::Var<T> run(ad::Tape<T>& tape, const ad::Var<T>& x, bool train) const;
  const Resampling& resampling(int resolution) const;

  CnoConfig config_;
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::vector<Norm> norms_;
  std::map<int, Resampling> resampling_;
  Conv lift_{}, project_{};
  std::vector<Level> levels_;
  std::vector<Resnet> bottleneck_;
  std::vector<UpLevel> ups_;
  Conv final_{};
};

using CnoModel = BasicCnoModel<float>;

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const CnoModel& model, const std::filesystem::path& path);
/// Throws a format error on bad magic, version, truncation or checksum.
CnoModel load_checkpoint(const std::filesystem::path& path);

/// FNV-1a 64 over the checkpoint payload (parameter and statistic bytes).
std::uint64_t model_hash(const CnoModel& model);

}  // namespace cno
