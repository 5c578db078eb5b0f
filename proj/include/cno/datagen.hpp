#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cno/grid.hpp"
#include "cno/train.hpp"
#include "json.hpp"

namespace cno::rpb {

enum class Benchmark { poisson, wave, transport_smooth, transport_discontinuous, allen_cahn, navier_stokes, darcy };
enum class Distribution { in_dist, out_dist };

std::string_view to_string(Benchmark b);
std::string_view to_string(Distribution d);
/// Throws a usage error for unknown names.
Benchmark parse_benchmark(std::string_view name);
Distribution parse_distribution(std::string_view name);  // "in" / "out" or the full names

inline constexpr std::string_view kGeneratorVersion = "rpb-1";
inline constexpr int kDatasetVersion = 1;

struct Splits {
  std::size_t train = 0, val = 0, test = 0;
  std::size_t total() const { return train + val + test; }
  bool operator==(const Splits&) const = default;
};

struct BenchmarkSpec {
  Benchmark benchmark = Benchmark::poisson;
  Distribution distribution = Distribution::in_dist;
  Splits splits;
  int resolution = 64;
  std::uint64_t seed = 0;
  /// Overrides of the per-benchmark defaults (see default_params).
  nlohmann::json params = nlohmann::json::object();
  bool normalize = true;

  std::size_t n_samples() const { return splits.total(); }
  /// Defaults merged with `params`; unknown keys are a config error.
  nlohmann::json effective_params() const;
};

void to_json(nlohmann::json& j, const BenchmarkSpec& s);
void from_json(const nlohmann::json& j, BenchmarkSpec& s);

/// Per-benchmark parameters for the given distribution.
nlohmann::json default_params(Benchmark b, Distribution d);

/// Scalar min/max affine maps to [0, 1], computed on a training split.
struct Normalization {
  double in_min = 0.0, in_max = 1.0, out_min = 0.0, out_max = 1.0;

  float input(double v) const { return static_cast<float>((v - in_min) / (in_max - in_min)); }
  float output(double v) const { return static_cast<float>((v - out_min) / (out_max - out_min)); }
  double output_inverse(double v) const { return out_min + v * (out_max - out_min); }
  bool operator==(const Normalization&) const = default;
};

void to_json(nlohmann::json& j, const Normalization& n);
void from_json(const nlohmann::json& j, Normalization& n);

enum class Split { train, val, test, all };

struct Dataset {
  BenchmarkSpec spec;
  Tensor<float> inputs;   // raw values, (n, c_in, s, s)
  Tensor<float> outputs;  // raw values, (n, c_out, s, s)
  std::optional<Normalization> normalization;
  std::string generator_version{kGeneratorVersion};

  int resolution() const { return static_cast<int>(inputs.shape().h); }
  std::size_t size() const { return inputs.shape().n; }
  /// Samples of one split, normalized with `norm` (or the dataset's own
  /// constants when not given). Datasets flagged unnormalized return raw values.
  Samples samples(Split which, const std::optional<Normalization>& norm = std::nullopt) const;
  /// Raw rows of one split.
  std::pair<std::size_t, std::size_t> range(Split which) const;
};

/// Both fields of one sample in float64, each (1, c, s, s). The sample RNG is
/// derived from (seed, benchmark, distribution, index) only.
std::pair<GridFunction, GridFunction> generate_sample(const BenchmarkSpec& spec, std::size_t index);

/// All samples in index order. `threads` > 1 generates concurrently; the
/// result does not depend on it.
Dataset generate(const BenchmarkSpec& spec, int threads = 1);

/// Min/max over the train rows of the raw tensors.
Normalization compute_normalization(const Tensor<float>& inputs, const Tensor<float>& outputs, std::size_t train_rows);

void write_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);
/// FNV-1a 64 of the dataset payload.
std::uint64_t dataset_hash(const Dataset& ds);

// Solvers exposed for oracle tests.

struct AllenCahnParams {
  double epsilon = 220.0;
  double final_time = 2e-4;
  double dt = 5.47e-7;
  bool periodic = false;  // zero ghost cells when false
};
/// Explicit update as printed (Δt/Δx diffusion prefactor). The step count is
/// ceil(T/dt) with a uniform step landing on T. Throws a parameter error when
/// dt ≥ Δx²/(2ε).
GridFunction allen_cahn_evolve(const GridFunction& u0, const AllenCahnParams& p);

struct NavierStokesParams {
  int modes = 128;          // N, grid side of the solver
  double viscosity = 0.05;  // ε_N·N
  double theta = 0.4;
  double final_time = 1.0;
  double cfl = 0.4;
};
struct NavierStokesTrace {
  std::vector<double> divergence;  // max_k |k·û_k| / max_k |û_k| after every step
  int steps = 0;
};
/// Spectral-viscosity SSPRK3 evolution of a 2-channel velocity on the N² grid.
/// The initial field is Leray-projected first.
GridFunction navier_stokes_evolve(const GridFunction& u0, const NavierStokesParams& p, NavierStokesTrace* trace = nullptr);
GridFunction leray_project(const GridFunction& u);

struct DarcySolve {
  GridFunction u;
  int iterations = 0;
  double relative_residual = 0.0;
};
/// −∇·(a∇u) = 1 with u = 0 on the boundary. Nodes are x_i = i/s; row and
/// column 0 (and the implied row s) are boundary nodes.
DarcySolve solve_darcy(const GridFunction& a, double tolerance = 1e-10);
/// Periodic zero-mean Gaussian field with covariance σ²·exp(−|x−y|²/l²).
GridFunction sample_gaussian_field(int s, double sigma2, double length, std::uint64_t seed);

}  // namespace cno::rpb
