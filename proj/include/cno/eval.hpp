#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cno/datagen.hpp"
#include "cno/model.hpp"
#include "cno/train.hpp"
#include "json.hpp"

namespace cno {

struct HistogramBin {
  double lo = 0.0, hi = 0.0;
  std::size_t count = 0;
};

struct EvalReport {
  std::vector<double> per_sample;  // relative L1 per sample, in input order
  double median = 0.0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::vector<HistogramBin> histogram;
  int resolution = 0;
  std::string model_hash;
  std::string data_hash;
  /// Median relative L1 after mapping outputs back to physical units, when the
  /// normalization constants were supplied.
  std::optional<double> physical_median;
};

void to_json(nlohmann::json& j, const EvalReport& r);

/// Summary statistics and an equal-width histogram of `per_sample`.
EvalReport summarize(std::vector<double> per_sample, int resolution, int bins = 10);

/// Plain eval-mode forward at the model's resolution.
EvalReport evaluate(const CnoModel& model, const Samples& data, const std::optional<rpb::Normalization>& norm = std::nullopt,
                    int batch_size = 32);

/// Inputs at s' are resampled to the model grid, the model is applied and the
/// prediction is resampled back to s' before comparison with the truth at s'.
/// s' and the model resolution must be related by an integer factor (parameter
/// error otherwise). At s' = s this is bitwise equal to evaluate().
EvalReport multiresolution_eval(const CnoModel& model, const Samples& data_at_sprime,
                                const std::optional<rpb::Normalization>& norm = std::nullopt, int batch_size = 32);

struct SpectraReport {
  Tensor<double> truth;       // (1, 1, s, s) centred mean log amplitude
  Tensor<double> prediction;
  std::vector<double> truth_radial;  // ring averages for |k| = 0..s/2
  std::vector<double> prediction_radial;
};

SpectraReport spectra_report(const CnoModel& model, const Samples& data, int batch_size = 32);
/// Same report for precomputed predictions, both (n, c, s, s).
SpectraReport spectra_report(const Tensor<float>& truth, const Tensor<float>& prediction);
/// Mean of a centred spectrum over rings round(|k|) = 0..s/2.
std::vector<double> radial_profile(const Tensor<double>& centred);
/// Rows (kx, ky, log_amp) with signed wavenumbers.
void write_spectrum_csv(const std::filesystem::path& path, const Tensor<double>& centred);
/// Rows (k, log_amp).
void write_radial_csv(const std::filesystem::path& path, const std::vector<double>& profile);

/// log E = −r·(log N − log N₀) fitted by least squares. With errors in percent
/// N₀ is the sample count at which the fit reaches 1%.
struct ScalingFit {
  std::vector<double> n;
  std::vector<double> errors;
  double rate = 0.0;      // r
  double n0 = 0.0;        // N₀
  double residual = 0.0;  // RMS of the natural-log residuals
};

void to_json(nlohmann::json& j, const ScalingFit& f);

/// Needs at least 3 points with N > 0, E > 0 and two distinct N; throws a
/// parameter error otherwise, and a numeric error for a flat sequence (r = 0).
ScalingFit fit_power_law(const std::vector<double>& n, const std::vector<double>& errors);

struct ScalingRun {
  std::size_t samples = 0;
  TrainReport report;
  EvalReport test;
};

/// Trains one model per size on the first N training samples (same model and
/// shuffle seeds) and fits the test medians, in percent.
struct ScalingStudy {
  std::vector<ScalingRun> runs;
  ScalingFit fit;
};

ScalingStudy scaling_study(const std::vector<std::size_t>& sizes, const CnoConfig& model, const TrainConfig& train_config,
                           const Samples& train_set, const Samples& val_set, const Samples& test_set);

}  // namespace cno
