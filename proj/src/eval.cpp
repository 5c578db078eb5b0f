#include "cno/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "cno/bandlimit.hpp"
#include "cno/filters.hpp"
#include "cno/io.hpp"
#include "cno/metrics.hpp"

namespace cno {

namespace {

GridFunction to_grid(const Tensor<float>& t, std::size_t n) {
  const Shape& s = t.shape();
  Tensor<double> v(Shape{1, s.c, s.h, s.w});
  std::copy_n(t.sample(n), s.c * s.plane(), v.data());
  return GridFunction(std::move(v));
}

Tensor<float> stack(const std::vector<GridFunction>& fields) {
  const auto c = static_cast<std::size_t>(fields.front().channels());
  const auto s = static_cast<std::size_t>(fields.front().resolution());
  Tensor<float> out(Shape{fields.size(), c, s, s});
  for (std::size_t n = 0; n < fields.size(); ++n) {
    const auto& v = fields[n].tensor().vec();
    std::transform(v.begin(), v.end(), out.sample(n), [](double x) { return static_cast<float>(x); });
  }
  return out;
}

// Predictions for `data` at its own resolution, resampling through the model
// grid when the resolutions differ.
Tensor<float> predict_at(const CnoModel& model, const Tensor<float>& inputs) {
  const CnoConfig& cfg = model.config();
  const int s = cfg.train_resolution;
  const int sp = static_cast<int>(inputs.shape().h);
  if (sp == s) return model.predict(inputs);
  require(sp > 0 && (sp % s == 0 || s % sp == 0), ErrorKind::parameter,
          "multiresolution_eval: resolution " + std::to_string(sp) + " is not an integer multiple or divisor of " +
              std::to_string(s));
  std::vector<GridFunction> coarse;
  for (std::size_t n = 0; n < inputs.shape().n; ++n)
    coarse.push_back(resample_to(to_grid(inputs, n), s, cfg.resample_kind, cfg.filter));
  const Tensor<float> pred = model.predict(stack(coarse));
  std::vector<GridFunction> back;
  for (std::size_t n = 0; n < pred.shape().n; ++n) back.push_back(resample_to(to_grid(pred, n), sp, cfg.resample_kind, cfg.filter));
  return stack(back);
}

EvalReport run_eval(const CnoModel& model, const Samples& data, const std::optional<rpb::Normalization>& norm, int batch_size) {
  require(data.size() > 0, ErrorKind::parameter, "evaluation set is empty");
  require(batch_size > 0, ErrorKind::parameter, "batch size must be positive");
  require(data.inputs.shape().c == static_cast<std::size_t>(model.config().in_channels), ErrorKind::shape,
          "evaluation inputs have " + std::to_string(data.inputs.shape().c) + " channels, model expects " +
              std::to_string(model.config().in_channels));
  std::vector<double> errs, phys;
  for (std::size_t b = 0; b < data.size(); b += static_cast<std::size_t>(batch_size)) {
    const Samples part = data.subset(b, std::min<std::size_t>(batch_size, data.size() - b));
    Tensor<float> pred = predict_at(model, part.inputs);
    const auto e = per_sample_relative_l1(pred, part.outputs);
    errs.insert(errs.end(), e.begin(), e.end());
    if (norm) {
      Tensor<float> truth = part.outputs;
      for (float& v : pred.vec()) v = static_cast<float>(norm->output_inverse(v));
      for (float& v : truth.vec()) v = static_cast<float>(norm->output_inverse(v));
      const auto p = per_sample_relative_l1(pred, truth);
      phys.insert(phys.end(), p.begin(), p.end());
    }
  }
  EvalReport r = summarize(std::move(errs), static_cast<int>(data.inputs.shape().h));
  if (norm) r.physical_median = median(std::move(phys));
  return r;
}

}  // namespace

void to_json(nlohmann::json& j, const EvalReport& r) {
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& b : r.histogram) hist.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}});
  j = {{"median", r.median},         {"mean", r.mean},       {"min", r.min},
       {"max", r.max},               {"per_sample", r.per_sample}, {"histogram", hist},
       {"resolution", r.resolution}, {"model_hash", r.model_hash}, {"data_hash", r.data_hash}};
  if (r.physical_median) j["physical_median"] = *r.physical_median;
}

EvalReport summarize(std::vector<double> per_sample, int resolution, int bins) {
  require(!per_sample.empty(), ErrorKind::parameter, "no errors to summarize");
  require(bins > 0, ErrorKind::parameter, "histogram needs at least one bin");
  EvalReport r;
  r.resolution = resolution;
  r.median = median(per_sample);
  r.mean = std::accumulate(per_sample.begin(), per_sample.end(), 0.0) / static_cast<double>(per_sample.size());
  const auto [lo, hi] = std::minmax_element(per_sample.begin(), per_sample.end());
  r.min = *lo;
  r.max = *hi;
  const double width = (r.max - r.min) / bins;
  for (int b = 0; b < bins; ++b) r.histogram.push_back({r.min + b * width, b + 1 == bins ? r.max : r.min + (b + 1) * width, 0});
  for (double e : per_sample) {
    const int b = width > 0.0 ? std::min(bins - 1, static_cast<int>((e - r.min) / width)) : 0;
    ++r.histogram[b].count;
  }
  r.per_sample = std::move(per_sample);
  return r;
}

EvalReport evaluate(const CnoModel& model, const Samples& data, const std::optional<rpb::Normalization>& norm, int batch_size) {
  require(static_cast<int>(data.inputs.shape().h) == model.config().train_resolution, ErrorKind::shape,
          "evaluate: data resolution differs from the model's; use multiresolution_eval");
  return run_eval(model, data, norm, batch_size);
}

EvalReport multiresolution_eval(const CnoModel& model, const Samples& data_at_sprime, const std::optional<rpb::Normalization>& norm,
                                int batch_size) {
  return run_eval(model, data_at_sprime, norm, batch_size);
}

std::vector<double> radial_profile(const Tensor<double>& centred) {
  const int s = static_cast<int>(centred.shape().h);
  std::vector<double> sum(s / 2 + 1, 0.0);
  std::vector<int> count(sum.size(), 0);
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) {
      const int kx = i - s / 2, ky = j - s / 2;
      const auto ring = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(kx * kx + ky * ky))));
      if (ring >= sum.size()) continue;
      sum[ring] += centred(0, 0, i, j);
      ++count[ring];
    }
  for (std::size_t k = 0; k < sum.size(); ++k) sum[k] /= count[k];
  return sum;
}

SpectraReport spectra_report(const Tensor<float>& truth, const Tensor<float>& prediction) {
  require(truth.shape() == prediction.shape(), ErrorKind::shape,
          "spectra: " + truth.shape().str() + " vs " + prediction.shape().str());
  require(truth.shape().n > 0, ErrorKind::parameter, "spectra: dataset is empty");
  std::vector<GridFunction> t, p;
  for (std::size_t n = 0; n < truth.shape().n; ++n) {
    t.push_back(to_grid(truth, n));
    p.push_back(to_grid(prediction, n));
  }
  SpectraReport r;
  r.truth = log_amplitude_spectrum(t);
  r.prediction = log_amplitude_spectrum(p);
  r.truth_radial = radial_profile(r.truth);
  r.prediction_radial = radial_profile(r.prediction);
  return r;
}

SpectraReport spectra_report(const CnoModel& model, const Samples& data, int batch_size) {
  require(data.size() > 0, ErrorKind::parameter, "spectra: dataset is empty");
  Tensor<float> pred(data.outputs.shape());
  for (std::size_t b = 0; b < data.size(); b += static_cast<std::size_t>(batch_size)) {
    const Samples part = data.subset(b, std::min<std::size_t>(batch_size, data.size() - b));
    const Tensor<float> p = predict_at(model, part.inputs);
    require(p.shape().c == data.outputs.shape().c, ErrorKind::shape, "spectra: model and data output channels differ");
    std::copy(p.vec().begin(), p.vec().end(), pred.sample(b));
  }
  return spectra_report(data.outputs, pred);
}

void write_spectrum_csv(const std::filesystem::path& path, const Tensor<double>& centred) {
  std::ofstream f(path, std::ios::trunc);
  require(static_cast<bool>(f), ErrorKind::io, "cannot open " + path.string());
  const int s = static_cast<int>(centred.shape().h);
  f.precision(17);
  f << "kx,ky,log_amp\n";
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) f << i - s / 2 << ',' << j - s / 2 << ',' << centred(0, 0, i, j) << '\n';
  require(static_cast<bool>(f), ErrorKind::io, "write failed for " + path.string());
}

void write_radial_csv(const std::filesystem::path& path, const std::vector<double>& profile) {
  std::ofstream f(path, std::ios::trunc);
  require(static_cast<bool>(f), ErrorKind::io, "cannot open " + path.string());
  f.precision(17);
  f << "k,log_amp\n";
  for (std::size_t k = 0; k < profile.size(); ++k) f << k << ',' << profile[k] << '\n';
  require(static_cast<bool>(f), ErrorKind::io, "write failed for " + path.string());
}

void to_json(nlohmann::json& j, const ScalingFit& f) {
  j = {{"n", f.n}, {"errors", f.errors}, {"rate", f.rate}, {"n0", f.n0}, {"residual", f.residual}};
}

ScalingFit fit_power_law(const std::vector<double>& n, const std::vector<double>& errors) {
  require(n.size() == errors.size(), ErrorKind::parameter, "power-law fit: N and E lists differ in length");
  require(n.size() >= 3, ErrorKind::parameter, "power-law fit: need at least 3 points");
  for (std::size_t k = 0; k < n.size(); ++k)
    require(n[k] > 0.0 && errors[k] > 0.0 && std::isfinite(n[k]) && std::isfinite(errors[k]), ErrorKind::parameter,
            "power-law fit: N and E must be positive and finite");
  const auto m = static_cast<double>(n.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < n.size(); ++k) {
    mx += std::log(n[k]) / m;
    my += std::log(errors[k]) / m;
  }
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t k = 0; k < n.size(); ++k) {
    const double dx = std::log(n[k]) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(errors[k]) - my);
  }
  require(sxx > 0.0, ErrorKind::parameter, "power-law fit: all N are equal");
  const double slope = sxy / sxx;
  require(slope != 0.0, ErrorKind::numeric, "power-law fit: errors do not change with N");
  ScalingFit f;
  f.n = n;
  f.errors = errors;
  f.rate = -slope;
  const double intercept = my - slope * mx;  // = r·log N₀
  f.n0 = std::exp(intercept / f.rate);
  double ss = 0.0;
  for (std::size_t k = 0; k < n.size(); ++k) {
    const double e = std::log(errors[k]) - (intercept + slope * std::log(n[k]));
    ss += e * e;
  }
  f.residual = std::sqrt(ss / m);
  return f;
}

ScalingStudy scaling_study(const std::vector<std::size_t>& sizes, const CnoConfig& model, const TrainConfig& train_config,
                           const Samples& train_set, const Samples& val_set, const Samples& test_set) {
  require(sizes.size() >= 3, ErrorKind::parameter, "scaling study needs at least 3 sample counts");
  ScalingStudy study;
  std::vector<double> n, e;
  for (std::size_t size : sizes) {
    require(size > 0 && size <= train_set.size(), ErrorKind::parameter,
            "scaling study: " + std::to_string(size) + " exceeds the " + std::to_string(train_set.size()) + " training samples");
    CnoModel m(model, train_config.seed);
    ScalingRun run;
    run.samples = size;
    run.report = train(m, train_set.subset(0, size), val_set, train_config);
    require(run.report.stop_reason != "diverged", ErrorKind::numeric,
            "scaling study: training diverged at N=" + std::to_string(size) + ": " + run.report.diagnostics);
    run.test = evaluate(m, test_set, std::nullopt, train_config.batch_size);
    n.push_back(static_cast<double>(size));
    e.push_back(100.0 * run.test.median);
    study.runs.push_back(std::move(run));
  }
  study.fit = fit_power_law(n, e);
  return study;
}

}  // namespace cno
