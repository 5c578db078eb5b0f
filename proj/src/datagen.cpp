#include "cno/datagen.hpp"

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstring>
#include <exception>
#include <mutex>
#include <numbers>
#include <random>
#include <thread>

#include "cno/bandlimit.hpp"
#include "cno/fft.hpp"
#include "cno/io.hpp"

namespace cno::rpb {

namespace {

constexpr double kPi = std::numbers::pi;
using cplx = std::complex<double>;

constexpr std::pair<Benchmark, std::string_view> kNames[] = {
    {Benchmark::poisson, "poisson"},
    {Benchmark::wave, "wave"},
    {Benchmark::transport_smooth, "transport_smooth"},
    {Benchmark::transport_discontinuous, "transport_discontinuous"},
    {Benchmark::allen_cahn, "allen_cahn"},
    {Benchmark::navier_stokes, "navier_stokes"},
    {Benchmark::darcy, "darcy"},
};

std::mt19937_64 sample_rng(const BenchmarkSpec& spec, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed),       static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(spec.benchmark),  static_cast<std::uint32_t>(spec.distribution),
                    static_cast<std::uint32_t>(index),           static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
}

double wrap_distance(double d) { return d - std::round(d); }

// scale · Σ_{i,j=1..K} a_ij w(i,j) sin(πix) sin(πjy) on the s² grid x = i/s.
GridFunction sine_series(int s, const Eigen::MatrixXd& coeffs) {
  const int k = static_cast<int>(coeffs.rows());
  Eigen::MatrixXd basis(k, s);
  for (int i = 0; i < k; ++i)
    for (int p = 0; p < s; ++p) basis(i, p) = std::sin(kPi * (i + 1) * p / static_cast<double>(s));
  const Eigen::MatrixXd f = basis.transpose() * coeffs * basis;
  GridFunction g(1, s);
  for (int p = 0; p < s; ++p)
    for (int q = 0; q < s; ++q) g.at(0, p, q) = f(p, q);
  return g;
}

Eigen::MatrixXd random_coefficients(std::mt19937_64& rng, int k) {
  Eigen::MatrixXd a(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) a(i, j) = uniform(rng, -1.0, 1.0);
  return a;
}

// Coefficients a_ij·(i²+j²)^e·scale.
Eigen::MatrixXd weighted(const Eigen::MatrixXd& a, double exponent, double scale) {
  Eigen::MatrixXd w = a;
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) w(i, j) *= scale * std::pow((i + 1.0) * (i + 1.0) + (j + 1.0) * (j + 1.0), exponent);
  return w;
}

std::pair<GridFunction, GridFunction> poisson(const nlohmann::json& p, int s, std::mt19937_64& rng) {
  const int k = p.at("K").get<int>();
  const double r = p.at("r").get<double>();
  const Eigen::MatrixXd a = random_coefficients(rng, k);
  return {sine_series(s, weighted(a, r, kPi / (k * k))), sine_series(s, weighted(a, r - 1.0, 1.0 / (kPi * k * k)))};
}

std::pair<GridFunction, GridFunction> wave(const nlohmann::json& p, int s, std::mt19937_64& rng) {
  const int k = p.at("K").get<int>();
  const double r = p.at("r").get<double>();
  const double c = p.at("c").get<double>();
  const double t = p.at("T").get<double>();
  const Eigen::MatrixXd a = random_coefficients(rng, k);
  const Eigen::MatrixXd w = weighted(a, -r, kPi / (k * k));
  Eigen::MatrixXd wt = w;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      wt(i, j) *= std::cos(c * kPi * t * std::sqrt((i + 1.0) * (i + 1.0) + (j + 1.0) * (j + 1.0)));
  return {sine_series(s, w), sine_series(s, wt)};
}

std::pair<GridFunction, GridFunction> transport_smooth(const nlohmann::json& p, int s, std::mt19937_64& rng) {
  const double lo = p.at("center_min").get<double>(), hi = p.at("center_max").get<double>();
  const double mx = uniform(rng, lo, hi), my = uniform(rng, lo, hi);
  const double var = uniform(rng, p.at("variance_min").get<double>(), p.at("variance_max").get<double>());
  const double t = p.at("T").get<double>();
  const double sx = p.at("vx").get<double>() * t, sy = p.at("vy").get<double>() * t;
  // Density divided by its peak value, evaluated with periodic images.
  const auto bump = [&](double cx, double cy) {
    return GridFunction::sample(1, s, [&](int, double x, double y) {
      const double dx = wrap_distance(x - cx), dy = wrap_distance(y - cy);
      return std::exp(-(dx * dx + dy * dy) / (2.0 * var));
    });
  };
  return {bump(mx, my), bump(mx + sx, my + sy)};
}

GridFunction blurred_disk(int s, double cx, double cy, double radius, const nlohmann::json& p) {
  const int fine = s * p.at("raster_factor").get<int>();
  const int ss = p.at("supersample").get<int>();
  const double sigma = p.at("blur_sigma").get<double>();
  GridFunction raster(1, fine);
  const double h = 1.0 / fine;
  for (int i = 0; i < fine; ++i)
    for (int j = 0; j < fine; ++j) {
      int inside = 0;
      for (int a = 0; a < ss; ++a)
        for (int b = 0; b < ss; ++b) {
          const double x = (i - 0.5 + (a + 0.5) / ss) * h, y = (j - 0.5 + (b + 0.5) / ss) * h;
          const double dx = wrap_distance(x - cx), dy = wrap_distance(y - cy);
          inside += dx * dx + dy * dy <= radius * radius;
        }
      raster.at(0, i, j) = static_cast<double>(inside) / (ss * ss);
    }
  SpectrumGrid spec = dft(raster);
  for (int kx = 0; kx < fine; ++kx)
    for (int ky = 0; ky < fine; ++ky) {
      const double fx = fft::signed_freq(kx, fine), fy = fft::signed_freq(ky, fine);
      spec.at(0, kx, ky) *= std::exp(-2.0 * kPi * kPi * sigma * sigma * (fx * fx + fy * fy));
    }
  return spectral_resample(idft(spec), s);
}

std::pair<GridFunction, GridFunction> transport_discontinuous(const nlohmann::json& p, int s, std::mt19937_64& rng) {
  const double lo = p.at("center_min").get<double>(), hi = p.at("center_max").get<double>();
  const double cx = uniform(rng, lo, hi), cy = uniform(rng, lo, hi);
  const double radius = uniform(rng, p.at("radius_min").get<double>(), p.at("radius_max").get<double>());
  const double t = p.at("T").get<double>();
  return {blurred_disk(s, cx, cy, radius, p),
          blurred_disk(s, cx + p.at("vx").get<double>() * t, cy + p.at("vy").get<double>() * t, radius, p)};
}

std::pair<GridFunction, GridFunction> allen_cahn(const nlohmann::json& p, int s, std::mt19937_64& rng) {
  const int k = p.at("K").get<int>();
  const double r = uniform(rng, p.at("r_min").get<double>(), p.at("r_max").get<double>());
  const Eigen::MatrixXd a = random_coefficients(rng, k);
  GridFunction u0 = sine_series(s, weighted(a, -r, kPi / (k * k)));
  AllenCahnParams ap;
  ap.epsilon = p.at("epsilon").get<double>();
  ap.final_time = p.at("T").get<double>();
  ap.dt = p.at("dt").get<double>();
  GridFunction u = allen_cahn_evolve(u0, ap);
  return {std::move(u0), std::move(u)};
}

std::pair<GridFunction, GridFunction> navier_stokes(const nlohmann::json& p, int s, std::mt19937_64& rng) {
  NavierStokesParams np;
  np.modes = p.at("modes").get<int>();
  np.viscosity = p.at("viscosity").get<double>();
  np.theta = p.at("theta").get<double>();
  np.final_time = p.at("T").get<double>();
  np.cfl = p.at("cfl").get<double>();
  require(s <= np.modes && np.modes % s == 0, ErrorKind::parameter,
          "navier_stokes: resolution must divide the solver grid " + std::to_string(np.modes));
  const int n_pert = p.at("p").get<int>();
  const double delta = p.at("delta").get<double>(), rho = p.at("rho").get<double>();
  const double low = p.at("layer_low").get<double>(), high = p.at("layer_high").get<double>();
  std::vector<double> alpha(n_pert), beta(n_pert);
  for (int k = 0; k < n_pert; ++k) {
    alpha[k] = uniform(rng, 0.0, 1.0);
    beta[k] = uniform(rng, 0.0, 2.0 * kPi);
  }
  const GridFunction u0 = GridFunction::sample(2, np.modes, [&](int c, double x, double y) {
    if (c == 1) return 0.0;
    double sigma = 0.0;
    for (int k = 0; k < n_pert; ++k) sigma += alpha[k] * std::sin(2.0 * kPi * (k + 1) * x - beta[k]);
    const double yp = y + delta * sigma;
    return yp <= 0.5 ? std::tanh(2.0 * kPi * (yp - low) / rho) : std::tanh(2.0 * kPi * (high - yp) / rho);
  });
  const GridFunction projected = leray_project(u0);
  const GridFunction u = navier_stokes_evolve(projected, np);
  return {spectral_resample(projected, s), spectral_resample(u, s)};
}

std::pair<GridFunction, GridFunction> darcy(const nlohmann::json& p, int s, std::mt19937_64& rng) {
  const GridFunction g = sample_gaussian_field(s, p.at("sigma2").get<double>(), p.at("length").get<double>(), rng());
  const double pos = p.at("a_positive").get<double>(), neg = p.at("a_negative").get<double>();
  GridFunction a(1, s);
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) a.at(0, i, j) = g.at(0, i, j) > 0.0 ? pos : neg;
  DarcySolve sol = solve_darcy(a, p.at("tolerance").get<double>());
  return {std::move(a), std::move(sol.u)};
}

void put_tensor(Tensor<float>& dst, std::size_t row, const GridFunction& g) {
  const auto& v = g.tensor().vec();
  std::transform(v.begin(), v.end(), dst.plane(row, 0), [](double x) { return static_cast<float>(x); });
}

int channels_of(Benchmark b) { return b == Benchmark::navier_stokes ? 2 : 1; }

}  // namespace

std::string_view to_string(Benchmark b) {
  for (const auto& [k, name] : kNames)
    if (k == b) return name;
  return "unknown";
}

std::string_view to_string(Distribution d) { return d == Distribution::in_dist ? "in_dist" : "out_dist"; }

Benchmark parse_benchmark(std::string_view name) {
  for (const auto& [k, n] : kNames)
    if (n == name) return k;
  throw Error(ErrorKind::usage, "unknown benchmark '" + std::string(name) + "'");
}

Distribution parse_distribution(std::string_view name) {
  if (name == "in" || name == "in_dist") return Distribution::in_dist;
  if (name == "out" || name == "out_dist") return Distribution::out_dist;
  throw Error(ErrorKind::usage, "unknown distribution '" + std::string(name) + "'");
}

nlohmann::json default_params(Benchmark b, Distribution d) {
  const bool out = d == Distribution::out_dist;
  switch (b) {
    case Benchmark::poisson:
      return {{"K", out ? 20 : 16}, {"r", 0.5}};
    case Benchmark::wave:
      return {{"K", out ? 32 : 24}, {"r", out ? 0.85 : 1.0}, {"c", 0.1}, {"T", 5.0}};
    case Benchmark::transport_smooth:
      return {{"center_min", out ? 0.4 : 0.2}, {"center_max", out ? 0.6 : 0.4}, {"variance_min", 0.003},
              {"variance_max", 0.009},         {"vx", 0.2},                     {"vy", 0.2},
              {"T", 1.0}};
    case Benchmark::transport_discontinuous:
      return {{"center_min", out ? 0.4 : 0.2}, {"center_max", out ? 0.6 : 0.4}, {"radius_min", 0.1},
              {"radius_max", 0.2},             {"vx", 0.2},                     {"vy", 0.2},
              {"T", 1.0},                      {"raster_factor", 2},            {"supersample", 8},
              {"blur_sigma", 1.75 / 128.0}};
    case Benchmark::allen_cahn:
      return {{"K", out ? 16 : 24}, {"r_min", out ? 0.85 : 1.0}, {"r_max", out ? 1.15 : 1.0},
              {"epsilon", 220.0},   {"T", 2e-4},                 {"dt", 5.47e-7}};
    case Benchmark::navier_stokes:
      return {{"rho", out ? 0.09 : 0.1}, {"delta", 0.025}, {"p", 10},        {"layer_low", out ? 0.3 : 0.25},
              {"layer_high", out ? 0.7 : 0.75}, {"modes", 128}, {"viscosity", 0.05}, {"theta", 0.4},
              {"T", 1.0},                {"cfl", 0.4}};
    case Benchmark::darcy:
      return {{"sigma2", 0.1}, {"length", out ? 0.05 : 0.1}, {"a_positive", 12.0}, {"a_negative", 3.0}, {"tolerance", 1e-10}};
  }
  return nlohmann::json::object();
}

nlohmann::json BenchmarkSpec::effective_params() const {
  nlohmann::json p = default_params(benchmark, distribution);
  require(params.is_object(), ErrorKind::config, "benchmark params must be a JSON object");
  for (const auto& [key, value] : params.items()) {
    require(p.contains(key), ErrorKind::config,
            "unknown parameter '" + key + "' for benchmark " + std::string(to_string(benchmark)));
    p[key] = value;
  }
  return p;
}

void to_json(nlohmann::json& j, const BenchmarkSpec& s) {
  j = {{"benchmark", to_string(s.benchmark)},
       {"distribution", to_string(s.distribution)},
       {"splits", {{"train", s.splits.train}, {"val", s.splits.val}, {"test", s.splits.test}}},
       {"resolution", s.resolution},
       {"seed", s.seed},
       {"params", s.params},
       {"normalize", s.normalize}};
}

void from_json(const nlohmann::json& j, BenchmarkSpec& s) {
  s.benchmark = parse_benchmark(j.at("benchmark").get<std::string>());
  s.distribution = parse_distribution(j.value("distribution", std::string("in_dist")));
  if (j.contains("splits")) {
    const auto& sp = j.at("splits");
    s.splits = {sp.value("train", std::size_t{0}), sp.value("val", std::size_t{0}), sp.value("test", std::size_t{0})};
  }
  s.resolution = j.value("resolution", 64);
  s.seed = j.value("seed", std::uint64_t{0});
  s.params = j.value("params", nlohmann::json::object());
  s.normalize = j.value("normalize", true);
}

void to_json(nlohmann::json& j, const Normalization& n) {
  j = {{"in_min", n.in_min}, {"in_max", n.in_max}, {"out_min", n.out_min}, {"out_max", n.out_max}};
}

void from_json(const nlohmann::json& j, Normalization& n) {
  n.in_min = j.at("in_min").get<double>();
  n.in_max = j.at("in_max").get<double>();
  n.out_min = j.at("out_min").get<double>();
  n.out_max = j.at("out_max").get<double>();
}

std::pair<std::size_t, std::size_t> Dataset::range(Split which) const {
  const Splits& s = spec.splits;
  switch (which) {
    case Split::train:
      return {0, s.train};
    case Split::val:
      return {s.train, s.val};
    case Split::test:
      return {s.train + s.val, s.test};
    case Split::all:
      break;
  }
  return {0, size()};
}

Samples Dataset::samples(Split which, const std::optional<Normalization>& norm) const {
  const auto [begin, count] = range(which);
  Samples out = Samples{inputs, outputs}.subset(begin, count);
  if (!spec.normalize) return out;
  const std::optional<Normalization> n = norm ? norm : normalization;
  require(n.has_value(), ErrorKind::config, "dataset has no normalization constants; supply the training constants");
  for (float& v : out.inputs.vec()) v = n->input(v);
  for (float& v : out.outputs.vec()) v = n->output(v);
  return out;
}

std::pair<GridFunction, GridFunction> generate_sample(const BenchmarkSpec& spec, std::size_t index) {
  require(spec.resolution >= 4, ErrorKind::parameter, "resolution must be at least 4");
  const nlohmann::json p = spec.effective_params();
  std::mt19937_64 rng = sample_rng(spec, index);
  const int s = spec.resolution;
  try {
    switch (spec.benchmark) {
      case Benchmark::poisson:
        return poisson(p, s, rng);
      case Benchmark::wave:
        return wave(p, s, rng);
      case Benchmark::transport_smooth:
        return transport_smooth(p, s, rng);
      case Benchmark::transport_discontinuous:
        return transport_discontinuous(p, s, rng);
      case Benchmark::allen_cahn:
        return allen_cahn(p, s, rng);
      case Benchmark::navier_stokes:
        return navier_stokes(p, s, rng);
      case Benchmark::darcy:
        return darcy(p, s, rng);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, std::string("benchmark parameter of the wrong type: ") + e.what());
  } catch (const Error& e) {
    throw Error(e.kind(), std::string(to_string(spec.benchmark)) + " sample " + std::to_string(index) + ": " + e.what());
  }
  throw Error(ErrorKind::usage, "unknown benchmark");
}

Normalization compute_normalization(const Tensor<float>& inputs, const Tensor<float>& outputs, std::size_t train_rows) {
  require(train_rows > 0, ErrorKind::parameter, "normalization needs a non-empty training split");
  const auto bounds = [&](const Tensor<float>& t) {
    const std::size_t len = t.shape().c * t.shape().plane() * train_rows;
    const auto [lo, hi] = std::minmax_element(t.data(), t.data() + len);
    require(*hi > *lo, ErrorKind::numeric, "training split is constant; cannot normalize");
    return std::pair<double, double>{*lo, *hi};
  };
  const auto [imin, imax] = bounds(inputs);
  const auto [omin, omax] = bounds(outputs);
  return {imin, imax, omin, omax};
}

Dataset generate(const BenchmarkSpec& spec, int threads) {
  require(spec.n_samples() > 0, ErrorKind::parameter, "dataset must contain at least one sample");
  (void)spec.effective_params();
  const std::size_t n = spec.n_samples();
  const auto s = static_cast<std::size_t>(spec.resolution);
  const auto c = static_cast<std::size_t>(channels_of(spec.benchmark));
  Dataset ds;
  ds.spec = spec;
  ds.inputs = Tensor<float>({n, c, s, s});
  ds.outputs = Tensor<float>({n, c, s, s});

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        const auto [in, out] = generate_sample(spec, i);
        put_tensor(ds.inputs, i, in);
        put_tensor(ds.outputs, i, out);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = n;
      }
    }
  };
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  if (spec.normalize && spec.splits.train > 0) ds.normalization = compute_normalization(ds.inputs, ds.outputs, spec.splits.train);
  return ds;
}

namespace {

std::vector<std::uint8_t> payload_of(const Dataset& ds) {
  std::vector<std::uint8_t> payload;
  payload.reserve((ds.inputs.size() + ds.outputs.size()) * sizeof(float));
  io::append_f32(payload, ds.inputs.span());
  io::append_f32(payload, ds.outputs.span());
  return payload;
}

nlohmann::json shape_json(const Shape& s) { return {s.n, s.c, s.h, s.w}; }

}  // namespace

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  const nlohmann::json header = {
      {"format_version", kDatasetVersion},
      {"spec", ds.spec},
      {"n", ds.size()},
      {"s", ds.resolution()},
      {"channels_in", ds.inputs.shape().c},
      {"channels_out", ds.outputs.shape().c},
      {"normalization", ds.normalization ? nlohmann::json(*ds.normalization) : nlohmann::json(nullptr)},
      {"splits", {{"train", ds.spec.splits.train}, {"val", ds.spec.splits.val}, {"test", ds.spec.splits.test}}},
      {"seed", ds.spec.seed},
      {"generator_version", ds.generator_version},
      {"inputs_shape", shape_json(ds.inputs.shape())},
      {"outputs_shape", shape_json(ds.outputs.shape())}};
  io::write_container(path, "RPB1", header, payload_of(ds));
}

Dataset read_dataset(const std::filesystem::path& path) {
  const io::Container c = io::read_container(path, "RPB1");
  const std::string where = path.string() + ": ";
  try {
    const auto& h = c.header;
    require(h.at("format_version").get<int>() == kDatasetVersion, ErrorKind::format, where + "unsupported dataset version");
    Dataset ds;
    try {
      ds.spec = h.at("spec").get<BenchmarkSpec>();
    } catch (const Error& e) {
      throw Error(ErrorKind::format, where + "invalid spec: " + e.what());
    }
    ds.generator_version = h.at("generator_version").get<std::string>();
    if (!h.at("normalization").is_null()) ds.normalization = h.at("normalization").get<Normalization>();
    const auto shape = [&](const char* key) {
      const auto v = h.at(key).get<std::vector<std::size_t>>();
      require(v.size() == 4, ErrorKind::format, where + "bad shape for " + key);
      return Shape{v[0], v[1], v[2], v[3]};
    };
    const Shape si = shape("inputs_shape"), so = shape("outputs_shape");
    require(si.n == so.n && si.n == ds.spec.n_samples() && si.h == si.w && so.h == si.h && so.w == si.w, ErrorKind::format,
            where + "inconsistent shapes");
    require(c.payload.size() == (si.numel() + so.numel()) * sizeof(float), ErrorKind::format, where + "payload size mismatch");
    ds.inputs = Tensor<float>(si, io::read_f32(c.payload, 0, si.numel()));
    ds.outputs = Tensor<float>(so, io::read_f32(c.payload, si.numel() * sizeof(float), so.numel()));
    return ds;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, where + "malformed header: " + e.what());
  }
}

std::uint64_t dataset_hash(const Dataset& ds) { return io::fnv1a64(payload_of(ds)); }

GridFunction allen_cahn_evolve(const GridFunction& u0, const AllenCahnParams& p) {
  require(u0.channels() == 1, ErrorKind::shape, "allen_cahn: expected one channel");
  require(p.final_time > 0.0 && p.dt > 0.0, ErrorKind::parameter, "allen_cahn: time and step must be positive");
  const int s = u0.resolution();
  const double dx = 1.0 / s;
  const auto steps = static_cast<long>(std::ceil(p.final_time / p.dt - 1e-9));
  const double dt = p.final_time / static_cast<double>(steps);
  const double limit = dx * dx / (2.0 * p.epsilon);
  require(dt < limit, ErrorKind::parameter,
          "allen_cahn: step " + std::to_string(dt) + " violates the CFL bound " + std::to_string(limit));
  const double mu = dt / dx;
  const double react = dt * p.epsilon * p.epsilon;
  const int w = s + 2;  // one ghost layer on each side
  std::vector<double> u(static_cast<std::size_t>(w) * w, 0.0), next(u.size(), 0.0);
  const auto at = [w](std::vector<double>& v, int i, int j) -> double& { return v[static_cast<std::size_t>(i + 1) * w + (j + 1)]; };
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) at(u, i, j) = u0.at(0, i, j);
  for (long n = 0; n < steps; ++n) {
    if (p.periodic) {
      for (int k = 0; k < s; ++k) {
        at(u, -1, k) = at(u, s - 1, k);
        at(u, s, k) = at(u, 0, k);
        at(u, k, -1) = at(u, k, s - 1);
        at(u, k, s) = at(u, k, 0);
      }
    }
    for (int i = 0; i < s; ++i)
      for (int j = 0; j < s; ++j) {
        const double c = at(u, i, j);
        const double lap = at(u, i + 1, j) + at(u, i, j + 1) + at(u, i - 1, j) + at(u, i, j - 1) - 4.0 * c;
        at(next, i, j) = c + mu * lap - react * c * (c * c - 1.0);
      }
    std::swap(u, next);
  }
  GridFunction out(1, s);
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) out.at(0, i, j) = at(u, i, j);
  require(out.all_finite(), ErrorKind::numeric, "allen_cahn: solution became non-finite");
  return out;
}

namespace {

struct Spectral {
  int n;
  fft::Plan2d plan;
  std::vector<double> kx, ky, k2;  // integer wavenumbers per flat index
  explicit Spectral(int n_) : n(n_), plan(n_), kx(static_cast<std::size_t>(n_) * n_), ky(kx.size()), k2(kx.size()) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const std::size_t f = static_cast<std::size_t>(i) * n + j;
        kx[f] = fft::signed_freq(i, n);
        ky[f] = fft::signed_freq(j, n);
        k2[f] = kx[f] * kx[f] + ky[f] * ky[f];
      }
  }
  void project(std::vector<cplx>& u, std::vector<cplx>& v) const {
    for (std::size_t f = 0; f < u.size(); ++f) {
      if (k2[f] == 0.0) continue;
      const cplx d = (kx[f] * u[f] + ky[f] * v[f]) / k2[f];
      u[f] -= kx[f] * d;
      v[f] -= ky[f] * d;
    }
  }
};

}  // namespace

GridFunction leray_project(const GridFunction& u) {
  require(u.channels() == 2, ErrorKind::shape, "leray_project: expected a 2-channel velocity");
  const int n = u.resolution();
  Spectral sp(n);
  const std::size_t len = static_cast<std::size_t>(n) * n;
  std::vector<cplx> uh(len), vh(len), tmp(len);
  sp.plan.forward(u.channel(0), uh);
  sp.plan.forward(u.channel(1), vh);
  sp.project(uh, vh);
  GridFunction out(2, n);
  for (int c = 0; c < 2; ++c) {
    sp.plan.inverse(c == 0 ? uh : vh, tmp);
    std::transform(tmp.begin(), tmp.end(), out.channel(c).begin(), [](cplx z) { return z.real(); });
  }
  return out;
}

GridFunction navier_stokes_evolve(const GridFunction& u0, const NavierStokesParams& p, NavierStokesTrace* trace) {
  require(u0.channels() == 2, ErrorKind::shape, "navier_stokes: expected a 2-channel velocity");
  require(u0.resolution() == p.modes, ErrorKind::shape, "navier_stokes: initial field must be on the solver grid");
  require(p.theta > 0.0 && p.theta < 0.5, ErrorKind::parameter, "navier_stokes: theta must lie in (0, 1/2)");
  require(p.cfl > 0.0 && p.final_time >= 0.0, ErrorKind::parameter, "navier_stokes: bad time stepping parameters");
  const int n = p.modes;
  const std::size_t len = static_cast<std::size_t>(n) * n;
  Spectral sp(n);
  const double two_pi = 2.0 * kPi;
  const double nu = p.viscosity / n;
  const double m_n = std::sqrt(static_cast<double>(n));
  const double cut = n / 3.0;
  std::vector<double> damping(len), dealias(len);
  for (std::size_t f = 0; f < len; ++f) {
    const double k = std::sqrt(sp.k2[f]);
    const double q = k <= m_n ? 0.0 : 1.0 - std::pow(m_n / k, 1.0 / p.theta);
    damping[f] = nu * two_pi * two_pi * sp.k2[f] * q;
    dealias[f] = std::abs(sp.kx[f]) <= cut && std::abs(sp.ky[f]) <= cut ? 1.0 : 0.0;
  }

  std::vector<cplx> uh(len), vh(len);
  sp.plan.forward(u0.channel(0), uh);
  sp.plan.forward(u0.channel(1), vh);
  sp.project(uh, vh);

  std::vector<cplx> pu(len), pv(len), buu(len), buv(len), bvv(len), work(len);
  std::vector<double> ur(len), vr(len);
  double max_speed = 0.0;
  const auto to_physical = [&](const std::vector<cplx>& a, const std::vector<cplx>& b) {
    sp.plan.inverse(a, pu);
    sp.plan.inverse(b, pv);
    max_speed = 0.0;
    for (std::size_t f = 0; f < len; ++f) {
      ur[f] = pu[f].real();
      vr[f] = pv[f].real();
      max_speed = std::max({max_speed, std::abs(ur[f]), std::abs(vr[f])});
    }
  };
  const auto rhs = [&](const std::vector<cplx>& a, const std::vector<cplx>& b, std::vector<cplx>& da, std::vector<cplx>& db) {
    to_physical(a, b);
    for (std::size_t f = 0; f < len; ++f) work[f] = ur[f] * ur[f];
    sp.plan.forward(work, buu);
    for (std::size_t f = 0; f < len; ++f) work[f] = ur[f] * vr[f];
    sp.plan.forward(work, buv);
    for (std::size_t f = 0; f < len; ++f) work[f] = vr[f] * vr[f];
    sp.plan.forward(work, bvv);
    const cplx i2pi(0.0, two_pi);
    for (std::size_t f = 0; f < len; ++f) {
      da[f] = -dealias[f] * i2pi * (sp.kx[f] * buu[f] + sp.ky[f] * buv[f]);
      db[f] = -dealias[f] * i2pi * (sp.kx[f] * buv[f] + sp.ky[f] * bvv[f]);
    }
    sp.project(da, db);
    for (std::size_t f = 0; f < len; ++f) {
      da[f] -= damping[f] * a[f];
      db[f] -= damping[f] * b[f];
    }
  };
  const auto amplitude = [&] {
    double m = 0.0;
    for (std::size_t f = 0; f < len; ++f) m = std::max({m, std::abs(uh[f]), std::abs(vh[f])});
    return m;
  };
  const double initial_amp = std::max(amplitude(), 1e-300);

  std::vector<cplx> du(len), dv(len), u1(len), v1(len), u2(len), v2(len);
  double t = 0.0;
  int steps = 0;
  while (t < p.final_time) {
    rhs(uh, vh, du, dv);
    const double h = 1.0 / n;
    double dt = max_speed > 0.0 ? p.cfl * h / max_speed : p.final_time - t;
    if (t + dt >= p.final_time) dt = p.final_time - t;
    for (std::size_t f = 0; f < len; ++f) {
      u1[f] = uh[f] + dt * du[f];
      v1[f] = vh[f] + dt * dv[f];
    }
    rhs(u1, v1, du, dv);
    for (std::size_t f = 0; f < len; ++f) {
      u2[f] = 0.75 * uh[f] + 0.25 * (u1[f] + dt * du[f]);
      v2[f] = 0.75 * vh[f] + 0.25 * (v1[f] + dt * dv[f]);
    }
    rhs(u2, v2, du, dv);
    for (std::size_t f = 0; f < len; ++f) {
      uh[f] = uh[f] / 3.0 + 2.0 / 3.0 * (u2[f] + dt * du[f]);
      vh[f] = vh[f] / 3.0 + 2.0 / 3.0 * (v2[f] + dt * dv[f]);
    }
    t = (t + dt >= p.final_time) ? p.final_time : t + dt;
    ++steps;
    const double amp = amplitude();
    require(std::isfinite(amp) && amp <= 1e6 * initial_amp, ErrorKind::numeric,
            "navier_stokes: blow-up at t=" + std::to_string(t) + " (max |u_k| = " + std::to_string(amp) + ")");
    if (trace) {
      double div = 0.0;
      for (std::size_t f = 0; f < len; ++f) div = std::max(div, std::abs(sp.kx[f] * uh[f] + sp.ky[f] * vh[f]));
      trace->divergence.push_back(div / amp);
    }
  }
  if (trace) trace->steps = steps;

  GridFunction out(2, n);
  sp.plan.inverse(uh, pu);
  sp.plan.inverse(vh, pv);
  for (std::size_t f = 0; f < len; ++f) {
    out.channel(0)[f] = pu[f].real();
    out.channel(1)[f] = pv[f].real();
  }
  return out;
}

GridFunction sample_gaussian_field(int s, double sigma2, double length, std::uint64_t seed) {
  require(s >= 2 && sigma2 >= 0.0 && length > 0.0, ErrorKind::parameter, "gaussian field: bad parameters");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t len = static_cast<std::size_t>(s) * s;
  std::vector<double> noise(len);
  for (double& x : noise) x = normal(rng);
  fft::Plan2d plan(s);
  std::vector<cplx> spec(len), field(len);
  plan.forward(noise, spec);
  // Fourier coefficients of the periodized kernel on the unit torus:
  // λ_k = σ²πl²·exp(−π²l²|k|²). Unit-variance white noise has |ẑ_k|² = s² in
  // the unnormalized transform, and the inverse divides by s², hence the s.
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) {
      const double kx = fft::signed_freq(i, s), ky = fft::signed_freq(j, s);
      const double lambda = sigma2 * kPi * length * length * std::exp(-kPi * kPi * length * length * (kx * kx + ky * ky));
      spec[static_cast<std::size_t>(i) * s + j] *= std::sqrt(lambda) * s;
    }
  plan.inverse(spec, field);
  GridFunction g(1, s);
  std::transform(field.begin(), field.end(), g.channel(0).begin(), [](cplx z) { return z.real(); });
  return g;
}

DarcySolve solve_darcy(const GridFunction& a, double tolerance) {
  require(a.channels() == 1, ErrorKind::shape, "darcy: expected one coefficient channel");
  const int s = a.resolution();
  require(s >= 3, ErrorKind::parameter, "darcy: resolution too small");
  for (double v : a.channel(0)) require(v > 0.0, ErrorKind::parameter, "darcy: coefficient must be positive");
  const int m = s - 1;  // interior nodes 1..s-1 per axis
  const double h2 = 1.0 / (static_cast<double>(s) * s);
  const auto coef = [&](int i, int j) { return a.at(0, ((i % s) + s) % s, ((j % s) + s) % s); };
  const auto face = [&](int i0, int j0, int i1, int j1) {
    const double x = coef(i0, j0), y = coef(i1, j1);
    return 2.0 * x * y / (x + y);
  };
  const auto idx = [m](int i, int j) { return (i - 1) * m + (j - 1); };
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(m) * m * 5);
  for (int i = 1; i <= m; ++i)
    for (int j = 1; j <= m; ++j) {
      double diag = 0.0;
      const int nb[4][2] = {{i + 1, j}, {i - 1, j}, {i, j + 1}, {i, j - 1}};
      for (const auto& q : nb) {
        const double w = face(i, j, q[0], q[1]) / h2;
        diag += w;
        if (q[0] >= 1 && q[0] <= m && q[1] >= 1 && q[1] <= m) entries.emplace_back(idx(i, j), idx(q[0], q[1]), -w);
      }
      entries.emplace_back(idx(i, j), idx(i, j), diag);
    }
  Eigen::SparseMatrix<double> A(m * m, m * m);
  A.setFromTriplets(entries.begin(), entries.end());
  const Eigen::VectorXd b = Eigen::VectorXd::Ones(m * m);
  Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper> cg;
  cg.setTolerance(tolerance);
  cg.setMaxIterations(10 * s * s);
  cg.compute(A);
  const Eigen::VectorXd x = cg.solve(b);
  DarcySolve out;
  out.iterations = static_cast<int>(cg.iterations());
  out.relative_residual = (b - A * x).norm() / b.norm();
  require(cg.info() == Eigen::Success, ErrorKind::numeric,
          "darcy: conjugate gradients did not converge (residual " + std::to_string(out.relative_residual) + ")");
  out.u = GridFunction(1, s);
  for (int i = 1; i <= m; ++i)
    for (int j = 1; j <= m; ++j) out.u.at(0, i, j) = x[idx(i, j)];
  return out;
}

}  // namespace cno::rpb
