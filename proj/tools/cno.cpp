// Command-line front end: generate, train, search, eval, spectra, scaling.
//
// Exit codes: 0 success, 1 unexpected internal error, 2 usage error,
// 3 invalid configuration or parameter, 4 I/O error, 5 malformed file,
// 6 numerical failure (divergence, solver breakdown).

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cno/datagen.hpp"
#include "cno/eval.hpp"
#include "cno/io.hpp"
#include "cno/model.hpp"
#include "cno/train.hpp"
#include "cno/version.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cno;

namespace {

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::usage:
      return 2;
    case ErrorKind::config:
    case ErrorKind::parameter:
    case ErrorKind::shape:
      return 3;
    case ErrorKind::io:
      return 4;
    case ErrorKind::format:
      return 5;
    case ErrorKind::numeric:
      return 6;
  }
  return 1;
}

json versions() {
  return {{"cno", kVersion},
          {"generator", rpb::kGeneratorVersion},
          {"dataset_format", rpb::kDatasetVersion},
          {"checkpoint_format", kCheckpointVersion}};
}

void write_manifest(const fs::path& path, const std::vector<std::string>& argv, const std::string& command, const json& config,
                    const json& outputs) {
  io::write_json(path, {{"command", command}, {"argv", argv}, {"versions", versions()}, {"config", config}, {"outputs", outputs}});
}

json file_entry(const fs::path& p) { return {{"path", p.string()}, {"bytes", fs::file_size(p)}}; }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorKind::io, "cannot create directory " + dir.string());
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& what) {
  require(j.is_object(), ErrorKind::config, what + " must be a JSON object");
  for (const auto& [k, v] : j.items()) require(allowed.contains(k), ErrorKind::config, "unknown key '" + k + "' in " + what);
}

rpb::Split parse_split(const std::string& s) {
  if (s == "train") return rpb::Split::train;
  if (s == "val") return rpb::Split::val;
  if (s == "test") return rpb::Split::test;
  if (s == "all") return rpb::Split::all;
  throw Error(ErrorKind::usage, "unknown split '" + s + "'");
}

// Dataset named by a config: either a file ("data") or an inline spec ("dataset").
rpb::Dataset load_data(const json& cfg, const std::optional<std::string>& override_path) {
  if (override_path) return rpb::read_dataset(*override_path);
  if (cfg.contains("data")) return rpb::read_dataset(cfg.at("data").get<std::string>());
  require(cfg.contains("dataset"), ErrorKind::config, "config needs \"data\" (a dataset file) or \"dataset\" (a spec)");
  return rpb::generate(cfg.at("dataset").get<rpb::BenchmarkSpec>());
}

// Model config with channels and resolution taken from the data.
CnoConfig model_for(const json& cfg, const rpb::Dataset& ds) {
  CnoConfig m = cfg.contains("model") ? cfg.at("model").get<CnoConfig>() : CnoConfig{};
  m.in_channels = static_cast<int>(ds.inputs.shape().c);
  m.out_channels = static_cast<int>(ds.outputs.shape().c);
  m.train_resolution = ds.resolution();
  m.validate();
  return m;
}

std::optional<rpb::Normalization> norm_for(const rpb::Dataset& ds, const std::optional<std::string>& norm_from) {
  if (!ds.spec.normalize) return std::nullopt;
  if (norm_from) {
    const rpb::Dataset ref = rpb::read_dataset(*norm_from);
    require(ref.normalization.has_value(), ErrorKind::config, *norm_from + " has no normalization constants");
    return ref.normalization;
  }
  require(ds.normalization.has_value(), ErrorKind::config,
          "dataset has no training split; pass --norm-from with the training dataset");
  return ds.normalization;
}

struct Context {
  std::vector<std::string> argv;
};

int cmd_generate(const Context& ctx, const rpb::BenchmarkSpec& spec, const fs::path& out, int threads) {
  const rpb::Dataset ds = rpb::generate(spec, threads);
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  rpb::write_dataset(ds, out);
  const std::string hash = io::hex64(rpb::dataset_hash(ds));
  json outputs = {{"dataset", file_entry(out)}, {"data_hash", hash}};
  write_manifest(fs::path(out.string() + ".manifest.json"), ctx.argv, "generate", {{"spec", spec}, {"effective_params", spec.effective_params()}},
                 outputs);
  std::cout << json{{"dataset", out.string()}, {"samples", ds.size()}, {"data_hash", hash}}.dump() << '\n';
  return 0;
}

int cmd_train(const Context& ctx, const fs::path& config_path, const std::optional<std::string>& data_path,
              const std::optional<std::string>& out_override, bool timing) {
  const json cfg = io::read_json(config_path);
  check_keys(cfg, {"data", "dataset", "model", "train", "out"}, "train config");
  const rpb::Dataset ds = load_data(cfg, data_path);
  const CnoConfig mc = model_for(cfg, ds);
  const TrainConfig tc = cfg.contains("train") ? cfg.at("train").get<TrainConfig>() : TrainConfig{};
  tc.validate();
  const fs::path out = out_override ? fs::path(*out_override) : fs::path(cfg.value("out", std::string("run")));
  ensure_dir(out);

  CnoModel model(mc, tc.seed);
  TrainOptions opt;
  opt.checkpoint = out / "model.cno1";
  opt.trace = out / "trace.jsonl";
  opt.record_seconds = timing;
  opt.on_epoch = [](const EpochRecord& r) {
    std::fprintf(stderr, "epoch %4d  loss %.6f  val %.6f  lr %.3g\n", r.epoch, r.train_loss, r.val_err, r.lr);
  };
  const TrainReport rep = train(model, ds.samples(rpb::Split::train), ds.samples(rpb::Split::val), tc, opt);

  json report = rep;
  report["model_hash"] = io::hex64(model_hash(model));
  report["data_hash"] = io::hex64(rpb::dataset_hash(ds));
  if (rep.stop_reason != "diverged" && ds.spec.splits.test > 0) {
    EvalReport test = evaluate(model, ds.samples(rpb::Split::test), ds.normalization, tc.batch_size);
    test.model_hash = report["model_hash"];
    test.data_hash = report["data_hash"];
    report["test"] = test;
  }
  io::write_json(out / "report.json", report);
  json outputs = {{"trace", file_entry(out / "trace.jsonl")}, {"report", file_entry(out / "report.json")}};
  if (rep.checkpoint) outputs["checkpoint"] = file_entry(*rep.checkpoint);
  json resolved = {{"model", mc}, {"train", tc}, {"data", data_path ? json(*data_path) : cfg.value("data", json(nullptr))},
                   {"dataset", ds.spec}};
  write_manifest(out / "manifest.json", ctx.argv, "train", resolved, outputs);
  std::cout << report.dump() << '\n';
  if (rep.stop_reason == "diverged") throw Error(ErrorKind::numeric, "training diverged: " + rep.diagnostics);
  return 0;
}

int cmd_search(const Context& ctx, const fs::path& config_path, const std::optional<std::string>& data_path,
               const std::optional<std::string>& out_override) {
  const json cfg = io::read_json(config_path);
  check_keys(cfg, {"data", "dataset", "model", "train", "space", "budget", "seed", "out"}, "search config");
  const rpb::Dataset ds = load_data(cfg, data_path);
  const CnoConfig base = model_for(cfg, ds);
  const TrainConfig tc = cfg.contains("train") ? cfg.at("train").get<TrainConfig>() : TrainConfig{};
  tc.validate();
  const SearchSpace space = cfg.contains("space") ? cfg.at("space").get<SearchSpace>() : SearchSpace{};
  const int budget = cfg.value("budget", 8);
  const auto seed = cfg.value("seed", std::uint64_t{0});
  const fs::path out = out_override ? fs::path(*out_override) : fs::path(cfg.value("out", std::string("search")));
  ensure_dir(out);
  const SearchResult res = random_search(space, budget, base, tc, ds.samples(rpb::Split::train), ds.samples(rpb::Split::val), seed);
  const json board = {{"best", res.best}, {"leaderboard", res.leaderboard}};
  io::write_json(out / "leaderboard.json", board);
  write_manifest(out / "manifest.json", ctx.argv, "search",
                 {{"model", base}, {"train", tc}, {"space", space}, {"budget", budget}, {"seed", seed}, {"dataset", ds.spec}},
                 {{"leaderboard", file_entry(out / "leaderboard.json")}});
  std::cout << board.dump() << '\n';
  return 0;
}

int cmd_eval(const Context& ctx, const fs::path& ckpt, const fs::path& data, const std::optional<std::string>& split_name,
             const std::optional<std::string>& norm_from, const std::optional<std::string>& out, int batch) {
  const CnoModel model = load_checkpoint(ckpt);
  const rpb::Dataset ds = rpb::read_dataset(data);
  const rpb::Split split = split_name ? parse_split(*split_name) : (ds.spec.splits.test > 0 ? rpb::Split::test : rpb::Split::all);
  const auto norm = norm_for(ds, norm_from);
  EvalReport r = multiresolution_eval(model, ds.samples(split, norm), norm, batch);
  r.model_hash = io::hex64(model_hash(model));
  r.data_hash = io::hex64(rpb::dataset_hash(ds));
  const json j = r;
  if (out) {
    const fs::path p(*out);
    if (p.has_parent_path()) ensure_dir(p.parent_path());
    io::write_json(p, j);
    write_manifest(fs::path(p.string() + ".manifest.json"), ctx.argv, "eval",
                   {{"checkpoint", ckpt.string()}, {"data", data.string()}, {"norm_from", norm_from ? json(*norm_from) : json(nullptr)}},
                   {{"report", file_entry(p)}});
  }
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_spectra(const Context& ctx, const fs::path& ckpt, const fs::path& data, const std::optional<std::string>& split_name,
                const std::optional<std::string>& norm_from, const fs::path& out) {
  const CnoModel model = load_checkpoint(ckpt);
  const rpb::Dataset ds = rpb::read_dataset(data);
  const rpb::Split split = split_name ? parse_split(*split_name) : (ds.spec.splits.test > 0 ? rpb::Split::test : rpb::Split::all);
  const SpectraReport r = spectra_report(model, ds.samples(split, norm_for(ds, norm_from)));
  ensure_dir(out);
  write_spectrum_csv(out / "truth_spectrum.csv", r.truth);
  write_spectrum_csv(out / "prediction_spectrum.csv", r.prediction);
  write_radial_csv(out / "truth_radial.csv", r.truth_radial);
  write_radial_csv(out / "prediction_radial.csv", r.prediction_radial);
  const json summary = {{"truth_radial", r.truth_radial}, {"prediction_radial", r.prediction_radial}};
  io::write_json(out / "spectra.json", summary);
  json outputs = json::object();
  for (const char* f : {"truth_spectrum.csv", "prediction_spectrum.csv", "truth_radial.csv", "prediction_radial.csv", "spectra.json"})
    outputs[f] = file_entry(out / f);
  write_manifest(out / "manifest.json", ctx.argv, "spectra", {{"checkpoint", ckpt.string()}, {"data", data.string()}}, outputs);
  std::cout << summary.dump() << '\n';
  return 0;
}

int cmd_scaling(const Context& ctx, const std::optional<std::string>& config_path, const std::vector<std::string>& points,
                const std::optional<std::string>& out_override) {
  require(config_path.has_value() != !points.empty(), ErrorKind::usage, "scaling takes either --config or --point, not both");
  if (!points.empty()) {
    std::vector<double> n, e;
    for (const auto& p : points) {
      const auto colon = p.find(':');
      require(colon != std::string::npos, ErrorKind::usage, "--point expects N:E, got '" + p + "'");
      try {
        n.push_back(std::stod(p.substr(0, colon)));
        e.push_back(std::stod(p.substr(colon + 1)));
      } catch (const std::exception&) {
        throw Error(ErrorKind::usage, "--point expects numbers, got '" + p + "'");
      }
    }
    std::cout << json(fit_power_law(n, e)).dump() << '\n';
    return 0;
  }
  const json cfg = io::read_json(*config_path);
  check_keys(cfg, {"data", "dataset", "model", "train", "sizes", "out"}, "scaling config");
  const rpb::Dataset ds = load_data(cfg, std::nullopt);
  const CnoConfig mc = model_for(cfg, ds);
  const TrainConfig tc = cfg.contains("train") ? cfg.at("train").get<TrainConfig>() : TrainConfig{};
  tc.validate();
  require(cfg.contains("sizes"), ErrorKind::config, "scaling config needs \"sizes\"");
  const auto sizes = cfg.at("sizes").get<std::vector<std::size_t>>();
  const fs::path out = out_override ? fs::path(*out_override) : fs::path(cfg.value("out", std::string("scaling")));
  ensure_dir(out);
  const ScalingStudy st = scaling_study(sizes, mc, tc, ds.samples(rpb::Split::train), ds.samples(rpb::Split::val),
                                        ds.samples(rpb::Split::test));
  json runs = json::array();
  for (const auto& r : st.runs)
    runs.push_back({{"samples", r.samples}, {"test_median", r.test.median}, {"best_epoch", r.report.best_epoch}});
  const json result = {{"fit", st.fit}, {"runs", runs}, {"error_unit", "percent"}};
  io::write_json(out / "scaling.json", result);
  write_manifest(out / "manifest.json", ctx.argv, "scaling", {{"model", mc}, {"train", tc}, {"sizes", sizes}, {"dataset", ds.spec}},
                 {{"scaling", file_entry(out / "scaling.json")}});
  std::cout << result.dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  Context ctx;
  ctx.argv.assign(argv, argv + argc);

  CLI::App app{"Convolutional neural operator toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  // generate
  auto* gen = app.add_subcommand("generate", "Generate a benchmark dataset");
  std::string g_bench, g_dist = "in", g_out;
  std::size_t g_n = 0, g_val = 0, g_test = 0;
  int g_res = 64, g_threads = 1;
  std::uint64_t g_seed = 0;
  std::vector<std::string> g_params;
  bool g_raw = false;
  gen->add_option("--benchmark", g_bench, "poisson, wave, transport_smooth, transport_discontinuous, allen_cahn, navier_stokes, darcy")
      ->required();
  gen->add_option("--distribution,--dist", g_dist, "in or out")->capture_default_str();
  gen->add_option("--n,--train", g_n, "Training samples")->required();
  gen->add_option("--val", g_val, "Validation samples");
  gen->add_option("--test", g_test, "Test samples");
  gen->add_option("--resolution", g_res, "Grid side s")->capture_default_str();
  gen->add_option("--seed", g_seed, "Global seed")->capture_default_str();
  gen->add_option("--param", g_params, "Parameter override key=value (value is JSON)");
  gen->add_option("--threads", g_threads, "Worker threads (output does not depend on it)")->capture_default_str();
  gen->add_flag("--no-normalize", g_raw, "Mark the dataset as unnormalized");
  gen->add_option("--out", g_out, "Output file (default <benchmark>_<dist>_s<res>_seed<seed>.rpb1)");

  // train
  auto* tr = app.add_subcommand("train", "Train a model from a JSON config");
  std::string t_cfg;
  std::optional<std::string> t_data, t_out;
  bool t_no_timing = false;
  tr->add_option("--config", t_cfg, "Run config (data/dataset, model, train, out)")->required();
  tr->add_option("--data", t_data, "Dataset file, overriding the config");
  tr->add_option("--out", t_out, "Output directory, overriding the config");
  tr->add_flag("--no-timing", t_no_timing, "Record zero epoch times so traces compare bitwise");

  // search
  auto* se = app.add_subcommand("search", "Random hyperparameter search");
  std::string s_cfg;
  std::optional<std::string> s_data, s_out;
  se->add_option("--config", s_cfg, "Search config (data/dataset, model, train, space, budget, seed, out)")
      ->required();
  se->add_option("--data", s_data, "Dataset file, overriding the config");
  se->add_option("--out", s_out, "Output directory, overriding the config");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint; the report is printed as JSON");
  std::string e_ckpt, e_data;
  std::optional<std::string> e_split, e_norm, e_out;
  int e_batch = 32;
  ev->add_option("--checkpoint", e_ckpt, "Model checkpoint")->required();
  ev->add_option("--data", e_data, "Dataset file at any integer multiple or divisor of the model resolution")->required();
  ev->add_option("--split", e_split, "train, val, test or all (default: test when present)");
  ev->add_option("--norm-from", e_norm, "Dataset whose normalization constants to apply");
  ev->add_option("--out", e_out, "Also write the report to this file");
  ev->add_option("--batch", e_batch, "Evaluation batch size")->capture_default_str();

  // spectra
  auto* sp = app.add_subcommand("spectra", "Mean log-amplitude spectra of truth and prediction");
  std::string p_ckpt, p_data, p_out = "spectra";
  std::optional<std::string> p_split, p_norm;
  sp->add_option("--checkpoint", p_ckpt, "Model checkpoint")->required();
  sp->add_option("--data", p_data, "Dataset file")->required();
  sp->add_option("--split", p_split, "train, val, test or all");
  sp->add_option("--norm-from", p_norm, "Dataset whose normalization constants to apply");
  sp->add_option("--out", p_out, "Output directory")->capture_default_str();

  // scaling
  auto* sc = app.add_subcommand("scaling", "Fit E = (N0/N)^r, from points or by training at several sample counts");
  std::optional<std::string> c_cfg, c_out;
  std::vector<std::string> c_points;
  sc->add_option("--config", c_cfg, "Study config (data/dataset, model, train, sizes, out)");
  sc->add_option("--point", c_points, "N:E pair, errors in percent; repeat for each point");
  sc->add_option("--out", c_out, "Output directory, overriding the config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      rpb::BenchmarkSpec spec;
      spec.benchmark = rpb::parse_benchmark(g_bench);
      spec.distribution = rpb::parse_distribution(g_dist);
      spec.splits = {g_n, g_val, g_test};
      spec.resolution = g_res;
      spec.seed = g_seed;
      spec.normalize = !g_raw;
      for (const auto& kv : g_params) {
        const auto eq = kv.find('=');
        require(eq != std::string::npos && eq > 0, ErrorKind::usage, "--param expects key=value, got '" + kv + "'");
        const std::string value = kv.substr(eq + 1);
        spec.params[kv.substr(0, eq)] = json::accept(value) ? json::parse(value) : json(value);
      }
      const fs::path out = g_out.empty() ? fs::path(g_bench + "_" + g_dist + "_s" + std::to_string(g_res) + "_seed" +
                                                    std::to_string(g_seed) + ".rpb1")
                                         : fs::path(g_out);
      return cmd_generate(ctx, spec, out, g_threads);
    }
    if (*tr) return cmd_train(ctx, t_cfg, t_data, t_out, !t_no_timing);
    if (*se) return cmd_search(ctx, s_cfg, s_data, s_out);
    if (*ev) return cmd_eval(ctx, e_ckpt, e_data, e_split, e_norm, e_out, e_batch);
    if (*sp) return cmd_spectra(ctx, p_ckpt, p_data, p_split, p_norm, p_out);
    if (*sc) return cmd_scaling(ctx, c_cfg, c_points, c_out);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.kind()) << "]: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const json::exception& e) {
    std::cerr << "error [config]: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error [internal]: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
