#include "cno/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "cno/metrics.hpp"

namespace cno {

namespace {

template <class V>
void read_list(const nlohmann::json& j, const char* key, std::vector<V>& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  out = v.is_array() ? v.get<std::vector<V>>() : std::vector<V>{v.get<V>()};
}

std::mt19937_64 stream(std::uint64_t seed, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag};
  return std::mt19937_64(seq);
}

constexpr std::uint32_t kShuffleStream = 1;
constexpr std::uint32_t kSearchStream = 2;

using State = std::vector<Tensor<float>>;

State snapshot(CnoModel& model) {
  State s;
  for (auto& [name, t] : model.state()) s.push_back(*t);
  return s;
}

void restore(CnoModel& model, const State& s) {
  auto state = model.state();
  for (std::size_t k = 0; k < state.size(); ++k) *state[k].second = s[k];
}

}  // namespace

void TrainConfig::validate() const {
  require(lr > 0.0 && std::isfinite(lr), ErrorKind::config, "lr must be positive");
  require(lr_decay > 0.0 && lr_decay <= 1.0, ErrorKind::config, "lr_decay must lie in (0, 1]");
  require(weight_decay >= 0.0, ErrorKind::config, "weight_decay must be non-negative");
  require(batch_size >= 1, ErrorKind::config, "batch_size must be at least 1");
  require(max_epochs >= 1, ErrorKind::config, "max_epochs must be at least 1");
  require(patience >= 1, ErrorKind::config, "patience must be at least 1");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorKind::config, "Adam betas must lie in [0, 1)");
  require(eps > 0.0, ErrorKind::config, "Adam eps must be positive");
}

double TrainConfig::lr_at(int epoch) const { return lr * std::pow(lr_decay, epoch); }

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lr", c.lr},
       {"lr_decay", c.lr_decay},
       {"weight_decay", c.weight_decay},
       {"batch_size", c.batch_size},
       {"max_epochs", c.max_epochs},
       {"patience", c.patience},
       {"seed", c.seed},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"eps", c.eps}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.lr = j.value("lr", d.lr);
  c.lr_decay = j.value("lr_decay", d.lr_decay);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.max_epochs = j.value("max_epochs", d.max_epochs);
  c.patience = j.value("patience", d.patience);
  c.seed = j.value("seed", d.seed);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.eps = j.value("eps", d.eps);
}

template <class T>
void adam_step(const std::vector<Parameter<T>*>& params, AdamState& state, const TrainConfig& config, int epoch) {
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->value.size(), 0.0);
      state.v.emplace_back(p->value.size(), 0.0);
    }
  }
  require(state.m.size() == params.size(), ErrorKind::usage, "adam: state does not match the parameter registry");
  for (const auto* p : params)
    for (T g : p->grad.span())
      require(std::isfinite(static_cast<double>(g)), ErrorKind::numeric, "non-finite gradient in " + p->name);

  ++state.step;
  const double lr = config.lr_at(epoch);
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = *params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double theta = p.value[k];
      const double g = static_cast<double>(p.grad[k]) + config.weight_decay * theta;
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g;
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g * g;
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p.value[k] = static_cast<T>(theta - lr * mhat / (std::sqrt(vhat) + config.eps));
    }
  }
}

template void adam_step<float>(const std::vector<Parameter<float>*>&, AdamState&, const TrainConfig&, int);
template void adam_step<double>(const std::vector<Parameter<double>*>&, AdamState&, const TrainConfig&, int);

Samples Samples::subset(std::size_t begin, std::size_t count) const {
  require(begin + count <= size(), ErrorKind::parameter, "sample range out of bounds");
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), begin);
  return gather(idx);
}

Samples Samples::gather(const std::vector<std::size_t>& idx) const {
  const auto pick = [&](const Tensor<float>& t) {
    Shape s = t.shape();
    const std::size_t len = s.c * s.plane();
    s.n = idx.size();
    Tensor<float> out(s);
    for (std::size_t k = 0; k < idx.size(); ++k) std::memcpy(out.sample(k), t.sample(idx[k]), len * sizeof(float));
    return out;
  };
  return {pick(inputs), pick(outputs)};
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = {{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_err", r.val_err}, {"lr", r.lr}, {"seconds", r.seconds}};
}

void to_json(nlohmann::json& j, const TrainReport& r) {
  j = {{"epochs", r.epochs},
       {"best_epoch", r.best_epoch},
       {"best_val_err", r.best_val_err},
       {"stop_reason", r.stop_reason},
       {"diagnostics", r.diagnostics},
       {"checkpoint", r.checkpoint ? nlohmann::json(r.checkpoint->string()) : nlohmann::json(nullptr)}};
}

double validation_error(const CnoModel& model, const Samples& data, int batch_size) {
  require(data.size() > 0, ErrorKind::parameter, "validation set is empty");
  std::vector<double> errs;
  for (std::size_t b = 0; b < data.size(); b += static_cast<std::size_t>(batch_size)) {
    const Samples part = data.subset(b, std::min<std::size_t>(batch_size, data.size() - b));
    const auto e = per_sample_relative_l1(model.predict(part.inputs), part.outputs);
    errs.insert(errs.end(), e.begin(), e.end());
  }
  return median(std::move(errs));
}

TrainReport train(CnoModel& model, const Samples& train_set, const Samples& val_set, const TrainConfig& config,
                  const TrainOptions& options) {
  config.validate();
  require(train_set.size() > 0, ErrorKind::parameter, "training split is empty");
  require(val_set.size() > 0, ErrorKind::parameter, "validation split is empty");
  require(train_set.inputs.shape().n == train_set.outputs.shape().n && val_set.inputs.shape().n == val_set.outputs.shape().n,
          ErrorKind::shape, "input and output sample counts differ");

  std::ofstream trace;
  if (options.trace) {
    trace.open(*options.trace, std::ios::trunc);
    require(static_cast<bool>(trace), ErrorKind::io, "cannot open " + options.trace->string());
    const nlohmann::json header = {{"model", model.config()},
                                   {"train", config},
                                   {"train_samples", train_set.size()},
                                   {"val_samples", val_set.size()}};
    trace << header.dump() << '\n' << std::flush;
  }

  TrainReport report;
  report.best_val_err = std::numeric_limits<double>::infinity();
  auto params = model.parameters();
  AdamState adam;
  std::mt19937_64 rng = stream(config.seed, kShuffleStream);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  State best = snapshot(model);

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    bool diverged = false;
    for (std::size_t b = 0; b < order.size() && !diverged; b += static_cast<std::size_t>(config.batch_size)) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + config.batch_size)));
      const Samples batch = train_set.gather(idx);
      model.zero_grad();
      ad::Tape<float> tape;
      const auto loss = ad::l1_loss(tape, model.forward(tape, tape.constant(batch.inputs), true), tape.constant(batch.outputs));
      const double l = loss->value[0];
      if (!std::isfinite(l)) {
        report.diagnostics = "non-finite training loss at epoch " + std::to_string(epoch);
        diverged = true;
        break;
      }
      tape.backward(loss);
      try {
        adam_step(params, adam, config, epoch);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::numeric) throw;
        report.diagnostics = std::string(e.what()) + " at epoch " + std::to_string(epoch);
        diverged = true;
      }
      loss_sum += l * static_cast<double>(idx.size());
    }
    if (diverged) {
      report.stop_reason = "diverged";
      break;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.lr = config.lr_at(epoch);
    rec.val_err = validation_error(model, val_set, config.batch_size);
    if (options.validation_override) rec.val_err = options.validation_override(epoch, rec.val_err);
    if (options.record_seconds) rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.epochs.push_back(rec);
    if (trace.is_open()) {
      trace << nlohmann::json(rec).dump() << '\n' << std::flush;
    }
    if (options.on_epoch) options.on_epoch(rec);

    if (rec.val_err < report.best_val_err) {
      report.best_val_err = rec.val_err;
      report.best_epoch = epoch;
      best = snapshot(model);
    }
    if (epoch - report.best_epoch >= config.patience) {
      report.stop_reason = "patience";
      break;
    }
  }
  if (report.stop_reason.empty()) report.stop_reason = "max_epochs";

  restore(model, best);
  if (options.checkpoint) {
    save_checkpoint(model, *options.checkpoint);
    report.checkpoint = options.checkpoint;
  }
  return report;
}

void to_json(nlohmann::json& j, const SearchSpace& s) {
  j = {{"lr", s.lr},
       {"lr_decay", s.lr_decay},
       {"weight_decay", s.weight_decay},
       {"depth", s.depth},
       {"lift_channels", s.lift_channels},
       {"n_res_bottleneck", s.n_res_bottleneck},
       {"n_res_intermediate", s.n_res_intermediate}};
}

void from_json(const nlohmann::json& j, SearchSpace& s) {
  read_list(j, "lr", s.lr);
  read_list(j, "lr_decay", s.lr_decay);
  read_list(j, "weight_decay", s.weight_decay);
  read_list(j, "depth", s.depth);
  read_list(j, "lift_channels", s.lift_channels);
  read_list(j, "n_res_bottleneck", s.n_res_bottleneck);
  read_list(j, "n_res_intermediate", s.n_res_intermediate);
}

void to_json(nlohmann::json& j, const Trial& t) {
  j = {{"index", t.index},  {"model", t.model},          {"train", t.train},          {"skipped", t.skipped},
       {"note", t.note},    {"best_val_err", t.skipped ? nlohmann::json(nullptr) : nlohmann::json(t.best_val_err)},
       {"best_epoch", t.best_epoch}};
}

Trial run_trial(Trial trial, const Samples& train_set, const Samples& val_set) {
  try {
    trial.model.validate();
    trial.train.validate();
  } catch (const Error& e) {
    trial.skipped = true;
    trial.note = e.what();
    return trial;
  }
  CnoModel model(trial.model, trial.train.seed);
  const TrainReport r = train(model, train_set, val_set, trial.train);
  trial.best_val_err = r.best_val_err;
  trial.best_epoch = r.best_epoch;
  trial.note = r.stop_reason;
  if (r.stop_reason == "diverged") {
    trial.best_val_err = r.best_epoch >= 0 ? r.best_val_err : std::numeric_limits<double>::infinity();
    trial.note += ": " + r.diagnostics;
  }
  return trial;
}

SearchResult random_search(const SearchSpace& space, int budget, const CnoConfig& base, const TrainConfig& base_train,
                           const Samples& train_set, const Samples& val_set, std::uint64_t seed) {
  require(budget >= 1, ErrorKind::parameter, "search budget must be at least 1");
  const std::vector<std::size_t> sizes{space.lr.size(),    space.lr_decay.size(),         space.weight_decay.size(),
                                       space.depth.size(), space.lift_channels.size(),   space.n_res_bottleneck.size(),
                                       space.n_res_intermediate.size()};
  std::size_t total = 1;
  for (std::size_t s : sizes) {
    require(s > 0, ErrorKind::config, "every search dimension needs at least one value");
    total *= s;
  }
  std::mt19937_64 rng = stream(seed, kSearchStream);
  std::vector<std::size_t> combos(total);
  std::iota(combos.begin(), combos.end(), 0);
  std::shuffle(combos.begin(), combos.end(), rng);
  combos.resize(std::min<std::size_t>(total, static_cast<std::size_t>(budget)));

  SearchResult result;
  for (std::size_t t = 0; t < combos.size(); ++t) {
    std::size_t code = combos[t];
    std::vector<std::size_t> pick(sizes.size());
    for (std::size_t d = 0; d < sizes.size(); ++d) {
      pick[d] = code % sizes[d];
      code /= sizes[d];
    }
    Trial trial;
    trial.index = static_cast<int>(t);
    trial.train = base_train;
    trial.train.lr = space.lr[pick[0]];
    trial.train.lr_decay = space.lr_decay[pick[1]];
    trial.train.weight_decay = space.weight_decay[pick[2]];
    trial.train.seed = rng();
    trial.model = base;
    trial.model.depth = space.depth[pick[3]];
    trial.model.lift_channels = space.lift_channels[pick[4]];
    trial.model.n_res_bottleneck = space.n_res_bottleneck[pick[5]];
    trial.model.n_res_intermediate = space.n_res_intermediate[pick[6]];
    result.leaderboard.push_back(run_trial(trial, train_set, val_set));
  }
  std::stable_sort(result.leaderboard.begin(), result.leaderboard.end(), [](const Trial& a, const Trial& b) {
    if (a.skipped != b.skipped) return !a.skipped;
    return a.best_val_err < b.best_val_err;
  });
  require(!result.leaderboard.front().skipped, ErrorKind::config, "every sampled configuration was infeasible");
  result.best = result.leaderboard.front();
  return result;
}

}  // namespace cno
