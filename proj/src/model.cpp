#include "cno/model.hpp"

#include <cmath>

#include "cno/io.hpp"

namespace cno {

namespace {

std::string boundary_name(Boundary b) { return b == Boundary::periodic ? "periodic" : "zero"; }

Boundary parse_boundary(const std::string& s) {
  if (s == "periodic") return Boundary::periodic;
  if (s == "zero") return Boundary::zero;
  throw Error(ErrorKind::config, "unknown boundary '" + s + "'");
}

}  // namespace

void to_json(nlohmann::json& j, const FilterSpec& f) {
  j = {{"n_taps", f.n_taps},
       {"half_width", f.half_width},
       {"cutoff_divisor", f.cutoff_divisor},
       {"window", f.window == WindowKind::hamming ? "hamming" : "kaiser"},
       {"kaiser_beta", f.kaiser_beta}};
}

void from_json(const nlohmann::json& j, FilterSpec& f) {
  f = FilterSpec{};
  f.n_taps = j.value("n_taps", f.n_taps);
  f.half_width = j.value("half_width", f.half_width);
  f.cutoff_divisor = j.value("cutoff_divisor", f.cutoff_divisor);
  const std::string w = j.value("window", std::string("kaiser"));
  require(w == "hamming" || w == "kaiser", ErrorKind::config, "unknown window '" + w + "'");
  f.window = w == "hamming" ? WindowKind::hamming : WindowKind::kaiser;
  f.kaiser_beta = j.value("kaiser_beta", f.kaiser_beta);
}

void to_json(nlohmann::json& j, const CnoConfig& c) {
  j = {{"depth", c.depth},
       {"lift_channels", c.lift_channels},
       {"n_res_bottleneck", c.n_res_bottleneck},
       {"n_res_intermediate", c.n_res_intermediate},
       {"in_channels", c.in_channels},
       {"out_channels", c.out_channels},
       {"train_resolution", c.train_resolution},
       {"leaky_slope", c.leaky_slope},
       {"sigma_factor", c.sigma_factor},
       {"filter", c.filter},
       {"boundary", boundary_name(c.boundary)},
       {"resample_kind", c.resample_kind == ResampleKind::ideal ? "ideal" : "windowed"}};
}

void from_json(const nlohmann::json& j, CnoConfig& c) {
  require(j.is_object(), ErrorKind::config, "model config must be a JSON object");
  c = CnoConfig{};
  try {
    c.depth = j.value("depth", c.depth);
    c.lift_channels = j.value("lift_channels", c.lift_channels);
    c.n_res_bottleneck = j.value("n_res_bottleneck", c.n_res_bottleneck);
    c.n_res_intermediate = j.value("n_res_intermediate", c.n_res_intermediate);
    c.in_channels = j.value("in_channels", c.in_channels);
    c.out_channels = j.value("out_channels", c.out_channels);
    c.train_resolution = j.value("train_resolution", c.train_resolution);
    c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
    c.sigma_factor = j.value("sigma_factor", c.sigma_factor);
    if (j.contains("filter")) c.filter = j.at("filter").get<FilterSpec>();
    c.boundary = parse_boundary(j.value("boundary", std::string("periodic")));
    const std::string kind = j.value("resample_kind", std::string("windowed"));
    require(kind == "ideal" || kind == "windowed", ErrorKind::config, "unknown resample_kind '" + kind + "'");
    c.resample_kind = kind == "ideal" ? ResampleKind::ideal : ResampleKind::windowed;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, std::string("model config: ") + e.what());
  }
}

void CnoConfig::validate() const {
  require(depth >= 1, ErrorKind::config, "depth must be >= 1");
  require(lift_channels >= 2 && lift_channels % 2 == 0, ErrorKind::config, "lift_channels must be even and >= 2");
  require(n_res_bottleneck >= 0 && n_res_intermediate >= 0, ErrorKind::config, "ResNet block counts must be >= 0");
  require(in_channels >= 1 && out_channels >= 1, ErrorKind::config, "channel counts must be >= 1");
  require(depth < 20 && train_resolution % (1 << depth) == 0, ErrorKind::config,
          "train_resolution " + std::to_string(train_resolution) + " is not divisible by 2^" + std::to_string(depth));
  require(train_resolution / (1 << depth) >= 2, ErrorKind::config, "coarsest level would be below 2x2");
  require(sigma_factor >= 2, ErrorKind::config, "sigma_factor must be >= 2");
  require(std::isfinite(leaky_slope), ErrorKind::config, "leaky_slope must be finite");
  try {
    filter.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::config, e.what());
  }
}

int CnoConfig::encoder_width(int level) const {
  return level == 0 ? lift_channels / 2 : lift_channels << (level - 1);
}

namespace blocks {

template <class T>
ad::Var<T> conv_unit(ad::Tape<T>& tape, const ad::Var<T>& x, const ConvUnit<T>& c, Boundary boundary, bool train) {
  ad::Var<T> y = ad::conv2d(tape, x, c.weight, c.bias, boundary);
  if (!c.norm) return y;
  return ad::batch_norm(tape, y, c.gamma, c.beta, *c.norm, train);
}

template <class T>
ad::Var<T> activation_layer(ad::Tape<T>& tape, const ad::Var<T>& x, const ActivationOps<T>& act) {
  return ad::filtered_activation(tape, x, *act.up, *act.down, act.slope);
}

template <class T>
ad::Var<T> invariant_block(ad::Tape<T>& tape, const ad::Var<T>& x, const ConvUnit<T>& c, const ActivationOps<T>& act,
                           Boundary boundary, bool train) {
  return activation_layer(tape, conv_unit(tape, x, c, boundary, train), act);
}

template <class T>
ad::Var<T> resnet_block(ad::Tape<T>& tape, const ad::Var<T>& x, const ConvUnit<T>& a, const ConvUnit<T>& b,
                        const ActivationOps<T>& act, Boundary boundary, bool train) {
  require(a.weight->value.shape().n == x->value.shape().c && b.weight->value.shape().n == x->value.shape().c,
          ErrorKind::shape, "resnet block must preserve the channel count");
  const ad::Var<T> h = invariant_block(tape, x, a, act, boundary, train);
  return ad::add(tape, x, conv_unit(tape, h, b, boundary, train));
}

#define CNO_BLOCKS_INSTANTIATE(T)                                                                                      \
  template ad::Var<T> conv_unit<T>(ad::Tape<T>&, const ad::Var<T>&, const ConvUnit<T>&, Boundary, bool);               \
  template ad::Var<T> activation_layer<T>(ad::Tape<T>&, const ad::Var<T>&, const ActivationOps<T>&);                   \
  template ad::Var<T> invariant_block<T>(ad::Tape<T>&, const ad::Var<T>&, const ConvUnit<T>&, const ActivationOps<T>&, \
                                         Boundary, bool);                                                              \
  template ad::Var<T> resnet_block<T>(ad::Tape<T>&, const ad::Var<T>&, const ConvUnit<T>&, const ConvUnit<T>&,         \
                                      const ActivationOps<T>&, Boundary, bool);

CNO_BLOCKS_INSTANTIATE(float)
CNO_BLOCKS_INSTANTIATE(double)

}  // namespace blocks

template <class T>
BasicCnoModel<T>::BasicCnoModel(const CnoConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const int m = config_.depth;
  const auto e = [&](int l) { return config_.encoder_width(l); };

  lift_ = make_conv("lift", config_.in_channels, e(0), false, rng);
  for (int l = 0; l < m; ++l) {
    Level level;
    const std::string p = "enc" + std::to_string(l);
    level.down = make_conv(p + ".down", e(l), e(l + 1), true, rng);
    for (int k = 0; k < config_.n_res_intermediate; ++k) {
      const std::string q = p + ".skip" + std::to_string(k);
      Resnet r;
      r.a = make_conv(q + ".a", e(l), e(l), true, rng);
      r.b = make_conv(q + ".b", e(l), e(l), true, rng);
      level.skip.push_back(r);
    }
    levels_.push_back(std::move(level));
  }
  for (int k = 0; k < config_.n_res_bottleneck; ++k) {
    const std::string q = "bottleneck" + std::to_string(k);
    Resnet r;
    r.a = make_conv(q + ".a", e(m), e(m), true, rng);
    r.b = make_conv(q + ".b", e(m), e(m), true, rng);
    bottleneck_.push_back(r);
  }
  int c = e(m);
  for (int j = 0; j < m; ++j) {
    const int level = m - j;
    const std::string p = "dec" + std::to_string(j);
    UpLevel u;
    u.pre = make_conv(p + ".pre", c, c, true, rng);
    const int cc = c + (j > 0 ? e(level) : 0);
    u.post = make_conv(p + ".post", cc, cc, true, rng);
    u.up = make_conv(p + ".up", cc, e(level - 1), true, rng);
    ups_.push_back(u);
    c = e(level - 1);
  }
  final_ = make_conv("out", c + e(0), c + e(0), true, rng);
  project_ = make_conv("project", c + e(0), config_.out_channels, false, rng);

  const int ns = config_.sigma_factor;
  for (int l = 0; l <= m; ++l) {
    const int r = config_.train_resolution >> l;
    Resampling rs;
    rs.act_up = ad::make_resample_op<T>(r, ns * r, config_.resample_kind, config_.filter, config_.boundary);
    rs.act_down = ad::make_resample_op<T>(ns * r, r, config_.resample_kind, config_.filter, config_.boundary);
    if (l < m) rs.half = ad::make_resample_op<T>(r, r / 2, config_.resample_kind, config_.filter, config_.boundary);
    if (l > 0) rs.twice = ad::make_resample_op<T>(r, 2 * r, config_.resample_kind, config_.filter, config_.boundary);
    resampling_.emplace(r, std::move(rs));
  }
}

template <class T>
typename BasicCnoModel<T>::Conv BasicCnoModel<T>::make_conv(const std::string& name, int in, int out, bool with_bn,
                                                            std::mt19937_64& rng) {
  const auto ui = static_cast<std::size_t>(in), uo = static_cast<std::size_t>(out);
  Tensor<T> w({uo, ui, 3, 3});
  const double bound = std::sqrt(1.0 / (in * 9.0));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (std::size_t k = 0; k < w.size(); ++k) w[k] = static_cast<T>(u(rng));
  Conv c;
  c.weight = params_.size();
  params_.push_back(std::make_unique<Parameter<T>>(name + ".weight", std::move(w)));
  c.bias = params_.size();
  params_.push_back(std::make_unique<Parameter<T>>(name + ".bias", Tensor<T>({1, 1, 1, uo})));
  if (with_bn) {
    Norm nm;
    nm.gamma = params_.size();
    params_.push_back(std::make_unique<Parameter<T>>(name + ".bn.gamma", Tensor<T>({1, 1, 1, uo}, T(1))));
    nm.beta = params_.size();
    params_.push_back(std::make_unique<Parameter<T>>(name + ".bn.beta", Tensor<T>({1, 1, 1, uo})));
    nm.state = std::make_shared<ad::BatchNormState<T>>(uo);
    c.bn = static_cast<int>(norms_.size());
    norms_.push_back(std::move(nm));
  }
  return c;
}

template <class T>
ad::Var<T> BasicCnoModel<T>::leaf(ad::Tape<T>& tape, std::size_t index) const {
  Parameter<T>& p = *params_[index];
  return tape.recording() ? tape.parameter(p) : tape.constant(p.value);
}

template <class T>
const typename BasicCnoModel<T>::Resampling& BasicCnoModel<T>::resampling(int resolution) const {
  auto it = resampling_.find(resolution);
  require(it != resampling_.end(), ErrorKind::shape, "no resampling operators for resolution " + std::to_string(resolution));
  return it->second;
}

template <class T>
blocks::ConvUnit<T> BasicCnoModel<T>::unit(ad::Tape<T>& tape, const Conv& c) const {
  blocks::ConvUnit<T> u;
  u.weight = leaf(tape, c.weight);
  u.bias = leaf(tape, c.bias);
  if (c.bn >= 0) {
    const Norm& n = norms_[static_cast<std::size_t>(c.bn)];
    u.gamma = leaf(tape, n.gamma);
    u.beta = leaf(tape, n.beta);
    u.norm = n.state.get();
  }
  return u;
}

template <class T>
blocks::ActivationOps<T> BasicCnoModel<T>::act_ops(int resolution) const {
  const Resampling& rs = resampling(resolution);
  return {&rs.act_up, &rs.act_down, config_.leaky_slope};
}

template <class T>
ad::Var<T> BasicCnoModel<T>::apply_conv(ad::Tape<T>& tape, const Conv& c, const ad::Var<T>& x, bool train) const {
  return blocks::conv_unit(tape, x, unit(tape, c), config_.boundary, train);
}

template <class T>
ad::Var<T> BasicCnoModel<T>::invariant(ad::Tape<T>& tape, const Conv& c, const ad::Var<T>& x, bool train) const {
  return blocks::invariant_block(tape, x, unit(tape, c), act_ops(static_cast<int>(x->value.shape().h)), config_.boundary,
                                 train);
}

template <class T>
ad::Var<T> BasicCnoModel<T>::resnet(ad::Tape<T>& tape, const Resnet& r, const ad::Var<T>& x, bool train) const {
  return blocks::resnet_block(tape, x, unit(tape, r.a), unit(tape, r.b), act_ops(static_cast<int>(x->value.shape().h)),
                              config_.boundary, train);
}

template <class T>
ad::Var<T> BasicCnoModel<T>::run(ad::Tape<T>& tape, const ad::Var<T>& x, bool train) const {
  const int m = config_.depth;
  ad::Var<T> h = apply_conv(tape, lift_, x, train);
  std::vector<ad::Var<T>> skips(static_cast<std::size_t>(m));
  for (int l = 0; l < m; ++l) {
    const Level& level = levels_[static_cast<std::size_t>(l)];
    ad::Var<T> s = h;
    for (const Resnet& r : level.skip) s = resnet(tape, r, s, train);
    skips[static_cast<std::size_t>(l)] = s;
    const int res = static_cast<int>(h->value.shape().h);
    h = invariant(tape, level.down, h, train);
    h = ad::resample(tape, h, resampling(res).half);
  }
  for (const Resnet& r : bottleneck_) h = resnet(tape, r, h, train);
  for (int j = 0; j < m; ++j) {
    const UpLevel& u = ups_[static_cast<std::size_t>(j)];
    h = invariant(tape, u.pre, h, train);
    if (j > 0) h = ad::concat(tape, std::vector<ad::Var<T>>{h, skips[static_cast<std::size_t>(m - j)]});
    h = invariant(tape, u.post, h, train);
    const int res = static_cast<int>(h->value.shape().h);
    h = invariant(tape, u.up, h, train);
    h = ad::resample(tape, h, resampling(res).twice);
  }
  h = ad::concat(tape, std::vector<ad::Var<T>>{h, skips[0]});
  h = invariant(tape, final_, h, train);
  return apply_conv(tape, project_, h, train);
}

template <class T>
ad::Var<T> BasicCnoModel<T>::forward(ad::Tape<T>& tape, const ad::Var<T>& x, bool train) {
  const Shape& s = x->value.shape();
  const auto res = static_cast<std::size_t>(config_.train_resolution);
  require(s.c == static_cast<std::size_t>(config_.in_channels) && s.h == res && s.w == res, ErrorKind::shape,
          "model expects (batch, " + std::to_string(config_.in_channels) + ", " + std::to_string(res) + ", " +
              std::to_string(res) + "), got " + s.str());
  return run(tape, x, train);
}

template <class T>
Tensor<T> BasicCnoModel<T>::predict(const Tensor<T>& x) const {
  const Shape& s = x.shape();
  const auto res = static_cast<std::size_t>(config_.train_resolution);
  require(s.c == static_cast<std::size_t>(config_.in_channels) && s.h == res && s.w == res, ErrorKind::shape,
          "model expects (batch, " + std::to_string(config_.in_channels) + ", " + std::to_string(res) + ", " +
              std::to_string(res) + "), got " + s.str());
  ad::Tape<T> tape(false);
  return run(tape, tape.constant(x), false)->value;
}

template <class T>
std::vector<Parameter<T>*> BasicCnoModel<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

template <class T>
std::vector<const Parameter<T>*> BasicCnoModel<T>::parameters() const {
  std::vector<const Parameter<T>*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

template <class T>
std::size_t BasicCnoModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

template <class T>
void BasicCnoModel<T>::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

template <class T>
std::vector<std::pair<std::string, Tensor<T>*>> BasicCnoModel<T>::state() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (auto& p : params_) out.emplace_back(p->name, &p->value);
  for (auto& n : norms_) {
    const std::string base = params_[n.gamma]->name.substr(0, params_[n.gamma]->name.size() - std::string("gamma").size());
    out.emplace_back(base + "running_mean", &n.state->running_mean);
    out.emplace_back(base + "running_var", &n.state->running_var);
  }
  return out;
}

template <class T>
std::vector<std::pair<std::string, const Tensor<T>*>> BasicCnoModel<T>::state() const {
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  for (auto& [name, t] : const_cast<BasicCnoModel*>(this)->state()) out.emplace_back(name, t);
  return out;
}

template class BasicCnoModel<float>;
template class BasicCnoModel<double>;

namespace {

std::vector<std::uint8_t> payload_of(const CnoModel& model, nlohmann::json* manifest) {
  std::vector<std::uint8_t> payload;
  for (const auto& [name, t] : model.state()) {
    const Shape& s = t->shape();
    if (manifest)
      manifest->push_back({{"name", name},
                           {"shape", {s.n, s.c, s.h, s.w}},
                           {"dtype", "float32"},
                           {"offset", payload.size()}});
    io::append_f32(payload, t->span());
  }
  return payload;
}

}  // namespace

void save_checkpoint(const CnoModel& model, const std::filesystem::path& path) {
  nlohmann::json manifest = nlohmann::json::array();
  const auto payload = payload_of(model, &manifest);
  const nlohmann::json header = {{"format_version", kCheckpointVersion}, {"config", model.config()}, {"manifest", manifest}};
  io::write_container(path, "CNO1", header, payload);
}

CnoModel load_checkpoint(const std::filesystem::path& path) {
  const io::Container c = io::read_container(path, "CNO1");
  const std::string where = path.string() + ": ";
  try {
    require(c.header.at("format_version").get<int>() == kCheckpointVersion, ErrorKind::format,
            where + "unsupported checkpoint version");
    CnoConfig cfg;
    try {
      cfg = c.header.at("config").get<CnoConfig>();
      cfg.validate();
    } catch (const Error& e) {
      throw Error(ErrorKind::format, where + "invalid stored config: " + e.what());
    }
    CnoModel model(cfg, 0);
    const auto& manifest = c.header.at("manifest");
    auto state = model.state();
    require(manifest.size() == state.size(), ErrorKind::format, where + "manifest does not match the model layout");
    for (std::size_t k = 0; k < state.size(); ++k) {
      const auto& entry = manifest[k];
      auto& [name, t] = state[k];
      const Shape& s = t->shape();
      require(entry.at("name").get<std::string>() == name, ErrorKind::format, where + "unexpected tensor " + entry.at("name").get<std::string>());
      require(entry.at("dtype").get<std::string>() == "float32", ErrorKind::format, where + "unsupported dtype");
      require(entry.at("shape") == nlohmann::json({s.n, s.c, s.h, s.w}), ErrorKind::format, where + "shape mismatch for " + name);
      const auto values = io::read_f32(c.payload, entry.at("offset").get<std::size_t>(), t->size());
      std::copy(values.begin(), values.end(), t->data());
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, where + "malformed header: " + e.what());
  }
}

std::uint64_t model_hash(const CnoModel& model) {
  const auto payload = payload_of(model, nullptr);
  return io::fnv1a64(payload);
}

}  // namespace cno
