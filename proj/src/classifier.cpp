#include "msggan/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "msggan/checkpoint_io.hpp"
#include "msggan/data.hpp"
#include "msggan/gan_train.hpp"

namespace msggan::cls {

namespace fs = std::filesystem;
using namespace msggan::ad;

MiniResNetSpec MiniResNetSpec::desk() { return {}; }

MiniResNetSpec MiniResNetSpec::full() {
  MiniResNetSpec s;
  s.widths = {64, 128, 256, 512};
  s.input_size = 224;
  s.wide_stem = true;
  return s;
}

void MiniResNetSpec::validate() const {
  for (auto w : widths) {
    if (w < 1) throw std::invalid_argument("MiniResNetSpec: widths must be positive");
  }
  if (input_size < 8) throw std::invalid_argument("MiniResNetSpec: input_size must be >= 8");
  if (num_classes != 2) throw std::invalid_argument("MiniResNetSpec: only 2 classes are supported");
}

// ---- layers ----

BatchNorm2d BatchNorm2d::create(const std::string& name, std::int64_t channels, DType dt) {
  BatchNorm2d bn;
  bn.gamma = Parameter(name + "/gamma", Tensor::full({channels}, 1.0, dt));
  bn.beta = Parameter(name + "/beta", Tensor::zeros({channels}, dt));
  bn.stats = {Tensor::zeros({channels}, dt), Tensor::full({channels}, 1.0, dt)};
  return bn;
}

Tensor BatchNorm2d::forward(const Tensor& x, NormMode mode) {
  return batch_norm_2d(x, gamma.value, beta.value, stats, mode);
}

void BatchNorm2d::collect(ParameterRefs& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

ResidualBlock::ResidualBlock(const std::string& name, ResidualBlockSpec spec, Rng& rng, DType dt)
    : name_(name), spec_(spec) {
  conv1 = Conv2dLayer::create(name + "/conv1", spec.in_channels, spec.out_channels, 3, spec.stride,
                              1, false, rng, dt);
  bn1 = BatchNorm2d::create(name + "/bn1", spec.out_channels, dt);
  conv2 = Conv2dLayer::create(name + "/conv2", spec.out_channels, spec.out_channels, 3, 1, 1, false,
                              rng, dt);
  bn2 = BatchNorm2d::create(name + "/bn2", spec.out_channels, dt);
  if (spec.projection()) {
    shortcut = Conv2dLayer::create(name + "/shortcut", spec.in_channels, spec.out_channels, 1,
                                   spec.stride, 0, false, rng, dt);
    shortcut_bn = BatchNorm2d::create(name + "/shortcut_bn", spec.out_channels, dt);
  }
}

Tensor ResidualBlock::forward(const Tensor& x, NormMode mode) {
  if (x.rank() != 4 || x.dim(1) != spec_.in_channels) {
    throw std::invalid_argument(name_ + ": expected " + std::to_string(spec_.in_channels) +
                                " input channels, got shape " + shape_str(x.shape()));
  }
  Tensor h = relu(bn1.forward(conv1.forward(x), mode));
  h = bn2.forward(conv2.forward(h), mode);
  const Tensor skip = spec_.projection() ? shortcut_bn.forward(shortcut.forward(x), mode) : x;
  return relu(add(h, skip));
}

void ResidualBlock::collect(ParameterRefs& out) {
  conv1.collect(out);
  bn1.collect(out);
  conv2.collect(out);
  bn2.collect(out);
  if (spec_.projection()) {
    shortcut.collect(out);
    shortcut_bn.collect(out);
  }
}

void ResidualBlock::collect_buffers(std::vector<std::pair<std::string, Tensor*>>& out) {
  auto add_bn = [&](const std::string& bn_name, BatchNorm2d& bn) {
    out.emplace_back(name_ + "/" + bn_name + "/running_mean", &bn.stats.running_mean);
    out.emplace_back(name_ + "/" + bn_name + "/running_var", &bn.stats.running_var);
  };
  add_bn("bn1", bn1);
  add_bn("bn2", bn2);
  if (spec_.projection()) add_bn("shortcut_bn", shortcut_bn);
}

// ---- network ----

MiniResNet::MiniResNet(MiniResNetSpec spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  Rng rng(seed);
  const auto dt = spec_.dtype;
  const auto w0 = spec_.widths[0];
  stem_ = spec_.wide_stem ? Conv2dLayer::create("stem/conv", 3, w0, 7, 2, 3, false, rng, dt)
                          : Conv2dLayer::create("stem/conv", 3, w0, 3, 1, 1, false, rng, dt);
  stem_bn_ = BatchNorm2d::create("stem/bn", w0, dt);
  std::int64_t in = w0;
  for (int stage = 0; stage < 4; ++stage) {
    for (int b = 0; b < 2; ++b) {
      const int stride = (stage > 0 && b == 0) ? 2 : 1;
      const std::string name =
          "stage" + std::to_string(stage + 1) + "/block" + std::to_string(b + 1);
      blocks_.emplace_back(name, ResidualBlockSpec{in, spec_.widths[static_cast<std::size_t>(stage)], stride},
                           rng, dt);
      in = spec_.widths[static_cast<std::size_t>(stage)];
    }
  }
  replace_head(mix_seed(seed, 0xfc));
}

void MiniResNet::replace_head(std::uint64_t seed) {
  Rng rng(seed);
  fc_ = DenseLayer::create("fc", feature_dim(), spec_.num_classes, rng, spec_.dtype);
}

Tensor MiniResNet::features(const Tensor& x, NormMode mode) {
  const auto s = spec_.input_size;
  if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != s || x.dim(3) != s) {
    throw std::invalid_argument("classifier: expected N×3×" + std::to_string(s) + "×" +
                                std::to_string(s) + " input, got " + shape_str(x.shape()));
  }
  Tensor h = relu(stem_bn_.forward(stem_.forward(x), mode));
  if (spec_.wide_stem) h = max_pool2d(h, 3, 2, 1);
  for (auto& b : blocks_) h = b.forward(h, mode);
  const auto n = h.dim(0), c = h.dim(1);
  const double area = static_cast<double>(h.dim(2) * h.dim(3));
  return reshape(scale(sum_to(h, {n, c, 1, 1}), 1.0 / area), {n, c});
}

Tensor MiniResNet::head(const Tensor& f) const { return fc_.forward(f); }

Tensor MiniResNet::logits(const Tensor& x, NormMode mode) { return head(features(x, mode)); }

ParameterRefs MiniResNet::backbone_parameters() {
  ParameterRefs out;
  stem_.collect(out);
  stem_bn_.collect(out);
  for (auto& b : blocks_) b.collect(out);
  return out;
}

ParameterRefs MiniResNet::head_parameters() {
  ParameterRefs out;
  fc_.collect(out);
  return out;
}

ParameterRefs MiniResNet::parameters() {
  auto out = backbone_parameters();
  fc_.collect(out);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> MiniResNet::buffers() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("stem/bn/running_mean", &stem_bn_.stats.running_mean);
  out.emplace_back("stem/bn/running_var", &stem_bn_.stats.running_var);
  for (auto& b : blocks_) b.collect_buffers(out);
  return out;
}

bool MiniResNet::backbone_frozen() {
  const auto params = backbone_parameters();
  return std::none_of(params.begin(), params.end(), [](const Parameter* p) { return p->trainable; });
}

// ---- optimizer ----

void adam_step(const ParameterRefs& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamOptions& o) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam_step: parameter and gradient counts differ");
  }
  if (!state.m.empty() && state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: optimizer state does not match parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i]->shape()) {
      throw std::invalid_argument("adam_step: gradient shape mismatch for " + params[i]->name);
    }
    const bool finite = dispatch(grads[i].dtype(), [&]<class T>() {
      const auto g = grads[i].data<T>();
      return std::all_of(g.begin(), g.end(), [](T v) { return std::isfinite(v); });
    });
    if (!finite) throw gan::NonFiniteError("adam_step: non-finite gradient for " + params[i]->name);
  }
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.push_back(Tensor::zeros(p->shape(), p->value.dtype()));
      state.v.push_back(Tensor::zeros(p->shape(), p->value.dtype()));
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    dispatch(params[i]->value.dtype(), [&]<class T>() {
      auto w = params[i]->value.mutable_data<T>();
      auto m = state.m[i].mutable_data<T>();
      auto v = state.v[i].mutable_data<T>();
      const auto g = grads[i].data<T>();
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = static_cast<T>(o.beta1 * m[j] + (1.0 - o.beta1) * g[j]);
        v[j] = static_cast<T>(o.beta2 * v[j] + (1.0 - o.beta2) * g[j] * g[j]);
        const double mhat = m[j] / c1;
        const double vhat = v[j] / c2;
        w[j] = static_cast<T>(w[j] - o.learning_rate * mhat / (std::sqrt(vhat) + o.eps));
      }
    });
  }
}

// ---- training ----

void TransferConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("TransferConfig: epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("TransferConfig: batch_size must be >= 1");
  if (!(adam.learning_rate >= 0.0)) throw std::invalid_argument("TransferConfig: lr must be >= 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw std::invalid_argument("TransferConfig: adam betas must lie in [0,1)");
  }
  if (input_size < 8) throw std::invalid_argument("TransferConfig: input_size must be >= 8");
  if (max_steps < 0) throw std::invalid_argument("TransferConfig: max_steps must be >= 0");
}

void apply_transfer(MiniResNet& network, const TransferConfig& cfg) {
  cfg.validate();
  if (cfg.backbone) load_classifier(network, *cfg.backbone, /*backbone_only=*/true);
  for (auto* p : network.backbone_parameters()) p->set_trainable(!cfg.freeze_backbone);
  network.replace_head(mix_seed(cfg.seed, 0x4ead));
}

LabeledSet in_memory(const Tensor& images, std::vector<int> labels) {
  if (images.rank() != 4 || images.dim(0) != static_cast<std::int64_t>(labels.size())) {
    throw std::invalid_argument("in_memory: image count differs from label count");
  }
  LabeledSet set;
  set.labels = std::move(labels);
  set.fetch = [images](const std::vector<std::size_t>& pos) {
    const Shape s = images.shape();
    const std::int64_t per = s[1] * s[2] * s[3];
    return dispatch(images.dtype(), [&]<class T>() {
      const auto src = images.data<T>();
      std::vector<T> out(pos.size() * static_cast<std::size_t>(per));
      for (std::size_t i = 0; i < pos.size(); ++i) {
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(pos[i] * static_cast<std::size_t>(per)), per,
                    out.begin() + static_cast<std::ptrdiff_t>(i * static_cast<std::size_t>(per)));
      }
      return Tensor::from_storage<T>({static_cast<std::int64_t>(pos.size()), s[1], s[2], s[3]},
                                     std::move(out));
    });
  };
  return set;
}

namespace {

Tensor gather_rows(const Tensor& m, const std::vector<std::size_t>& rows) {
  const auto cols = m.dim(1);
  return dispatch(m.dtype(), [&]<class T>() {
    const auto src = m.data<T>();
    std::vector<T> out;
    out.reserve(rows.size() * static_cast<std::size_t>(cols));
    for (auto r : rows) {
      const auto off = static_cast<std::ptrdiff_t>(r * static_cast<std::size_t>(cols));
      out.insert(out.end(), src.begin() + off, src.begin() + off + cols);
    }
    return Tensor::from_storage<T>({static_cast<std::int64_t>(rows.size()), cols}, std::move(out));
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  const auto cols = parts.front().dim(1);
  return dispatch(parts.front().dtype(), [&]<class T>() {
    std::vector<T> out;
    std::int64_t n = 0;
    for (const auto& p : parts) {
      const auto d = p.data<T>();
      out.insert(out.end(), d.begin(), d.end());
      n += p.dim(0);
    }
    return Tensor::from_storage<T>({n, cols}, std::move(out));
  });
}

std::vector<std::size_t> iota_positions(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

}  // namespace

TrainReport train_classifier(MiniResNet& network, const LabeledSet& data, const TransferConfig& cfg) {
  cfg.validate();
  if (data.size() == 0) throw std::invalid_argument("train_classifier: empty training set");
  const ParameterRefs trainable = only_trainable(network.parameters());
  if (trainable.empty()) throw std::invalid_argument("train_classifier: nothing to train");
  const bool frozen = network.backbone_frozen();

  Tensor cached;
  if (frozen) {
    NoGradGuard no_grad;
    std::vector<Tensor> parts;
    const auto all = iota_positions(data.size());
    for (std::size_t i = 0; i < all.size(); i += static_cast<std::size_t>(cfg.batch_size)) {
      const std::vector<std::size_t> chunk(
          all.begin() + static_cast<std::ptrdiff_t>(i),
          all.begin() + static_cast<std::ptrdiff_t>(std::min(all.size(), i + static_cast<std::size_t>(cfg.batch_size))));
      parts.push_back(network.features(data.fetch(chunk), NormMode::Eval));
    }
    cached = concat_rows(parts);
  }

  TrainReport report;
  AdamState state;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    data::BatchIterator it(iota_positions(data.size()), static_cast<std::size_t>(cfg.batch_size),
                           cfg.seed, static_cast<std::uint64_t>(epoch));
    double total = 0.0;
    std::size_t seen = 0;
    std::vector<std::size_t> batch;
    bool capped = false;
    while (it.next(batch)) {
      std::vector<int> labels;
      for (auto p : batch) labels.push_back(data.labels[p]);
      const Tensor logits = frozen ? network.head(gather_rows(cached, batch))
                                   : network.logits(data.fetch(batch), NormMode::Train);
      const Tensor loss = softmax_cross_entropy(logits, labels);
      const double l = loss.item();
      if (!std::isfinite(l)) {
        throw gan::NonFiniteError("train_classifier: non-finite loss in epoch " +
                                  std::to_string(epoch));
      }
      adam_step(trainable, compute_gradients(loss, trainable), state, cfg.adam);
      total += l * static_cast<double>(batch.size());
      seen += batch.size();
      if (cfg.max_steps > 0 && ++report.steps >= cfg.max_steps) {
        capped = true;
        break;
      }
      if (cfg.max_steps == 0) ++report.steps;
    }
    report.epoch_loss.push_back(total / static_cast<double>(seen));
    if (capped) break;
  }
  return report;
}

// ---- inference ----

Predictions predict_from_logits(const Tensor& logits) {
  if (logits.rank() != 2 || logits.dim(1) != 2) {
    throw std::invalid_argument("predict: expected N×2 logits");
  }
  const auto v = logits.to_vector();
  Predictions out;
  for (std::size_t i = 0; i + 1 < v.size(); i += 2) {
    const double m = std::max(v[i], v[i + 1]);
    const double e0 = std::exp(v[i] - m), e1 = std::exp(v[i + 1] - m);
    out.probabilities.push_back({e0 / (e0 + e1), e1 / (e0 + e1)});
    out.labels.push_back(v[i + 1] > v[i] ? 1 : 0);
  }
  return out;
}

Predictions predict(MiniResNet& network, const Tensor& batch) {
  NoGradGuard no_grad;
  return predict_from_logits(network.logits(batch, NormMode::Eval));
}

Predictions predict(MiniResNet& network, const LabeledSet& data, int batch_size) {
  Predictions out;
  const auto all = iota_positions(data.size());
  for (std::size_t i = 0; i < all.size(); i += static_cast<std::size_t>(batch_size)) {
    const std::vector<std::size_t> chunk(
        all.begin() + static_cast<std::ptrdiff_t>(i),
        all.begin() + static_cast<std::ptrdiff_t>(std::min(all.size(), i + static_cast<std::size_t>(batch_size))));
    auto p = predict(network, data.fetch(chunk));
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    out.probabilities.insert(out.probabilities.end(), p.probabilities.begin(), p.probabilities.end());
  }
  return out;
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size() || truth.empty()) {
    throw std::invalid_argument("accuracy: size mismatch or empty");
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

// ---- checkpoints ----

namespace {

std::string widths_text(const std::array<std::int64_t, 4>& w) {
  return std::to_string(w[0]) + "," + std::to_string(w[1]) + "," + std::to_string(w[2]) + "," +
         std::to_string(w[3]);
}

bool is_head(const std::string& name) { return name.rfind("fc/", 0) == 0; }

}  // namespace

MiniResNetSpec read_classifier_spec(const fs::path& dir) {
  const auto m = ckpt::read_manifest(dir / "manifest.txt");
  if (ckpt::field(m, "format") != "msggan-classifier-1") {
    throw std::runtime_error("classifier checkpoint: unsupported format in " + dir.string());
  }
  MiniResNetSpec s;
  const auto w = ckpt::field(m, "widths");
  std::size_t pos = 0;
  for (int i = 0; i < 4; ++i) {
    std::size_t used = 0;
    s.widths[static_cast<std::size_t>(i)] = std::stoll(w.substr(pos), &used);
    pos += used + 1;
  }
  s.input_size = std::stoi(ckpt::field(m, "input_size"));
  s.wide_stem = ckpt::field(m, "wide_stem") == "1";
  s.num_classes = std::stoi(ckpt::field(m, "num_classes"));
  s.dtype = parse_dtype(ckpt::field(m, "dtype"));
  return s;
}

void save_classifier(MiniResNet& network, const fs::path& dir) {
  fs::create_directories(dir);
  const auto& s = network.spec();
  ckpt::Manifest m{{"format", "msggan-classifier-1"},
                   {"widths", widths_text(s.widths)},
                   {"input_size", std::to_string(s.input_size)},
                   {"wide_stem", s.wide_stem ? "1" : "0"},
                   {"num_classes", std::to_string(s.num_classes)},
                   {"dtype", dtype_name(s.dtype)}};
  for (auto* p : network.parameters()) {
    m["array.params/" + p->name] = shape_str(p->shape());
    ckpt::write_array(dir / "params" / (p->name + ".bin"), p->value);
  }
  for (auto& [name, t] : network.buffers()) {
    m["array.buffers/" + name] = shape_str(t->shape());
    ckpt::write_array(dir / "buffers" / (name + ".bin"), *t);
  }
  ckpt::write_manifest(dir / "manifest.txt", m);
}

void load_classifier(MiniResNet& network, const fs::path& dir, bool backbone_only) {
  const auto stored = read_classifier_spec(dir);
  const auto& own = network.spec();
  if (stored.widths != own.widths || stored.wide_stem != own.wide_stem || stored.dtype != own.dtype ||
      (!backbone_only && !(stored == own))) {
    throw std::runtime_error("classifier checkpoint " + dir.string() +
                             " is incompatible with the target network");
  }
  const auto m = ckpt::read_manifest(dir / "manifest.txt");
  std::vector<std::pair<Parameter*, Tensor>> params;
  for (auto* p : network.parameters()) {
    if (backbone_only && is_head(p->name)) continue;
    if (ckpt::field(m, "array.params/" + p->name) != shape_str(p->shape())) {
      throw std::runtime_error("classifier checkpoint: shape mismatch for " + p->name);
    }
    params.emplace_back(p, ckpt::read_array(dir / "params" / (p->name + ".bin"), p->shape(),
                                            p->value.dtype()));
  }
  std::vector<std::pair<Tensor*, Tensor>> bufs;
  for (auto& [name, t] : network.buffers()) {
    if (ckpt::field(m, "array.buffers/" + name) != shape_str(t->shape())) {
      throw std::runtime_error("classifier checkpoint: shape mismatch for " + name);
    }
    bufs.emplace_back(t, ckpt::read_array(dir / "buffers" / (name + ".bin"), t->shape(), t->dtype()));
  }
  for (auto& [p, v] : params) {
    p->value = v;
    p->value.set_requires_grad(p->trainable);
    p->grad = Tensor::zeros(p->shape(), p->value.dtype());
  }
  for (auto& [t, v] : bufs) *t = v;
}

}  // namespace msggan::cls
