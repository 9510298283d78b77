#include "msggan/pipeline.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "msggan/png_io.hpp"

namespace msggan::pipeline {

using config::ConfigError;
using config::KeyValues;
using config::take;

namespace {

void write_text(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream os(file, std::ios::binary);
  os << text;
  if (!os.good()) throw std::runtime_error("cannot write " + file.string());
}

std::string read_text(const fs::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + file.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void say(std::ostream* log, const std::string& line) {
  if (log) *log << line << std::endl;
}

}  // namespace

// ---- configuration ----

void apply_gan_keys(KeyValues& kv, GanRunOptions& opts) {
  using namespace config;
  std::string v;
  auto& g = opts.generator;
  auto& t = opts.train;
  if (take(kv, "depth", v)) {
    g.depth = static_cast<int>(to_int("depth", v));
    if (g.depth < 1 || g.depth > 9) throw ConfigError("config: depth must lie in 1..9");
    g.schedule = net::full_schedule(g.depth);
  }
  if (take(kv, "schedule", v)) g.schedule = to_int_list("schedule", v);
  if (take(kv, "latent_dim", v)) g.latent_dim = to_int("latent_dim", v);
  if (take(kv, "dtype", v)) {
    try {
      g.dtype = parse_dtype(v);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }
  if (take(kv, "equalized_lr", v)) g.equalized_lr = to_bool("equalized_lr", v);
  if (take(kv, "learning_rate", v)) t.learning_rate = to_double("learning_rate", v);
  if (take(kv, "rmsprop_decay", v)) t.rmsprop_decay = to_double("rmsprop_decay", v);
  if (take(kv, "rmsprop_eps", v)) t.rmsprop_eps = to_double("rmsprop_eps", v);
  if (take(kv, "gp_lambda", v)) t.gp_lambda = to_double("gp_lambda", v);
  if (take(kv, "critic_iters", v)) t.critic_iters = static_cast<int>(to_int("critic_iters", v));
  if (take(kv, "batch_size", v)) t.batch_size = static_cast<int>(to_int("batch_size", v));
  if (take(kv, "total_steps", v)) t.total_steps = to_int("total_steps", v);
  if (take(kv, "steps", v)) t.total_steps = to_int("steps", v);
  if (take(kv, "seed", v)) t.seed = to_uint("seed", v);
  if (take(kv, "sample_every", v)) t.sample_every = to_int("sample_every", v);
  if (take(kv, "checkpoint_every", v)) t.checkpoint_every = to_int("checkpoint_every", v);
}

void apply_classifier_keys(KeyValues& kv, ClassifierSetup& setup) {
  using namespace config;
  std::string v;
  auto& n = setup.net;
  auto& t = setup.transfer;
  if (take(kv, "profile", v)) {
    if (v == "desk") n = cls::MiniResNetSpec::desk();
    else if (v == "full") n = cls::MiniResNetSpec::full();
    else throw ConfigError("config: profile must be desk or full");
    t.input_size = n.input_size;
  }
  if (take(kv, "widths", v)) {
    const auto w = to_int_list("widths", v);
    if (w.size() != 4) throw ConfigError("config: widths needs four values");
    for (std::size_t i = 0; i < 4; ++i) n.widths[i] = w[i];
  }
  if (take(kv, "input_size", v)) {
    n.input_size = static_cast<int>(to_int("input_size", v));
    t.input_size = n.input_size;
  }
  if (take(kv, "wide_stem", v)) n.wide_stem = to_bool("wide_stem", v);
  if (take(kv, "dtype", v)) {
    try {
      n.dtype = parse_dtype(v);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }
  if (take(kv, "epochs", v)) t.epochs = static_cast<int>(to_int("epochs", v));
  if (take(kv, "learning_rate", v)) t.adam.learning_rate = to_double("learning_rate", v);
  if (take(kv, "beta1", v)) t.adam.beta1 = to_double("beta1", v);
  if (take(kv, "beta2", v)) t.adam.beta2 = to_double("beta2", v);
  if (take(kv, "eps", v)) t.adam.eps = to_double("eps", v);
  if (take(kv, "batch_size", v)) t.batch_size = static_cast<int>(to_int("batch_size", v));
  if (take(kv, "seed", v)) t.seed = to_uint("seed", v);
  if (take(kv, "max_steps", v)) t.max_steps = to_int("max_steps", v);
  if (take(kv, "freeze_backbone", v)) t.freeze_backbone = to_bool("freeze_backbone", v);
  if (take(kv, "backbone", v)) t.backbone = v.empty() ? std::nullopt : std::optional<fs::path>(v);
}

void apply_plan_keys(KeyValues& kv, ExperimentPlan& plan) {
  using namespace config;
  apply_classifier_keys(kv, plan.classifier);
  std::string v;
  if (take(kv, "seeds", v)) plan.seeds = to_uint_list("seeds", v);
  if (take(kv, "train_frac", v)) plan.train_frac = to_double("train_frac", v);
  if (take(kv, "pretext_images", v)) plan.pretext.images = static_cast<int>(to_int("pretext_images", v));
  if (take(kv, "pretext_epochs", v)) plan.pretext.epochs = static_cast<int>(to_int("pretext_epochs", v));
  if (take(kv, "pretext_learning_rate", v)) {
    plan.pretext.learning_rate = to_double("pretext_learning_rate", v);
  }
  if (take(kv, "pretext_batch_size", v)) {
    plan.pretext.batch_size = static_cast<int>(to_int("pretext_batch_size", v));
  }
  if (take(kv, "parallel", v)) plan.parallel = to_bool("parallel", v);
}

// ---- GAN ----

namespace {

data::IndexList gan_pool_for(const data::PatchDataset& ds, const std::optional<fs::path>& split,
                             int label) {
  data::IndexList source;
  if (split) {
    source = data::read_split_manifest(*split, ds).gan_pool;
  } else {
    source = all_indices(ds);
  }
  data::IndexList out;
  for (auto i : source) {
    if (ds.records[i].label == label) out.push_back(i);
  }
  return out;
}

// Keeps the header and every row logged before `step`.
void trim_telemetry(const fs::path& file, std::int64_t step) {
  std::string kept = std::string(gan::kTelemetryHeader) + "\n";
  if (fs::exists(file)) {
    std::istringstream is(read_text(file));
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      if (std::stoll(line.substr(0, line.find(','))) < step) kept += line + "\n";
    }
  }
  write_text(file, kept);
}

void replace_checkpoint(const gan::TrainState& state, const fs::path& dir) {
  fs::path tmp = dir;
  tmp += ".tmp";
  fs::remove_all(tmp);
  gan::save_checkpoint(state, tmp);
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

std::string step_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step-%08lld", static_cast<long long>(step));
  return buf;
}

}  // namespace

GanRunResult run_gan_training(const GanRunOptions& opts) {
  opts.train.validate();
  opts.generator.validate();
  if (opts.label != 0 && opts.label != 1) throw std::invalid_argument("train-gan: label must be 0 or 1");
  const auto ds = data::ingest_directory(opts.data);
  const auto pool = gan_pool_for(ds, opts.split, opts.label);
  if (pool.empty()) {
    throw std::invalid_argument("train-gan: no images of class " + std::to_string(opts.label) +
                                " in " + opts.data.string());
  }
  const auto& g = opts.generator;
  const int res = static_cast<int>(g.output_resolution());
  const fs::path ckpt_dir = opts.out / "checkpoint";
  const fs::path telemetry = opts.out / "telemetry.csv";
  fs::create_directories(opts.out);

  gan::TrainState state(g, net::DiscriminatorSpec::matching(g), opts.train.seed);
  if (opts.resume && fs::exists(ckpt_dir / "manifest.txt")) {
    gan::load_checkpoint(state, ckpt_dir);
    if (state.seed != opts.train.seed) {
      throw std::invalid_argument("train-gan: checkpoint seed " + std::to_string(state.seed) +
                                  " differs from the configured seed");
    }
  }
  GanRunResult result;
  result.first_step = state.step;
  trim_telemetry(telemetry, state.step);

  data::ImageCache cache(ds, res);
  std::ofstream log(telemetry, std::ios::app);
  const std::uint64_t data_seed = mix_seed(opts.train.seed, 0xda7a);
  while (state.step < opts.train.total_steps) {
    Rng pick(mix_seed(data_seed, static_cast<std::uint64_t>(state.step)));
    data::IndexList batch(static_cast<std::size_t>(opts.train.batch_size));
    for (auto& i : batch) i = pool[pick.below(pool.size())];
    const auto real = data::build_pyramid(cache.batch(batch, g.dtype), g.depth);
    gan::StepTelemetry t;
    try {
      t = gan::train_step(state, real, opts.train);
    } catch (const gan::NonFiniteError& e) {
      const fs::path failure = opts.out / "failure";
      fs::remove_all(failure);
      gan::save_checkpoint(state, failure);
      write_text(failure / "diagnostic.txt", std::string(e.what()) + "\n");
      throw;
    }
    log << gan::format_telemetry_row(t) << '\n';
    log.flush();
    if (opts.on_step) opts.on_step(t);
    const auto& tc = opts.train;
    if (tc.sample_every > 0 && state.step % tc.sample_every == 0) {
      gan::emit_sample_grid(state.generator, 4, 4, tc.seed,
                            opts.out / "samples" / (step_name(state.step) + ".png"));
    }
    if (tc.checkpoint_every > 0 && state.step % tc.checkpoint_every == 0) {
      replace_checkpoint(state, ckpt_dir);
    }
  }
  replace_checkpoint(state, ckpt_dir);
  result.last_step = state.step;
  result.checkpoint = ckpt_dir;
  return result;
}

std::int64_t generate_samples(const GenerateOptions& opts) {
  if (opts.count < 0) throw std::invalid_argument("generate: count must be >= 0");
  if (opts.batch_size < 1) throw std::invalid_argument("generate: batch size must be >= 1");
  if (opts.label != 0 && opts.label != 1) throw std::invalid_argument("generate: label must be 0 or 1");
  const auto state = gan::load_checkpoint(opts.checkpoint);
  const auto& G = state.generator;
  const fs::path dir = opts.out / std::to_string(opts.label);
  fs::create_directories(dir);
  Rng rng(opts.seed);
  std::int64_t written = 0;
  while (written < opts.count) {
    const std::int64_t n = std::min<std::int64_t>(opts.batch_size, opts.count - written);
    const Tensor z = gan::sample_latents(n, G.spec().latent_dim, rng, G.spec().dtype);
    Tensor images;
    {
      NoGradGuard no_grad;
      images = G.forward(z).back();
    }
    const auto r = images.dim(2);
    const auto v = images.to_vector();
    for (std::int64_t i = 0; i < n; ++i) {
      png::Image img;
      img.width = img.height = static_cast<int>(r);
      img.rgb.resize(static_cast<std::size_t>(r * r * 3));
      for (int c = 0; c < 3; ++c) {
        for (std::int64_t p = 0; p < r * r; ++p) {
          img.rgb[static_cast<std::size_t>(p * 3 + c)] =
              gan::pixel_byte(v[static_cast<std::size_t>((i * 3 + c) * r * r + p)]);
        }
      }
      char name[48];
      std::snprintf(name, sizeof name, "synth_%08lld.png", static_cast<long long>(written + i));
      png::write(dir / name, img);
    }
    written += n;
  }
  return written;
}

// ---- classifier ----

data::IndexList all_indices(const data::PatchDataset& ds) {
  data::IndexList v(ds.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
  return v;
}

cls::LabeledSet disk_set(const data::PatchDataset& ds, const data::IndexList& indices, int size,
                         DType dt) {
  cls::LabeledSet set;
  set.labels = data::labels_of(ds, indices);
  set.fetch = [&ds, indices, size, dt](const std::vector<std::size_t>& pos) {
    const std::size_t per = static_cast<std::size_t>(3) * size * size;
    std::vector<double> px;
    px.reserve(pos.size() * per);
    for (auto p : pos) {
      const auto img = data::load_and_normalize(ds.absolute(indices.at(p)), size, DType::F64);
      const auto v = img.to_vector();
      px.insert(px.end(), v.begin(), v.end());
    }
    return Tensor::from_vector({static_cast<std::int64_t>(pos.size()), 3, size, size}, px, dt);
  };
  return set;
}

cls::LabeledSet pretext_set(int count, int size, std::uint64_t seed, DType dt) {
  if (count < 2) throw std::invalid_argument("pretext_set: need at least two images");
  constexpr double two_pi = 2.0 * std::numbers::pi;
  std::vector<double> px;
  std::vector<int> labels;
  px.reserve(static_cast<std::size_t>(count) * 3 * size * size);
  for (int i = 0; i < count; ++i) {
    const int label = i % 2;
    Rng r(mix_seed(seed, static_cast<std::uint64_t>(i)));
    double base[3];
    for (auto& b : base) b = -0.5 + r.uniform();
    const double theta = r.uniform() * std::numbers::pi;
    const double period = label ? 2.0 + 2.0 * r.uniform() : size * (0.5 + 0.5 * r.uniform());
    const double phase = r.uniform() * two_pi;
    const double amp = 0.25 + 0.25 * r.uniform();
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const double u = x * std::cos(theta) + y * std::sin(theta);
          px.push_back(base[c] + amp * std::sin(two_pi * u / period + phase) + 0.05 * r.normal());
        }
      }
    }
    labels.push_back(label);
  }
  return cls::in_memory(Tensor::from_vector({count, 3, size, size}, px, dt), std::move(labels));
}

void pretrain_backbone(const ClassifierSetup& setup, const PretextConfig& pretext,
                       std::uint64_t seed, const fs::path& dir, std::ostream* log) {
  cls::MiniResNet net(setup.net, mix_seed(seed, 0xb0b));
  cls::TransferConfig cfg;
  cfg.freeze_backbone = false;
  cfg.epochs = pretext.epochs;
  cfg.adam.learning_rate = pretext.learning_rate;
  cfg.batch_size = pretext.batch_size;
  cfg.seed = mix_seed(seed, 0xb0c);
  const auto data = pretext_set(pretext.images, setup.net.input_size, mix_seed(seed, 0xb0d),
                                setup.net.dtype);
  const auto report = cls::train_classifier(net, data, cfg);
  const double acc = cls::accuracy(cls::predict(net, data).labels, data.labels);
  say(log, "pretext backbone: " + std::to_string(report.steps) + " steps, final loss " +
               num(report.epoch_loss.empty() ? 0.0 : report.epoch_loss.back()) +
               ", pretext accuracy " + num(acc));
  cls::save_classifier(net, dir);
}

namespace {

std::string loss_csv(const cls::TrainReport& r) {
  std::string s = "epoch,loss\n";
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
    s += std::to_string(e) + "," + num(r.epoch_loss[e]) + "\n";
  }
  return s;
}

std::string predictions_csv(const data::PatchDataset& ds, const data::IndexList& idx,
                            const cls::Predictions& p) {
  std::string s = "path,label,predicted,p1\n";
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& rec = ds.records[idx[i]];
    s += rec.path + "," + std::to_string(rec.label) + "," + std::to_string(p.labels[i]) + "," +
         num(p.probabilities[i][1]) + "\n";
  }
  return s;
}

}  // namespace

ClassifierRun train_classifier_on(const ClassifierSetup& setup, const fs::path& data_dir,
                                  const fs::path& out, std::ostream* log) {
  setup.net.validate();
  setup.transfer.validate();
  const auto ds = data::ingest_directory(data_dir);
  for (const auto& w : ds.warnings) say(log, "warning: " + w);
  cls::MiniResNet net(setup.net, setup.transfer.seed);
  cls::apply_transfer(net, setup.transfer);
  ClassifierRun run;
  run.report = cls::train_classifier(
      net, disk_set(ds, all_indices(ds), setup.net.input_size, setup.net.dtype), setup.transfer);
  run.model = out / "classifier";
  cls::save_classifier(net, run.model);
  write_text(out / "loss.csv", loss_csv(run.report));
  return run;
}

metrics::MetricsRow evaluate_on(const fs::path& model_dir, const fs::path& data_dir,
                                const fs::path& out) {
  const auto spec = cls::read_classifier_spec(model_dir);
  cls::MiniResNet net(spec, 0);
  cls::load_classifier(net, model_dir);
  const auto ds = data::ingest_directory(data_dir);
  const auto idx = all_indices(ds);
  const auto set = disk_set(ds, idx, spec.input_size, spec.dtype);
  const auto p = cls::predict(net, set);
  metrics::MetricsRow row;
  row.scenario = "Evaluation";
  row.test_size = static_cast<std::int64_t>(idx.size());
  row.cm = metrics::confusion(p.labels, set.labels);
  row.metrics = metrics::compute_metrics(row.cm);
  write_text(out / "predictions.csv", predictions_csv(ds, idx, p));
  metrics::MetricsReport report;
  report.title = "Evaluation";
  report.fingerprint = metrics::fingerprint(read_text(model_dir / "manifest.txt"));
  report.rows.push_back(row);
  metrics::emit_report(report, out);
  return row;
}

// ---- scenario matrix ----

std::string Scenario::name() const {
  auto n = [](Source s) { return s == Source::Real ? "Real" : "Synthetic"; };
  return std::string(n(train)) + "/" + n(test);
}

std::string Scenario::slug() const {
  auto n = [](Source s) { return s == Source::Real ? "real" : "synthetic"; };
  return std::string(n(train)) + "-" + n(test);
}

std::vector<Scenario> default_scenarios() {
  return {{Source::Real, Source::Real},
          {Source::Synthetic, Source::Synthetic},
          {Source::Real, Source::Synthetic},
          {Source::Synthetic, Source::Real}};
}

void ExperimentPlan::validate() const {
  classifier.net.validate();
  classifier.transfer.validate();
  if (scenarios.empty()) throw std::invalid_argument("ExperimentPlan: no scenarios");
  if (seeds.empty()) throw std::invalid_argument("ExperimentPlan: no seeds");
  if (!(train_frac > 0.0 && train_frac < 1.0)) {
    throw std::invalid_argument("ExperimentPlan: train_frac must lie in (0,1)");
  }
  if (pretext.images != 0 && pretext.images < 2) {
    throw std::invalid_argument("ExperimentPlan: pretext_images must be 0 or >= 2");
  }
  if (pretext.epochs < 0 || pretext.batch_size < 1) {
    throw std::invalid_argument("ExperimentPlan: invalid pretext settings");
  }
}

std::string ExperimentPlan::canonical_text() const {
  const auto& n = classifier.net;
  const auto& t = classifier.transfer;
  std::ostringstream os;
  os << "widths=" << n.widths[0] << ',' << n.widths[1] << ',' << n.widths[2] << ','
     << n.widths[3] << "\ninput_size=" << n.input_size << "\nwide_stem=" << n.wide_stem
     << "\ndtype=" << dtype_name(n.dtype) << "\nepochs=" << t.epochs
     << "\nlearning_rate=" << num(t.adam.learning_rate) << "\nbeta1=" << num(t.adam.beta1)
     << "\nbeta2=" << num(t.adam.beta2) << "\neps=" << num(t.adam.eps)
     << "\nbatch_size=" << t.batch_size << "\nmax_steps=" << t.max_steps
     << "\nfreeze_backbone=" << t.freeze_backbone
     << "\nbackbone=" << (t.backbone ? "external" : "pretext") << "\nscenarios=";
  for (const auto& s : scenarios) os << s.name() << ';';
  os << "\nseeds=";
  for (auto s : seeds) os << s << ';';
  os << "\ntrain_frac=" << num(train_frac) << "\npretext_images=" << pretext.images
     << "\npretext_epochs=" << pretext.epochs
     << "\npretext_learning_rate=" << num(pretext.learning_rate)
     << "\npretext_batch_size=" << pretext.batch_size << "\n";
  return os.str();
}

namespace {

struct Corpora {
  const data::PatchDataset* real;
  const data::PatchDataset* synthetic;
  const data::PatchDataset& of(Source s) const { return s == Source::Real ? *real : *synthetic; }
};

void run_scenario(const ExperimentPlan& plan, const Scenario& sc, std::uint64_t seed,
                  const std::optional<fs::path>& backbone, const Corpora& corpora,
                  const fs::path& dir) {
  const auto& train_ds = corpora.of(sc.train);
  const auto& test_ds = corpora.of(sc.test);
  const bool same = sc.train == sc.test;
  data::IndexList train_idx, test_idx;
  if (same) {
    auto tt = data::train_test_split(train_ds, all_indices(train_ds), plan.train_frac,
                                     mix_seed(seed, 0x5e1));
    train_idx = std::move(tt.train);
    test_idx = std::move(tt.test);
  } else {
    train_idx = all_indices(train_ds);
    test_idx = all_indices(test_ds);
  }
  const std::uint64_t train_seed = mix_seed(seed, same ? 0x11 : 0x22);
  const auto& spec = plan.classifier.net;
  cls::MiniResNet net(spec, train_seed);
  cls::TransferConfig cfg = plan.classifier.transfer;
  cfg.seed = train_seed;
  cfg.backbone = backbone;
  cls::apply_transfer(net, cfg);
  const auto report = cls::train_classifier(
      net, disk_set(train_ds, train_idx, spec.input_size, spec.dtype), cfg);
  const auto test = disk_set(test_ds, test_idx, spec.input_size, spec.dtype);
  const auto p = cls::predict(net, test);

  metrics::MetricsRow row;
  row.scenario = sc.name();
  row.seed = seed;
  row.train_size = static_cast<std::int64_t>(train_idx.size());
  row.test_size = static_cast<std::int64_t>(test_idx.size());
  row.cm = metrics::confusion(p.labels, test.labels);
  row.metrics = metrics::compute_metrics(row.cm);

  cls::save_classifier(net, dir / "classifier");
  write_text(dir / "loss.csv", loss_csv(report));
  write_text(dir / "predictions.csv", predictions_csv(test_ds, test_idx, p));
  metrics::MetricsReport single;
  single.title = sc.name();
  single.seeds = {seed};
  single.rows.push_back(row);
  write_text(dir / "result.json", metrics::to_json(single));
}

}  // namespace

metrics::MetricsReport run_experiment_matrix(const ExperimentPlan& plan, const fs::path& real_dir,
                                             const fs::path& synth_dir, const fs::path& out,
                                             std::ostream* log) {
  plan.validate();
  const auto real = data::ingest_directory(real_dir);
  const auto synth = data::ingest_directory(synth_dir);
  for (const auto& w : real.warnings) say(log, "warning (real): " + w);
  for (const auto& w : synth.warnings) say(log, "warning (synthetic): " + w);
  if (real.counts != synth.counts) {
    say(log, "warning: corpus sizes differ (real " + std::to_string(real.counts[0]) + "+" +
                 std::to_string(real.counts[1]) + ", synthetic " + std::to_string(synth.counts[0]) +
                 "+" + std::to_string(synth.counts[1]) + ")");
  }
  const Corpora corpora{&real, &synth};
  fs::create_directories(out);

  for (auto seed : plan.seeds) {
    const fs::path seed_dir = out / ("seed-" + std::to_string(seed));
    std::optional<fs::path> backbone = plan.classifier.transfer.backbone;
    if (!backbone && plan.pretext.images > 0) {
      backbone = seed_dir / "backbone";
      pretrain_backbone(plan.classifier, plan.pretext, seed, *backbone, log);
    }
    if (plan.parallel) {
      std::vector<pid_t> children;
      std::cout.flush();
      std::cerr.flush();
      for (const auto& sc : plan.scenarios) {
        const pid_t pid = fork();
        if (pid < 0) throw std::runtime_error("experiment-matrix: fork failed");
        if (pid == 0) {
          int code = 0;
          try {
            run_scenario(plan, sc, seed, backbone, corpora, seed_dir / sc.slug());
          } catch (const std::exception& e) {
            std::fprintf(stderr, "%s: %s\n", sc.name().c_str(), e.what());
            code = 2;
          }
          std::fflush(nullptr);
          _exit(code);
        }
        children.push_back(pid);
      }
      bool ok = true;
      for (auto pid : children) {
        int status = 0;
        waitpid(pid, &status, 0);
        ok = ok && WIFEXITED(status) && WEXITSTATUS(status) == 0;
      }
      if (!ok) throw std::runtime_error("experiment-matrix: a scenario process failed");
    } else {
      for (const auto& sc : plan.scenarios) {
        say(log, "seed " + std::to_string(seed) + ": " + sc.name());
        run_scenario(plan, sc, seed, backbone, corpora, seed_dir / sc.slug());
      }
    }
  }

  metrics::MetricsReport report;
  report.title = "Scenario matrix";
  report.seeds = plan.seeds;
  report.fingerprint = metrics::fingerprint(
      plan.canonical_text() + "real_counts=" + std::to_string(real.counts[0]) + "," +
      std::to_string(real.counts[1]) + "\nsynthetic_counts=" + std::to_string(synth.counts[0]) +
      "," + std::to_string(synth.counts[1]) + "\n");
  for (auto seed : plan.seeds) {
    for (const auto& sc : plan.scenarios) {
      const auto part = metrics::from_json(
          read_text(out / ("seed-" + std::to_string(seed)) / sc.slug() / "result.json"));
      for (const auto& row : part.rows) {
        metrics::MetricsRow checked = row;
        checked.metrics = metrics::compute_metrics(row.cm);
        report.rows.push_back(checked);
      }
    }
  }
  metrics::emit_report(report, out);
  return report;
}

}  // namespace msggan::pipeline
