#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "msggan/audit.hpp"
#include "msggan/config.hpp"
#include "msggan/data.hpp"
#include "msggan/gradcheck.hpp"
#include "msggan/metrics.hpp"
#include "msggan/pipeline.hpp"

namespace fs = std::filesystem;
using namespace msggan;

namespace {

enum Exit { kOk = 0, kValidation = 1, kRuntime = 2 };

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out = ".";

  config::KeyValues keys() const {
    return config.empty() ? config::KeyValues{} : config::read_key_values(config);
  }
};

int parse_class(const std::string& name) {
  if (name == "pos" || name == "1") return 1;
  if (name == "neg" || name == "0") return 0;
  throw std::invalid_argument("--class must be pos or neg");
}

void materialize(const data::PatchDataset& ds, const data::IndexList& subset, const fs::path& dir) {
  for (auto i : subset) {
    const auto& r = ds.records[i];
    const fs::path target = dir / r.path;
    fs::create_directories(target.parent_path());
    std::error_code ec;
    fs::create_hard_link(ds.absolute(i), target, ec);
    if (ec) fs::copy_file(ds.absolute(i), target, fs::copy_options::overwrite_existing);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-scale GAN synthesis and real-vs-synthetic classification"};
  app.name("msggan");
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Run seed (overrides the config)");
  app.add_option("--config", g.config, "Flat key = value configuration file");
  app.add_option("--out", g.out, "Output directory");

  // split
  auto* split = app.add_subcommand("split", "Seeded gan/cls pools and the cls train/test split");
  std::string split_data;
  bool proportional = false, materialize_pools = false;
  std::size_t gan_per_class = 40000, cls_per_class = 38000;
  double split_frac = 0.7;
  split->add_option("--data", split_data, "Dataset root holding 0/ and 1/")->required();
  split->add_flag("--proportional", proportional, "Scale pools to the available counts");
  split->add_option("--gan-per-class", gan_per_class);
  split->add_option("--cls-per-class", cls_per_class);
  split->add_option("--train-frac", split_frac);
  split->add_flag("--materialize", materialize_pools, "Link pool files under out/<subset>/");

  // train-gan
  auto* train_gan = app.add_subcommand("train-gan", "Train one per-class generator");
  std::string gan_class, gan_data, gan_split;
  int gan_depth = 0;
  std::int64_t gan_steps = -1;
  bool no_resume = false;
  train_gan->add_option("--class", gan_class, "pos or neg")->required();
  train_gan->add_option("--depth", gan_depth, "Number of scales (5 gives 64x64)");
  train_gan->add_option("--steps", gan_steps, "Total generator steps");
  train_gan->add_option("--data", gan_data, "Dataset root")->required();
  train_gan->add_option("--split", gan_split, "Split manifest; restricts to gan_pool");
  train_gan->add_flag("--no-resume", no_resume, "Ignore an existing checkpoint");

  // generate
  auto* generate = app.add_subcommand("generate", "Write synthetic PNGs from a generator");
  std::string gen_ckpt, gen_class = "pos";
  std::int64_t gen_count = 0;
  int gen_batch = 16;
  generate->add_option("--checkpoint", gen_ckpt, "GAN checkpoint directory")->required();
  generate->add_option("--count", gen_count, "Number of images")->required();
  generate->add_option("--class", gen_class, "pos or neg");
  generate->add_option("--batch", gen_batch);

  // train-classifier
  auto* train_cls = app.add_subcommand("train-classifier", "Transfer-train the classifier");
  std::string cls_data, cls_backbone;
  bool no_freeze = false;
  int cls_epochs = -1;
  train_cls->add_option("--data", cls_data, "Dataset root")->required();
  train_cls->add_option("--backbone", cls_backbone, "Classifier checkpoint to transfer from");
  train_cls->add_flag("--no-freeze", no_freeze, "Train every layer");
  train_cls->add_option("--epochs", cls_epochs);

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Score a classifier on a dataset");
  std::string eval_model, eval_data;
  evaluate->add_option("--model", eval_model, "Classifier checkpoint")->required();
  evaluate->add_option("--data", eval_data, "Dataset root")->required();

  // experiment-matrix
  auto* matrix = app.add_subcommand("experiment-matrix", "Run the four train/test scenarios");
  std::string real_dir, synth_dir;
  std::vector<std::uint64_t> seeds;
  bool parallel = false, reference = false;
  matrix->add_option("--real", real_dir, "Real corpus root");
  matrix->add_option("--synthetic", synth_dir, "Synthetic corpus root");
  matrix->add_option("--seeds", seeds, "Seeds (space separated)")->expected(1, -1);
  matrix->add_flag("--parallel", parallel, "One process per scenario");
  matrix->add_flag("--reference", reference, "Only render the published reference table");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  auto* audit = app.add_subcommand("audit-shapes", "Layer-shape audit against the tables");
  int audit_depth = 5;
  audit->add_option("--depth", audit_depth, "1..9");

  for (auto* sub : app.get_subcommands([](const CLI::App*) { return true; })) sub->fallthrough();

  if (argc < 2) {
    std::cerr << app.help();
    return kValidation;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kValidation;
  }
  if (*seed_opt) g.seed = seed_value;
  const fs::path out = g.out;

  try {
    if (*split) {
      auto kv = g.keys();
      config::reject_unknown(kv, "split");
      const std::uint64_t seed = g.seed.value_or(0);
      const auto ds = data::ingest_directory(split_data);
      for (const auto& w : ds.warnings) std::cerr << "warning: " << w << "\n";
      auto plan = data::make_split(ds, seed, proportional, {gan_per_class, cls_per_class});
      auto tt = data::train_test_split(ds, plan.cls_pool, split_frac, mix_seed(seed, 0x7e57));
      plan.train = std::move(tt.train);
      plan.test = std::move(tt.test);
      fs::create_directories(out);
      data::write_split_manifest(out / "split.csv", ds, plan);
      std::cout << "ingested " << ds.counts[0] << " + " << ds.counts[1] << "\n"
                << "gan_pool " << plan.gan_pool.size() << "\ncls_pool " << plan.cls_pool.size()
                << "\ntrain " << plan.train.size() << "\ntest " << plan.test.size() << "\n";
      if (materialize_pools) {
        for (const auto& [name, subset] : plan.subsets()) materialize(ds, *subset, out / name);
      }
      return kOk;
    }

    if (*train_gan) {
      pipeline::GanRunOptions opts;
      auto kv = g.keys();
      pipeline::apply_gan_keys(kv, opts);
      config::reject_unknown(kv, "train-gan");
      if (gan_depth > 0 && gan_depth != opts.generator.depth) {
        opts.generator.depth = gan_depth;
        opts.generator.schedule = net::full_schedule(gan_depth);
      }
      if (gan_steps >= 0) opts.train.total_steps = gan_steps;
      if (g.seed) opts.train.seed = *g.seed;
      opts.label = parse_class(gan_class);
      opts.data = gan_data;
      if (!gan_split.empty()) opts.split = fs::path(gan_split);
      opts.out = out;
      opts.resume = !no_resume;
      const std::int64_t every = std::max<std::int64_t>(1, opts.train.total_steps / 20);
      opts.on_step = [every](const gan::StepTelemetry& t) {
        if ((t.step + 1) % every == 0) std::cout << gan::format_telemetry_row(t) << std::endl;
      };
      const auto r = pipeline::run_gan_training(opts);
      std::cout << "steps " << r.first_step << " -> " << r.last_step << ", checkpoint "
                << r.checkpoint.string() << "\n";
      return kOk;
    }

    if (*generate) {
      auto kv = g.keys();
      config::reject_unknown(kv, "generate");
      pipeline::GenerateOptions opts;
      opts.checkpoint = gen_ckpt;
      opts.count = gen_count;
      opts.label = parse_class(gen_class);
      opts.out = out;
      opts.seed = g.seed.value_or(0);
      opts.batch_size = gen_batch;
      const auto n = pipeline::generate_samples(opts);
      std::cout << "wrote " << n << " images to " << (out / std::to_string(opts.label)).string()
                << "\n";
      return kOk;
    }

    if (*train_cls) {
      pipeline::ClassifierSetup setup;
      auto kv = g.keys();
      pipeline::apply_classifier_keys(kv, setup);
      config::reject_unknown(kv, "train-classifier");
      if (!cls_backbone.empty()) setup.transfer.backbone = fs::path(cls_backbone);
      if (no_freeze) setup.transfer.freeze_backbone = false;
      if (cls_epochs >= 0) setup.transfer.epochs = cls_epochs;
      if (g.seed) setup.transfer.seed = *g.seed;
      const auto run = pipeline::train_classifier_on(setup, cls_data, out, &std::cerr);
      std::cout << "epochs " << run.report.epoch_loss.size() << ", steps " << run.report.steps;
      if (!run.report.epoch_loss.empty()) std::cout << ", final loss " << run.report.epoch_loss.back();
      std::cout << "\nmodel " << run.model.string() << "\n";
      return kOk;
    }

    if (*evaluate) {
      auto kv = g.keys();
      config::reject_unknown(kv, "evaluate");
      const auto row = pipeline::evaluate_on(eval_model, eval_data, out);
      metrics::MetricsReport r;
      r.rows.push_back(row);
      std::cout << metrics::to_markdown(r);
      return kOk;
    }

    if (*matrix) {
      if (reference) {
        const auto r = metrics::reference_report();
        metrics::emit_report(r, out);
        std::cout << metrics::to_markdown(r);
        return kOk;
      }
      if (real_dir.empty() || synth_dir.empty()) {
        throw std::invalid_argument("experiment-matrix needs --real and --synthetic");
      }
      pipeline::ExperimentPlan plan;
      auto kv = g.keys();
      pipeline::apply_plan_keys(kv, plan);
      config::reject_unknown(kv, "experiment-matrix");
      if (!seeds.empty()) plan.seeds = seeds;
      else if (g.seed) plan.seeds = {*g.seed};
      if (parallel) plan.parallel = true;
      const auto r = pipeline::run_experiment_matrix(plan, real_dir, synth_dir, out, &std::cerr);
      std::cout << metrics::to_markdown(r);
      return kOk;
    }

    if (*gradcheck) {
      const std::uint64_t seed = g.seed.value_or(1);
      auto results = gradcheck::run_op_suite(seed);
      const auto penalty = gradcheck::run_penalty_suite(seed);
      results.insert(results.end(), penalty.begin(), penalty.end());
      gradcheck::print_results(results, std::cout);
      for (const auto& r : results) {
        if (!r.pass()) return kRuntime;
      }
      return kOk;
    }

    if (*audit) {
      if (audit_depth < 1 || audit_depth > 9) throw std::invalid_argument("--depth must lie in 1..9");
      const auto report = net::audit_shapes(audit_depth);
      net::print_audit(report, std::cout);
      return report.passed() ? kOk : kRuntime;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kValidation;
}
