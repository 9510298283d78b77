#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "msggan/config.hpp"
#include "msggan/metrics.hpp"
#include "msggan/pipeline.hpp"

using namespace msggan;
using namespace msggan::metrics;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

pipeline::ExperimentPlan small_plan() {
  pipeline::ExperimentPlan plan;
  plan.classifier.net.widths = {4, 8, 8, 8};
  plan.classifier.net.input_size = 16;
  plan.classifier.transfer.input_size = 16;
  plan.classifier.transfer.epochs = 3;
  plan.classifier.transfer.batch_size = 8;
  plan.classifier.transfer.adam.learning_rate = 1e-2;
  plan.pretext.images = 16;
  plan.pretext.epochs = 1;
  plan.pretext.batch_size = 8;
  return plan;
}

}  // namespace

TEST_CASE("perfect predictions give unit metrics") {
  const auto m = compute_metrics(confusion({1, 0, 1, 0}, {1, 0, 1, 0}));
  CHECK(m.accuracy == 1.0);
  CHECK(m.precision == 1.0);
  CHECK(m.recall == 1.0);
  CHECK(m.f1 == 1.0);
  CHECK_FALSE(m.any_undefined());
}

TEST_CASE("hand-evaluated confusion matrix") {
  const ConfusionMatrix cm{3, 1, 2, 4};
  const auto m = compute_metrics(cm);
  CHECK(m.per_class[1].precision == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(m.per_class[1].recall == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(m.per_class[1].f1 == doctest::Approx(2 * 0.75 * 0.6 / 1.35).epsilon(1e-15));
  CHECK(format_2dp(m.per_class[1].f1) == "0.67");
  // Negative class: tp=4, fp=2, fn=1.
  CHECK(m.per_class[0].precision == doctest::Approx(4.0 / 6.0));
  CHECK(m.per_class[0].recall == doctest::Approx(0.8));
  CHECK(m.accuracy == doctest::Approx(0.7));
  CHECK(m.precision == doctest::Approx((0.75 + 4.0 / 6.0) / 2));
}

TEST_CASE("metrics match a brute-force recount on random labelings") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> pred(1000), truth(1000);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      pred[i] = static_cast<int>(rng.below(2));
      truth[i] = static_cast<int>(rng.below(2));
    }
    const auto m = compute_metrics(confusion(pred, truth));
    double correct = 0;
    double prec[2], rec[2], f1[2];
    for (int c = 0; c < 2; ++c) {
      double hit = 0, predicted = 0, actual = 0;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        hit += pred[i] == c && truth[i] == c;
        predicted += pred[i] == c;
        actual += truth[i] == c;
      }
      prec[c] = hit / predicted;
      rec[c] = hit / actual;
      f1[c] = 2 * prec[c] * rec[c] / (prec[c] + rec[c]);
    }
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == truth[i];
    CHECK(std::abs(m.accuracy - correct / 1000.0) < 1e-12);
    CHECK(std::abs(m.precision - (prec[0] + prec[1]) / 2) < 1e-12);
    CHECK(std::abs(m.recall - (rec[0] + rec[1]) / 2) < 1e-12);
    CHECK(std::abs(m.f1 - (f1[0] + f1[1]) / 2) < 1e-12);
  }
}

TEST_CASE("balanced data: accuracy equals macro recall") {
  Rng rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> pred(200), truth(200);
    for (std::size_t i = 0; i < truth.size(); ++i) {
      truth[i] = static_cast<int>(i % 2);
      pred[i] = static_cast<int>(rng.below(2));
    }
    const auto m = compute_metrics(confusion(pred, truth));
    CHECK(m.accuracy == doctest::Approx(m.recall).epsilon(1e-12));
  }
}

TEST_CASE("zero denominators are flagged") {
  const auto m = compute_metrics({0, 0, 3, 5});  // never predicts positive
  CHECK(m.per_class[1].precision == 0.0);
  CHECK(m.per_class[1].precision_undefined);
  CHECK(m.per_class[1].f1_undefined);
  CHECK(m.any_undefined());
  CHECK_THROWS_AS(compute_metrics({}), std::invalid_argument);
  CHECK_THROWS_AS(confusion({0, 1}, {1}), std::invalid_argument);
  CHECK_THROWS_AS(confusion({2}, {1}), std::invalid_argument);
}

TEST_CASE("two-decimal display") {
  CHECK(format_2dp(2.0 / 3.0) == "0.67");
  CHECK(format_2dp(0.125) == "0.12");
  CHECK(format_2dp(0.375) == "0.38");
  CHECK(format_2dp(1.0) == "1.00");
  CHECK(format_2dp(0.84) == "0.84");
}

TEST_CASE("reference report renders the published table") {
  const auto md = to_markdown(reference_report());
  CHECK(md.find("| Train/Test Data | Accuracy | Precision | Recall | F1 Score |") != std::string::npos);
  CHECK(md.find("| Real/Real | 0.84 | 0.84 | 0.84 | 0.84 |") != std::string::npos);
  CHECK(md.find("| Synthetic/Synthetic | 0.99 | 0.98 | 0.98 | 0.98 |") != std::string::npos);
  CHECK(md.find("| Real/Synthetic | 0.81 | 0.82 | 0.78 | 0.78 |") != std::string::npos);
  CHECK(md.find("| Synthetic/Real | 0.76 | 0.77 | 0.76 | 0.76 |") != std::string::npos);
  CHECK(md.find("Real/Real") < md.find("Synthetic/Synthetic"));
  CHECK(md.find("Synthetic/Synthetic") < md.find("Real/Synthetic"));
  CHECK(md.find("Real/Synthetic") < md.find("Synthetic/Real"));
}

TEST_CASE("JSON round trip and CSV layout") {
  MetricsReport r;
  r.title = "t";
  r.fingerprint = fingerprint("x");
  r.seeds = {3, 4};
  Rng rng(23);
  for (std::uint64_t s : r.seeds) {
    for (const char* name : {"Real/Real", "Synthetic/Real"}) {
      MetricsRow row;
      row.scenario = name;
      row.seed = s;
      row.train_size = 70;
      row.test_size = 30;
      row.cm = {static_cast<std::int64_t>(rng.below(10)), static_cast<std::int64_t>(rng.below(10)),
                static_cast<std::int64_t>(rng.below(10)), 1 + static_cast<std::int64_t>(rng.below(10))};
      row.metrics = compute_metrics(row.cm);
      r.rows.push_back(row);
    }
  }
  CHECK(from_json(to_json(r)) == r);
  CHECK(to_json(from_json(to_json(r))) == to_json(r));
  const auto csv = to_csv(r);
  CHECK(csv.rfind("scenario,seed,train_size,test_size,accuracy,precision,recall,f1,tp,fp,fn,tn", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  const auto md = to_markdown(r);
  CHECK(md.find("Per seed") != std::string::npos);
  CHECK(summarize(r).size() == 2);
  CHECK(summarize(r)[0].runs == 2);
  CHECK_THROWS(from_json("{\"rows\": 3}"));

  const auto dir = fixtures::scratch_dir("emit");
  emit_report(r, dir);
  CHECK(slurp(dir / "report.json") == to_json(r));
  CHECK(fs::exists(dir / "report.csv"));
  CHECK(fs::exists(dir / "report.md"));
  fs::remove_all(dir);
}

TEST_CASE("FNV-1a fingerprint") {
  CHECK(fingerprint("") == "cbf29ce484222325");
  CHECK(fingerprint("a") == "af63dc4c8601ec8c");
  CHECK(fingerprint("foobar") == "85944171f73967e8");
}

TEST_CASE("flat key/value config") {
  using namespace config;
  const auto kv = parse_key_values("# comment\nseed = 7\n\nlearning_rate=0.01 # inline\n");
  CHECK(kv.size() == 2);
  CHECK(kv.at("seed") == "7");
  CHECK(kv.at("learning_rate") == "0.01");
  CHECK_THROWS_AS(parse_key_values("a=1\na=2"), ConfigError);
  CHECK_THROWS_AS(parse_key_values("novalue"), ConfigError);
  CHECK_THROWS_AS(to_double("x", "abc"), ConfigError);
  CHECK_THROWS_AS(to_uint("x", "-1"), ConfigError);
  CHECK_THROWS_AS(to_bool("x", "maybe"), ConfigError);
  CHECK(to_int_list("w", "1, 2,3") == std::vector<std::int64_t>{1, 2, 3});

  pipeline::GanRunOptions g;
  auto gk = parse_key_values("depth=3\nsteps=12\nlatent_dim=16\nschedule=8,8,8\nbogus=1");
  pipeline::apply_gan_keys(gk, g);
  CHECK(g.generator.depth == 3);
  CHECK(g.train.total_steps == 12);
  CHECK(g.generator.schedule == net::ChannelSchedule{8, 8, 8});
  CHECK_THROWS_AS(reject_unknown(gk, "train-gan"), ConfigError);

  pipeline::ExperimentPlan plan;
  auto pk = parse_key_values("profile=full\nseeds=1,2\nepochs=5\nparallel=true");
  pipeline::apply_plan_keys(pk, plan);
  CHECK(pk.empty());
  CHECK(plan.classifier.net.input_size == 224);
  CHECK(plan.classifier.transfer.input_size == 224);
  CHECK(plan.seeds == std::vector<std::uint64_t>{1, 2});
  CHECK(plan.parallel);
}

TEST_CASE("default plan enumerates the four scenarios in order") {
  const auto s = pipeline::default_scenarios();
  REQUIRE(s.size() == 4);
  CHECK(s[0].name() == "Real/Real");
  CHECK(s[1].name() == "Synthetic/Synthetic");
  CHECK(s[2].name() == "Real/Synthetic");
  CHECK(s[3].name() == "Synthetic/Real");
  pipeline::ExperimentPlan a, b;
  b.seeds = {5};
  CHECK(a.canonical_text() != b.canonical_text());
  b.parallel = true;
  b.seeds = a.seeds;
  CHECK(a.canonical_text() == b.canonical_text());
  b.train_frac = 1.0;
  CHECK_THROWS_AS(b.validate(), std::invalid_argument);
}

TEST_CASE("pretext textures are deterministic and balanced") {
  const auto a = pipeline::pretext_set(6, 16, 3, DType::F64);
  const auto b = pipeline::pretext_set(6, 16, 3, DType::F64);
  CHECK(a.labels == std::vector<int>{0, 1, 0, 1, 0, 1});
  CHECK(a.fetch({0, 5}).to_vector() == b.fetch({0, 5}).to_vector());
}

TEST_CASE("scenario matrix end to end") {
  const auto root = fixtures::scratch_dir("matrix");
  fixtures::write_corpus(root / "real", 10, 12, 1);
  fixtures::write_corpus(root / "synth", 8, 12, 2, 15.0);
  auto plan = small_plan();

  const auto r1 = pipeline::run_experiment_matrix(plan, root / "real", root / "synth", root / "out1");
  REQUIRE(r1.rows.size() == 4);
  CHECK(r1.rows[0].scenario == "Real/Real");
  CHECK(r1.rows[0].train_size == 14);
  CHECK(r1.rows[0].test_size == 6);
  CHECK(r1.rows[1].train_size == 11);  // floor(16·0.7)
  CHECK(r1.rows[1].test_size == 5);
  CHECK(r1.rows[2].train_size == 20);
  CHECK(r1.rows[2].test_size == 16);
  CHECK(r1.rows[3].train_size == 16);
  CHECK(r1.rows[3].test_size == 20);
  for (const auto& row : r1.rows) {
    CHECK(row.cm.total() == row.test_size);
    CHECK(row.metrics == compute_metrics(row.cm));
    for (double v : {row.metrics.accuracy, row.metrics.precision, row.metrics.recall, row.metrics.f1}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  for (const char* f : {"report.json", "report.csv", "report.md", "seed-0/backbone/manifest.txt",
                        "seed-0/real-real/classifier/manifest.txt", "seed-0/synthetic-real/result.json",
                        "seed-0/real-synthetic/predictions.csv"}) {
    CHECK_MESSAGE(fs::exists(root / "out1" / f), f);
  }

  SUBCASE("identical seeds give byte-identical reports") {
    pipeline::run_experiment_matrix(plan, root / "real", root / "synth", root / "out2");
    CHECK(slurp(root / "out1" / "report.json") == slurp(root / "out2" / "report.json"));
    CHECK(slurp(root / "out1" / "report.csv") == slurp(root / "out2" / "report.csv"));
  }
  SUBCASE("swapping the corpora exchanges rows") {
    const auto r2 =
        pipeline::run_experiment_matrix(plan, root / "synth", root / "real", root / "swapped");
    auto same = [](const MetricsRow& a, const MetricsRow& b) {
      return a.cm == b.cm && a.metrics == b.metrics && a.train_size == b.train_size &&
             a.test_size == b.test_size;
    };
    CHECK(same(r1.rows[0], r2.rows[1]));
    CHECK(same(r1.rows[1], r2.rows[0]));
    CHECK(same(r1.rows[2], r2.rows[3]));
    CHECK(same(r1.rows[3], r2.rows[2]));
  }
  SUBCASE("parallel scenarios match the sequential run") {
    plan.parallel = true;
    pipeline::run_experiment_matrix(plan, root / "real", root / "synth", root / "par");
    CHECK(slurp(root / "out1" / "report.json") == slurp(root / "par" / "report.json"));
  }
  fs::remove_all(root);
}

TEST_CASE("memorizable corpus gives perfect same-source rows") {
  const auto root = fixtures::scratch_dir("memo");
  fixtures::write_duplicated_corpus(root / "a", 10, 12);
  auto plan = small_plan();
  plan.classifier.transfer.epochs = 60;
  const auto r = pipeline::run_experiment_matrix(plan, root / "a", root / "a", root / "out");
  CHECK(r.rows[0].metrics.accuracy == 1.0);
  CHECK(r.rows[0].metrics.precision == 1.0);
  CHECK(r.rows[0].metrics.recall == 1.0);
  CHECK(r.rows[0].metrics.f1 == 1.0);
  fs::remove_all(root);
}

TEST_CASE("train-classifier and evaluate round trip") {
  const auto root = fixtures::scratch_dir("clsrun");
  fixtures::write_corpus(root / "data", 12, 12, 4);
  pipeline::ClassifierSetup setup;
  setup.net.widths = {4, 8, 8, 8};
  setup.net.input_size = 16;
  setup.transfer.freeze_backbone = false;
  setup.transfer.epochs = 10;
  setup.transfer.batch_size = 8;
  setup.transfer.adam.learning_rate = 1e-2;
  const auto run = pipeline::train_classifier_on(setup, root / "data", root / "train");
  CHECK(run.report.epoch_loss.size() == 10);
  CHECK(fs::exists(root / "train" / "loss.csv"));
  const auto row = pipeline::evaluate_on(run.model, root / "data", root / "eval");
  CHECK(row.test_size == 24);
  CHECK(row.metrics.accuracy >= 0.9);
  CHECK(fs::exists(root / "eval" / "predictions.csv"));
  CHECK(fs::exists(root / "eval" / "report.md"));
  fs::remove_all(root);
}

TEST_CASE("GAN runs resume bit-exactly and generate PNGs") {
  const auto root = fixtures::scratch_dir("ganrun");
  fixtures::write_corpus(root / "data", 6, 8, 5);
  pipeline::GanRunOptions opts;
  opts.generator.depth = 2;
  opts.generator.latent_dim = 8;
  opts.generator.schedule = {8, 8};
  opts.train.batch_size = 4;
  opts.train.total_steps = 6;
  opts.train.seed = 9;
  opts.train.sample_every = 3;
  opts.label = 1;
  opts.data = root / "data";

  opts.out = root / "straight";
  const auto full = pipeline::run_gan_training(opts);
  CHECK(full.first_step == 0);
  CHECK(full.last_step == 6);
  CHECK(fs::exists(root / "straight" / "samples" / "step-00000003.png"));

  opts.out = root / "resumed";
  opts.train.total_steps = 3;
  pipeline::run_gan_training(opts);
  opts.train.total_steps = 6;
  const auto second = pipeline::run_gan_training(opts);
  CHECK(second.first_step == 3);

  CHECK(slurp(root / "straight" / "telemetry.csv") == slurp(root / "resumed" / "telemetry.csv"));
  for (const auto& e : fs::recursive_directory_iterator(root / "straight" / "checkpoint")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root / "straight");
    CHECK_MESSAGE(slurp(e.path()) == slurp(root / "resumed" / rel), rel.string());
  }

  pipeline::GenerateOptions gen;
  gen.checkpoint = root / "straight" / "checkpoint";
  gen.count = 5;
  gen.batch_size = 2;
  gen.label = 1;
  gen.out = root / "synth";
  CHECK(pipeline::generate_samples(gen) == 5);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(root / "synth" / "1")) {
    ++files;
    const auto img = png::read(e.path());
    CHECK(img.width == 8);
  }
  CHECK(files == 5);

  SUBCASE("non-finite step leaves a diagnostic snapshot") {
    opts.out = root / "bad";
    opts.train.gp_lambda = INFINITY;
    CHECK_THROWS_AS(pipeline::run_gan_training(opts), gan::NonFiniteError);
    CHECK(fs::exists(root / "bad" / "failure" / "diagnostic.txt"));
    CHECK(fs::exists(root / "bad" / "failure" / "manifest.txt"));
  }
  SUBCASE("missing class is a validation error") {
    opts.out = root / "none";
    opts.label = 3;
    CHECK_THROWS_AS(pipeline::run_gan_training(opts), std::invalid_argument);
  }
  fs::remove_all(root);
}
