#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "msggan/audit.hpp"
#include "msggan/gradcheck.hpp"
#include "msggan/metrics.hpp"
#include "msggan/ops.hpp"
#include "msggan/pipeline.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace msggan;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from_vector(shape, std::span<const double>(a.data(), static_cast<std::size_t>(a.size())),
                             DType::F64);
}

Array to_array(const Tensor& t) {
  const auto v = t.to_vector();
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::dict confusion_dict(const metrics::ConfusionMatrix& cm) {
  py::dict d;
  d["tp"] = cm.tp;
  d["fp"] = cm.fp;
  d["fn"] = cm.fn;
  d["tn"] = cm.tn;
  return d;
}

py::dict metrics_dict(const metrics::Metrics& m) {
  py::dict d;
  d["accuracy"] = m.accuracy;
  d["precision"] = m.precision;
  d["recall"] = m.recall;
  d["f1"] = m.f1;
  py::list per;
  for (const auto& c : m.per_class) {
    py::dict s;
    s["precision"] = c.precision;
    s["recall"] = c.recall;
    s["f1"] = c.f1;
    per.append(s);
  }
  d["per_class"] = per;
  return d;
}

py::dict row_dict(const metrics::MetricsRow& r) {
  py::dict d = metrics_dict(r.metrics);
  d["scenario"] = r.scenario;
  d["train_size"] = r.train_size;
  d["test_size"] = r.test_size;
  d["confusion"] = confusion_dict(r.cm);
  return d;
}

void finish_keys(config::KeyValues& kv, const char* context) { config::reject_unknown(kv, context); }

}  // namespace

PYBIND11_MODULE(_msggan, m) {
  m.doc() = "Multi-scale GAN synthesis and real-vs-synthetic classification";

  py::register_exception<config::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<gan::NonFiniteError>(m, "NonFiniteError", PyExc_ArithmeticError);

  m.def("audit_shapes", [](int depth) {
    if (depth < 1 || depth > 9) throw std::invalid_argument("depth must lie in 1..9");
    const auto r = net::audit_shapes(depth);
    py::list rows;
    for (const auto& l : r.lines) {
      rows.append(py::make_tuple(l.network, l.block, l.op, l.activation, shape_str(l.expected),
                                 shape_str(l.actual), l.pass));
    }
    return py::make_tuple(r.passed(), rows);
  }, py::arg("depth") = 5,
        "(passed, rows); each row is (network, block, op, activation, expected, actual, pass).");

  m.def("gradcheck", [](std::uint64_t seed) {
    auto results = gradcheck::run_op_suite(seed);
    const auto pen = gradcheck::run_penalty_suite(seed);
    results.insert(results.end(), pen.begin(), pen.end());
    py::list out;
    for (const auto& r : results) out.append(py::make_tuple(r.name, r.error, r.tolerance, r.pass()));
    return out;
  }, py::arg("seed") = 1, "Finite-difference suite: list of (name, error, tolerance, pass).");

  m.def("minibatch_stddev", [](const Array& x, double eps) {
    return to_array(ad::minibatch_stddev(to_tensor(x), eps));
  }, py::arg("x"), py::arg("eps") = 1e-8);

  m.def("wgan_losses", [](const Array& d_real, const Array& d_fake, double gp) {
    const auto l = gan::wgan_losses(to_tensor(d_real), to_tensor(d_fake), Tensor::scalar(gp, DType::F64));
    return py::make_tuple(l.d_loss.item(), l.g_loss.item());
  }, py::arg("d_real"), py::arg("d_fake"), py::arg("gp") = 0.0, "(d_loss, g_loss)");

  m.def("confusion", [](const std::vector<int>& pred, const std::vector<int>& truth) {
    return confusion_dict(metrics::confusion(pred, truth));
  }, py::arg("predicted"), py::arg("truth"));

  m.def("compute_metrics", [](const std::vector<int>& pred, const std::vector<int>& truth) {
    return metrics_dict(metrics::compute_metrics(metrics::confusion(pred, truth)));
  }, py::arg("predicted"), py::arg("truth"), "Accuracy and macro-averaged precision/recall/F1.");

  m.def("reference_report_json", [] { return metrics::to_json(metrics::reference_report()); });
  m.def("report_markdown", [](const std::string& json) {
    return metrics::to_markdown(metrics::from_json(json));
  }, py::arg("report_json"));

  m.def("split", [](const fs::path& data_dir, std::uint64_t seed, bool proportional,
                    std::size_t gan_per_class, std::size_t cls_per_class, double train_frac) {
    const auto ds = data::ingest_directory(data_dir);
    auto plan = data::make_split(ds, seed, proportional, {gan_per_class, cls_per_class});
    auto tt = data::train_test_split(ds, plan.cls_pool, train_frac, mix_seed(seed, 0x7e57));
    plan.train = std::move(tt.train);
    plan.test = std::move(tt.test);
    py::dict out;
    for (const auto& [name, subset] : plan.subsets()) {
      py::list items;
      for (auto i : *subset) items.append(py::make_tuple(ds.records[i].path, ds.records[i].label));
      out[py::str(name)] = items;
    }
    return out;
  }, py::arg("data"), py::arg("seed") = 0, py::arg("proportional") = false,
        py::arg("gan_per_class") = 40000, py::arg("cls_per_class") = 38000,
        py::arg("train_frac") = 0.7,
        "Pools and train/test subsets as {name: [(relative path, label), ...]}.");

  m.def("train_gan", [](const fs::path& data_dir, const fs::path& out, int label,
                        config::KeyValues kv, std::optional<fs::path> split, bool resume) {
    pipeline::GanRunOptions opts;
    pipeline::apply_gan_keys(kv, opts);
    finish_keys(kv, "train_gan");
    opts.label = label;
    opts.data = data_dir;
    opts.split = std::move(split);
    opts.out = out;
    opts.resume = resume;
    py::gil_scoped_release nogil;
    const auto r = pipeline::run_gan_training(opts);
    return std::make_tuple(r.first_step, r.last_step, r.checkpoint);
  }, py::arg("data"), py::arg("out"), py::arg("label"), py::arg("config"),
        py::arg("split") = std::nullopt, py::arg("resume") = true,
        "(first_step, last_step, checkpoint_dir)");

  m.def("generate", [](const fs::path& checkpoint, std::int64_t count, const fs::path& out, int label,
                       std::uint64_t seed, int batch_size) {
    pipeline::GenerateOptions opts{checkpoint, count, label, out, seed, batch_size};
    py::gil_scoped_release nogil;
    return pipeline::generate_samples(opts);
  }, py::arg("checkpoint"), py::arg("count"), py::arg("out"), py::arg("label") = 1,
        py::arg("seed") = 0, py::arg("batch_size") = 16);

  m.def("train_classifier", [](const fs::path& data_dir, const fs::path& out, config::KeyValues kv) {
    pipeline::ClassifierSetup setup;
    pipeline::apply_classifier_keys(kv, setup);
    finish_keys(kv, "train_classifier");
    pipeline::ClassifierRun run;
    {
      py::gil_scoped_release nogil;
      run = pipeline::train_classifier_on(setup, data_dir, out);
    }
    py::dict d;
    d["epoch_loss"] = run.report.epoch_loss;
    d["steps"] = run.report.steps;
    d["model"] = run.model;
    return d;
  }, py::arg("data"), py::arg("out"), py::arg("config"));

  m.def("evaluate", [](const fs::path& model, const fs::path& data_dir, const fs::path& out) {
    metrics::MetricsRow row;
    {
      py::gil_scoped_release nogil;
      row = pipeline::evaluate_on(model, data_dir, out);
    }
    return row_dict(row);
  }, py::arg("model"), py::arg("data"), py::arg("out"));

  m.def("experiment_matrix", [](const fs::path& real, const fs::path& synthetic, const fs::path& out,
                                config::KeyValues kv, std::vector<std::uint64_t> seeds) {
    pipeline::ExperimentPlan plan;
    pipeline::apply_plan_keys(kv, plan);
    finish_keys(kv, "experiment_matrix");
    if (!seeds.empty()) plan.seeds = std::move(seeds);
    py::gil_scoped_release nogil;
    return metrics::to_json(pipeline::run_experiment_matrix(plan, real, synthetic, out));
  }, py::arg("real"), py::arg("synthetic"), py::arg("out"), py::arg("config"),
        py::arg("seeds") = std::vector<std::uint64_t>{}, "Report JSON text.");
}
