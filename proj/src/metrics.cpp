#include "msggan/metrics.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace msggan::metrics {

namespace fs = std::filesystem;
using nlohmann::json;

ConfusionMatrix confusion(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size()) {
    throw std::invalid_argument("confusion: prediction and label counts differ");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int p = predicted[i], t = truth[i];
    if ((p != 0 && p != 1) || (t != 0 && t != 1)) {
      throw std::invalid_argument("confusion: labels must be 0 or 1");
    }
    if (p == 1 && t == 1) ++cm.tp;
    else if (p == 1) ++cm.fp;
    else if (t == 1) ++cm.fn;
    else ++cm.tn;
  }
  return cm;
}

ClassScores class_scores(const ConfusionMatrix& cm) {
  ClassScores s;
  if (cm.tp + cm.fp == 0) s.precision_undefined = true;
  else s.precision = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp);
  if (cm.tp + cm.fn == 0) s.recall_undefined = true;
  else s.recall = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
  if (s.precision + s.recall == 0.0) s.f1_undefined = true;
  else s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

bool Metrics::any_undefined() const {
  for (const auto& c : per_class) {
    if (c.precision_undefined || c.recall_undefined || c.f1_undefined) return true;
  }
  return false;
}

Metrics compute_metrics(const ConfusionMatrix& cm) {
  if (cm.tp < 0 || cm.fp < 0 || cm.fn < 0 || cm.tn < 0) {
    throw std::invalid_argument("compute_metrics: negative count");
  }
  if (cm.total() == 0) throw std::invalid_argument("compute_metrics: empty test set");
  Metrics m;
  m.accuracy = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
  m.per_class[0] = class_scores(cm.flipped());
  m.per_class[1] = class_scores(cm);
  m.precision = (m.per_class[0].precision + m.per_class[1].precision) / 2.0;
  m.recall = (m.per_class[0].recall + m.per_class[1].recall) / 2.0;
  m.f1 = (m.per_class[0].f1 + m.per_class[1].f1) / 2.0;
  return m;
}

std::vector<SummaryRow> summarize(const MetricsReport& report) {
  std::vector<SummaryRow> out;
  std::map<std::string, std::vector<const MetricsRow*>> groups;
  for (const auto& r : report.rows) {
    if (groups[r.scenario].empty()) out.push_back({r.scenario, 0, {}, {}});
    groups[r.scenario].push_back(&r);
  }
  for (auto& s : out) {
    const auto& rows = groups[s.scenario];
    s.runs = rows.size();
    for (int k = 0; k < 4; ++k) {
      auto value = [k](const MetricsRow* r) {
        const double v[4] = {r->metrics.accuracy, r->metrics.precision, r->metrics.recall,
                             r->metrics.f1};
        return v[k];
      };
      double sum = 0.0;
      for (auto* r : rows) sum += value(r);
      const double mean = sum / static_cast<double>(rows.size());
      double ss = 0.0;
      for (auto* r : rows) ss += (value(r) - mean) * (value(r) - mean);
      s.mean[static_cast<std::size_t>(k)] = mean;
      s.stddev[static_cast<std::size_t>(k)] =
          rows.size() > 1 ? std::sqrt(ss / static_cast<double>(rows.size() - 1)) : 0.0;
    }
  }
  return out;
}

std::string format_2dp(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

// ---- JSON ----

namespace {

json scores_json(const ClassScores& s) {
  return {{"precision", s.precision},
          {"recall", s.recall},
          {"f1", s.f1},
          {"precision_undefined", s.precision_undefined},
          {"recall_undefined", s.recall_undefined},
          {"f1_undefined", s.f1_undefined}};
}

ClassScores scores_from(const json& j) {
  ClassScores s;
  s.precision = j.at("precision").get<double>();
  s.recall = j.at("recall").get<double>();
  s.f1 = j.at("f1").get<double>();
  s.precision_undefined = j.at("precision_undefined").get<bool>();
  s.recall_undefined = j.at("recall_undefined").get<bool>();
  s.f1_undefined = j.at("f1_undefined").get<bool>();
  return s;
}

}  // namespace

std::string to_json(const MetricsReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"scenario", r.scenario},
                    {"seed", r.seed},
                    {"train_size", r.train_size},
                    {"test_size", r.test_size},
                    {"confusion", {{"tp", r.cm.tp}, {"fp", r.cm.fp}, {"fn", r.cm.fn}, {"tn", r.cm.tn}}},
                    {"accuracy", r.metrics.accuracy},
                    {"precision", r.metrics.precision},
                    {"recall", r.metrics.recall},
                    {"f1", r.metrics.f1},
                    {"per_class", {scores_json(r.metrics.per_class[0]),
                                   scores_json(r.metrics.per_class[1])}}});
  }
  json summary = json::array();
  for (const auto& s : summarize(report)) {
    summary.push_back({{"scenario", s.scenario}, {"runs", s.runs}, {"mean", s.mean},
                       {"stddev", s.stddev}});
  }
  const json j = {{"title", report.title},
                  {"fingerprint", report.fingerprint},
                  {"seeds", report.seeds},
                  {"reference", report.reference},
                  {"averaging", "macro"},
                  {"rows", rows},
                  {"summary", summary}};
  return j.dump(2) + "\n";
}

MetricsReport from_json(const std::string& text) {
  MetricsReport report;
  try {
    const json j = json::parse(text);
    report.title = j.at("title").get<std::string>();
    report.fingerprint = j.at("fingerprint").get<std::string>();
    report.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    report.reference = j.at("reference").get<bool>();
    for (const auto& r : j.at("rows")) {
      MetricsRow row;
      row.scenario = r.at("scenario").get<std::string>();
      row.seed = r.at("seed").get<std::uint64_t>();
      row.train_size = r.at("train_size").get<std::int64_t>();
      row.test_size = r.at("test_size").get<std::int64_t>();
      const auto& c = r.at("confusion");
      row.cm = {c.at("tp").get<std::int64_t>(), c.at("fp").get<std::int64_t>(),
                c.at("fn").get<std::int64_t>(), c.at("tn").get<std::int64_t>()};
      row.metrics.accuracy = r.at("accuracy").get<double>();
      row.metrics.precision = r.at("precision").get<double>();
      row.metrics.recall = r.at("recall").get<double>();
      row.metrics.f1 = r.at("f1").get<double>();
      row.metrics.per_class[0] = scores_from(r.at("per_class").at(0));
      row.metrics.per_class[1] = scores_from(r.at("per_class").at(1));
      report.rows.push_back(std::move(row));
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("metrics report: malformed JSON: ") + e.what());
  }
  return report;
}

// ---- CSV / markdown ----

std::string to_csv(const MetricsReport& report) {
  std::ostringstream os;
  os << "scenario,seed,train_size,test_size,accuracy,precision,recall,f1,tp,fp,fn,tn,"
        "precision_0,recall_0,f1_0,precision_1,recall_1,f1_1,undefined\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const auto& r : report.rows) {
    const auto& m = r.metrics;
    os << r.scenario << ',' << r.seed << ',' << r.train_size << ',' << r.test_size << ','
       << num(m.accuracy) << ',' << num(m.precision) << ',' << num(m.recall) << ',' << num(m.f1)
       << ',' << r.cm.tp << ',' << r.cm.fp << ',' << r.cm.fn << ',' << r.cm.tn;
    for (const auto& c : m.per_class) {
      os << ',' << num(c.precision) << ',' << num(c.recall) << ',' << num(c.f1);
    }
    os << ',' << (m.any_undefined() ? 1 : 0) << '\n';
  }
  return os.str();
}

std::string to_markdown(const MetricsReport& report) {
  std::ostringstream os;
  if (!report.title.empty()) os << "# " << report.title << "\n\n";
  if (!report.fingerprint.empty()) os << "config fingerprint: `" << report.fingerprint << "`\n";
  if (!report.seeds.empty()) {
    os << "seeds:";
    for (auto s : report.seeds) os << ' ' << s;
    os << "\n";
  }
  if (!report.fingerprint.empty() || !report.seeds.empty()) os << "\n";
  os << "| Train/Test Data | Accuracy | Precision | Recall | F1 Score |\n"
     << "|---|---|---|---|---|\n";
  const auto summary = summarize(report);
  for (const auto& s : summary) {
    os << "| " << s.scenario;
    for (double v : s.mean) os << " | " << format_2dp(v);
    os << " |\n";
  }
  const bool multi = std::any_of(summary.begin(), summary.end(),
                                 [](const SummaryRow& s) { return s.runs > 1; });
  if (multi) {
    os << "\nStandard deviation over seeds:\n\n"
       << "| Train/Test Data | Accuracy | Precision | Recall | F1 Score |\n"
       << "|---|---|---|---|---|\n";
    for (const auto& s : summary) {
      os << "| " << s.scenario;
      for (double v : s.stddev) os << " | " << format_2dp(v);
      os << " |\n";
    }
    os << "\nPer seed:\n\n| Train/Test Data | Seed | Accuracy | Precision | Recall | F1 Score |\n"
       << "|---|---|---|---|---|---|\n";
    for (const auto& r : report.rows) {
      os << "| " << r.scenario << " | " << r.seed << " | " << format_2dp(r.metrics.accuracy)
         << " | " << format_2dp(r.metrics.precision) << " | " << format_2dp(r.metrics.recall)
         << " | " << format_2dp(r.metrics.f1) << " |\n";
    }
  }
  if (!report.reference) {
    os << "\nConfusion matrices (positive = label 1):\n\n"
       << "| Train/Test Data | Seed | Train | Test | TP | FP | FN | TN |\n"
       << "|---|---|---|---|---|---|---|---|\n";
    for (const auto& r : report.rows) {
      os << "| " << r.scenario << " | " << r.seed << " | " << r.train_size << " | "
         << r.test_size << " | " << r.cm.tp << " | " << r.cm.fp << " | " << r.cm.fn << " | "
         << r.cm.tn << " |\n";
    }
  }
  return os.str();
}

void emit_report(const MetricsReport& report, const fs::path& dir,
                 const std::vector<Format>& formats) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  for (auto f : formats) {
    const char* name = f == Format::Json ? "report.json" : f == Format::Csv ? "report.csv" : "report.md";
    const std::string text =
        f == Format::Json ? to_json(report) : f == Format::Csv ? to_csv(report) : to_markdown(report);
    std::ofstream os(dir / name, std::ios::binary);
    os << text;
    if (!os.good()) throw std::runtime_error("emit_report: cannot write " + (dir / name).string());
  }
}

MetricsReport reference_report() {
  MetricsReport r;
  r.title = "Published reference values";
  r.reference = true;
  const struct {
    const char* name;
    double v[4];
  } rows[] = {{"Real/Real", {0.84, 0.84, 0.84, 0.84}},
              {"Synthetic/Synthetic", {0.99, 0.98, 0.98, 0.98}},
              {"Real/Synthetic", {0.81, 0.82, 0.78, 0.78}},
              {"Synthetic/Real", {0.76, 0.77, 0.76, 0.76}}};
  for (const auto& row : rows) {
    MetricsRow m;
    m.scenario = row.name;
    m.metrics.accuracy = row.v[0];
    m.metrics.precision = row.v[1];
    m.metrics.recall = row.v[2];
    m.metrics.f1 = row.v[3];
    r.rows.push_back(m);
  }
  return r;
}

std::string fingerprint(const std::string& canonical_text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical_text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

}  // namespace msggan::metrics
