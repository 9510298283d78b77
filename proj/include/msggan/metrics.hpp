#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

// Confusion matrices, macro-averaged binary metrics and the report formats.
namespace msggan::metrics {

// Positive class is label 1.
struct ConfusionMatrix {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }
  // The same counts seen with label 0 as the positive class.
  ConfusionMatrix flipped() const { return {tn, fn, fp, tp}; }
  bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion(const std::vector<int>& predicted, const std::vector<int>& truth);

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Set when the corresponding denominator was zero and the value forced to 0.
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
  bool operator==(const ClassScores&) const = default;
};

ClassScores class_scores(const ConfusionMatrix& cm);

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;  // macro over both classes
  double recall = 0.0;
  double f1 = 0.0;
  std::array<ClassScores, 2> per_class{};  // indexed by label
  bool any_undefined() const;
  bool operator==(const Metrics&) const = default;
};

// Throws std::invalid_argument on an empty matrix.
Metrics compute_metrics(const ConfusionMatrix& cm);

struct MetricsRow {
  std::string scenario;  // "Real/Real", ...
  std::uint64_t seed = 0;
  std::int64_t train_size = 0;
  std::int64_t test_size = 0;
  ConfusionMatrix cm;
  Metrics metrics;
  bool operator==(const MetricsRow&) const = default;
};

struct MetricsReport {
  std::string title;
  std::string fingerprint;
  std::vector<std::uint64_t> seeds;
  std::vector<MetricsRow> rows;
  // Published values carried without confusion matrices.
  bool reference = false;
  bool operator==(const MetricsReport&) const = default;
};

struct SummaryRow {
  std::string scenario;
  std::size_t runs = 0;
  std::array<double, 4> mean{};    // accuracy, precision, recall, f1
  std::array<double, 4> stddev{};  // sample standard deviation; 0 for one run
};
// One row per scenario in first-appearance order.
std::vector<SummaryRow> summarize(const MetricsReport& report);

// Two decimals via printf rounding of the exact binary value, so exact ties
// go to the even digit (0.125 -> 0.12) and 2/3 -> 0.67.
std::string format_2dp(double v);

std::string to_json(const MetricsReport& report);
MetricsReport from_json(const std::string& text);
std::string to_csv(const MetricsReport& report);
// Table 3 layout; with several seeds each cell is the mean over seeds and a
// per-seed table follows.
std::string to_markdown(const MetricsReport& report);

enum class Format { Json, Csv, Markdown };
// Writes report.<ext> under dir for each requested format.
void emit_report(const MetricsReport& report, const std::filesystem::path& dir,
                 const std::vector<Format>& formats = {Format::Json, Format::Csv,
                                                        Format::Markdown});

// The published four-scenario table.
MetricsReport reference_report();

// 64-bit FNV-1a as 16 lowercase hex digits.
std::string fingerprint(const std::string& canonical_text);

}  // namespace msggan::metrics
