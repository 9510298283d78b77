#include "msggan/audit.hpp"

#include <algorithm>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace msggan::net {

namespace {

struct Literal {
  int block;
  const char* op;
  const char* activation;
  const char* shape;
};

// Generator, full nine-block model.
constexpr Literal kGeneratorTable[] = {
    {1, "Latent vector", "Norm", "512x1x1"},
    {1, "Conv 4x4", "LReLU", "512x4x4"},
    {1, "Conv 3x3", "LReLU", "512x4x4"},
    {2, "Upsample", "-", "512x8x8"},
    {2, "Conv 3x3", "LReLU", "512x8x8"},
    {2, "Conv 3x3", "LReLU", "512x8x8"},
    {3, "Upsample", "-", "512x16x16"},
    {3, "Conv 3x3", "LReLU", "512x16x16"},
    {3, "Conv 3x3", "LReLU", "512x16x16"},
    {4, "Upsample", "-", "512x32x32"},
    {4, "Conv 3x3", "LReLU", "512x32x32"},
    {4, "Conv 3x3", "LReLU", "512x32x32"},
    {5, "Upsample", "-", "512x64x64"},
    {5, "Conv 3x3", "LReLU", "256x64x64"},
    {5, "Conv 3x3", "LReLU", "256x64x64"},
    {6, "Upsample", "-", "256x128x128"},
    {6, "Conv 3x3", "LReLU", "128x128x128"},
    {6, "Conv 3x3", "LReLU", "128x128x128"},
    {7, "Upsample", "-", "128x256x256"},
    {7, "Conv 3x3", "LReLU", "64x256x256"},
    {7, "Conv 3x3", "LReLU", "64x256x256"},
    {8, "Upsample", "-", "64x512x512"},
    {8, "Conv 3x3", "LReLU", "32x512x512"},
    {8, "Conv 3x3", "LReLU", "32x512x512"},
    {9, "Upsample", "-", "32x1024x1024"},
    {9, "Conv 3x3", "LReLU", "16x1024x1024"},
    {9, "Conv 3x3", "LReLU", "16x1024x1024"},
};

// Discriminator, full nine-block model; block 1 reads the 1024×1024 image.
// The final block's second convolution maps 4×4 to 1×1 and is a 4×4 kernel.
constexpr Literal kDiscriminatorTable[] = {
    {1, "Raw RGB images", "-", "3x1024x1024"},
    {1, "FromRGB", "-", "16x1024x1024"},
    {1, "MiniBatchStd", "-", "17x1024x1024"},
    {1, "Conv 3x3", "LReLU", "16x1024x1024"},
    {1, "Conv 3x3", "LReLU", "32x1024x1024"},
    {1, "AvgPool", "-", "32x512x512"},
    {2, "Raw RGB images", "-", "3x512x512"},
    {2, "Concat/phi_simple", "-", "35x512x512"},
    {2, "MiniBatchStd", "-", "36x512x512"},
    {2, "Conv 3x3", "LReLU", "32x512x512"},
    {2, "Conv 3x3", "LReLU", "64x512x512"},
    {2, "AvgPool", "-", "64x256x256"},
    {3, "Raw RGB images", "-", "3x256x256"},
    {3, "Concat/phi_simple", "-", "67x256x256"},
    {3, "MiniBatchStd", "-", "68x256x256"},
    {3, "Conv 3x3", "LReLU", "64x256x256"},
    {3, "Conv 3x3", "LReLU", "128x256x256"},
    {3, "AvgPool", "-", "128x128x128"},
    {4, "Raw RGB images", "-", "3x128x128"},
    {4, "Concat/phi_simple", "-", "131x128x128"},
    {4, "MiniBatchStd", "-", "132x128x128"},
    {4, "Conv 3x3", "LReLU", "128x128x128"},
    {4, "Conv 3x3", "LReLU", "256x128x128"},
    {4, "AvgPool", "-", "256x64x64"},
    {5, "Raw RGB images", "-", "3x64x64"},
    {5, "Concat/phi_simple", "-", "259x64x64"},
    {5, "MiniBatchStd", "-", "260x64x64"},
    {5, "Conv 3x3", "LReLU", "256x64x64"},
    {5, "Conv 3x3", "LReLU", "512x64x64"},
    {5, "AvgPool", "-", "512x32x32"},
    {6, "Raw RGB images", "-", "3x32x32"},
    {6, "Concat/phi_simple", "-", "515x32x32"},
    {6, "MiniBatchStd", "-", "516x32x32"},
    {6, "Conv 3x3", "LReLU", "512x32x32"},
    {6, "Conv 3x3", "LReLU", "512x32x32"},
    {6, "AvgPool", "-", "512x16x16"},
    {7, "Raw RGB images", "-", "3x16x16"},
    {7, "Concat/phi_simple", "-", "515x16x16"},
    {7, "MiniBatchStd", "-", "516x16x16"},
    {7, "Conv 3x3", "LReLU", "512x16x16"},
    {7, "Conv 3x3", "LReLU", "512x16x16"},
    {7, "AvgPool", "-", "512x8x8"},
    {8, "Raw RGB images", "-", "3x8x8"},
    {8, "Concat/phi_simple", "-", "515x8x8"},
    {8, "MiniBatchStd", "-", "516x8x8"},
    {8, "Conv 3x3", "LReLU", "512x8x8"},
    {8, "Conv 3x3", "LReLU", "512x8x8"},
    {8, "AvgPool", "-", "512x4x4"},
    {9, "Raw RGB images", "-", "3x4x4"},
    {9, "Concat/phi_simple", "-", "515x4x4"},
    {9, "MiniBatchStd", "-", "516x4x4"},
    {9, "Conv 3x3", "LReLU", "512x4x4"},
    {9, "Conv 4x4", "LReLU", "512x1x1"},
    {9, "Fully Connected", "Linear", "1x1x1"},
};

constexpr int kFullDepth = 9;

Shape parse_shape(const char* text) {
  Shape s;
  std::istringstream is(text);
  std::string part;
  while (std::getline(is, part, 'x')) s.push_back(std::stoll(part));
  return s;
}

ReferenceRow to_row(const Literal& l) {
  return {l.block, l.op, l.activation, parse_shape(l.shape)};
}

void check_depth(int depth) {
  if (depth < 1 || depth > kFullDepth) {
    throw std::invalid_argument("reference tables cover depths 1..9, got " +
                                std::to_string(depth));
  }
}

}  // namespace

std::vector<ReferenceRow> reference_generator_table(int depth) {
  check_depth(depth);
  std::vector<ReferenceRow> rows;
  for (const auto& l : kGeneratorTable) {
    if (l.block <= depth) rows.push_back(to_row(l));
  }
  return rows;
}

std::vector<ReferenceRow> reference_discriminator_table(int depth) {
  check_depth(depth);
  const int first = kFullDepth - depth + 1;
  std::vector<ReferenceRow> rows;
  if (depth < kFullDepth) {
    const auto sched = full_schedule();
    const auto c = sched[static_cast<std::size_t>(depth - 1)];
    const auto r = block_resolution(depth);
    const auto next = depth > 1 ? sched[static_cast<std::size_t>(depth - 2)] : c;
    rows.push_back({first, "Raw RGB images", "-", {3, r, r}});
    rows.push_back({first, "FromRGB", "-", {c, r, r}});
    rows.push_back({first, "MiniBatchStd", "-", {c + 1, r, r}});
    rows.push_back({first, "Conv 3x3", "LReLU", {c, r, r}});
    if (depth > 1) {
      rows.push_back({first, "Conv 3x3", "LReLU", {next, r, r}});
      rows.push_back({first, "AvgPool", "-", {next, r / 2, r / 2}});
    } else {
      rows.push_back({first, "Conv 4x4", "LReLU", {c, 1, 1}});
      rows.push_back({first, "Fully Connected", "Linear", {1, 1, 1}});
    }
  }
  for (const auto& l : kDiscriminatorTable) {
    if (l.block >= first && (depth == kFullDepth || l.block > first)) rows.push_back(to_row(l));
  }
  return rows;
}

bool AuditReport::passed() const { return !lines.empty() && failures() == 0; }

std::size_t AuditReport::failures() const {
  return static_cast<std::size_t>(
      std::count_if(lines.begin(), lines.end(), [](const AuditLine& l) { return !l.pass; }));
}

AuditReport audit_traces(int depth, const ShapeTrace& generator, const ShapeTrace& discriminator) {
  AuditReport report;
  report.depth = depth;

  ShapeTrace gen_main;
  for (const auto& row : generator) {
    if (row.rgb_tap) {
      const auto r = block_resolution(row.block);
      report.lines.push_back({"generator", row.block, row.op, row.activation, {3, r, r},
                              row.shape, row.shape == Shape{3, r, r}});
    } else {
      gen_main.push_back(row);
    }
  }

  auto compare = [&](const char* net, const std::vector<ReferenceRow>& expected,
                     const ShapeTrace& actual, int block_offset) {
    const auto n = std::max(expected.size(), actual.size());
    for (std::size_t i = 0; i < n; ++i) {
      AuditLine line;
      line.network = net;
      if (i < expected.size()) {
        line.block = expected[i].block;
        line.op = expected[i].op;
        line.activation = expected[i].activation;
        line.expected = expected[i].shape;
      }
      if (i < actual.size()) {
        line.actual = actual[i].shape;
        if (i >= expected.size()) {
          line.block = actual[i].block + block_offset;
          line.op = actual[i].op;
          line.activation = actual[i].activation;
        }
      }
      line.pass = i < expected.size() && i < actual.size() && expected[i].shape == actual[i].shape &&
                  expected[i].op == actual[i].op &&
                  expected[i].activation == actual[i].activation;
      report.lines.push_back(std::move(line));
    }
  };
  compare("generator", reference_generator_table(depth), gen_main, 0);
  compare("discriminator", reference_discriminator_table(depth), discriminator,
          kFullDepth - depth);
  return report;
}

AuditReport audit_shapes(int depth) {
  check_depth(depth);
  const Generator g(GeneratorSpec::standard(depth), 0);
  const Discriminator d(DiscriminatorSpec::standard(depth), 0);
  return audit_traces(depth, g.shape_trace(), d.shape_trace());
}

void print_audit(const AuditReport& report, std::ostream& os) {
  os << "shape audit, depth " << report.depth << "\n";
  for (const auto& l : report.lines) {
    os << std::left << std::setw(14) << l.network << " block " << std::setw(2) << l.block << "  "
       << std::setw(18) << l.op << std::setw(7) << l.activation << " expected "
       << std::setw(13) << (l.expected.empty() ? "-" : shape_str(l.expected)) << " actual "
       << std::setw(13) << (l.actual.empty() ? "-" : shape_str(l.actual)) << " "
       << (l.pass ? "PASS" : "FAIL") << "\n";
  }
  os << (report.passed() ? "PASS" : "FAIL") << ": " << report.lines.size() - report.failures()
     << "/" << report.lines.size() << " rows match\n";
}

}  // namespace msggan::net
