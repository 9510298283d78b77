#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "msggan/msggan_net.hpp"

namespace msggan::net {

// One published layer row: block number, operation, activation, output C×H×W.
struct ReferenceRow {
  int block = 0;
  std::string op;
  std::string activation;
  Shape shape;
};

// Published generator rows for the first `depth` blocks (1..9).
std::vector<ReferenceRow> reference_generator_table(int depth);
// Published discriminator rows for a model consuming `depth` scales. For
// depth < 9 the entry block is a fromRGB conv that produces the block's own
// main-path width; every later row is taken verbatim from the full table.
std::vector<ReferenceRow> reference_discriminator_table(int depth);

struct AuditLine {
  std::string network;
  int block = 0;
  std::string op;
  std::string activation;
  Shape expected;
  Shape actual;
  bool pass = false;
};

struct AuditReport {
  int depth = 0;
  std::vector<AuditLine> lines;
  bool passed() const;
  std::size_t failures() const;
};

// Builds the standard networks for `depth` and compares every activation
// shape (plus each toRGB tap) against the reference tables.
AuditReport audit_shapes(int depth);
AuditReport audit_traces(int depth, const ShapeTrace& generator, const ShapeTrace& discriminator);

void print_audit(const AuditReport& report, std::ostream& os);

}  // namespace msggan::net
