#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "msggan/nn.hpp"

// Residual-network binary classifier and the freeze-and-retrain-head
// transfer protocol.
namespace msggan::cls {

using ad::NormMode;

struct ResidualBlockSpec {
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  int stride = 1;
  bool projection() const { return in_channels != out_channels || stride != 1; }
};

struct MiniResNetSpec {
  std::array<std::int64_t, 4> widths{16, 32, 64, 128};
  int input_size = 64;
  // 7×7 stride-2 stem plus 3×3 stride-2 max pool; otherwise a 3×3 stride-1 stem.
  bool wide_stem = false;
  int num_classes = 2;
  DType dtype = DType::F32;

  static MiniResNetSpec desk();
  static MiniResNetSpec full();  // 224×224 input, widths 64..512
  void validate() const;
  bool operator==(const MiniResNetSpec&) const = default;
};

struct BatchNorm2d {
  Parameter gamma;
  Parameter beta;
  ad::BatchNormStats stats;

  static BatchNorm2d create(const std::string& name, std::int64_t channels, DType dt);
  Tensor forward(const Tensor& x, NormMode mode);
  void collect(ParameterRefs& out);
};

class ResidualBlock {
 public:
  ResidualBlock(const std::string& name, ResidualBlockSpec spec, Rng& rng, DType dt);

  // ReLU(BN(conv(ReLU(BN(conv(x))))) + shortcut(x)).
  Tensor forward(const Tensor& x, NormMode mode);
  const ResidualBlockSpec& spec() const { return spec_; }
  void collect(ParameterRefs& out);
  void collect_buffers(std::vector<std::pair<std::string, Tensor*>>& out);

  Conv2dLayer conv1, conv2, shortcut;
  BatchNorm2d bn1, bn2, shortcut_bn;

 private:
  std::string name_;
  ResidualBlockSpec spec_;
};

class MiniResNet {
 public:
  MiniResNet(MiniResNetSpec spec, std::uint64_t seed);

  const MiniResNetSpec& spec() const { return spec_; }
  // Globally pooled backbone features, N×widths[3].
  Tensor features(const Tensor& x, NormMode mode);
  Tensor head(const Tensor& features) const;
  Tensor logits(const Tensor& x, NormMode mode);

  ParameterRefs parameters();
  ParameterRefs backbone_parameters();
  ParameterRefs head_parameters();
  // Batch-norm running statistics.
  std::vector<std::pair<std::string, Tensor*>> buffers();
  bool backbone_frozen();

  std::int64_t feature_dim() const { return spec_.widths[3]; }
  void replace_head(std::uint64_t seed);

  std::vector<ResidualBlock>& blocks() { return blocks_; }

 private:
  MiniResNetSpec spec_;
  Conv2dLayer stem_;
  BatchNorm2d stem_bn_;
  std::vector<ResidualBlock> blocks_;
  DenseLayer fc_;
};

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t t = 0;  // steps taken
};

// t ← t+1; m ← β₁m + (1−β₁)g; v ← β₂v + (1−β₂)g²;
// param ← param − lr·m̂/(sqrt(v̂)+eps) with m̂ = m/(1−β₁ᵗ), v̂ = v/(1−β₂ᵗ).
void adam_step(const ParameterRefs& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamOptions& options);

struct TransferConfig {
  std::optional<std::filesystem::path> backbone;
  bool freeze_backbone = true;
  int epochs = 150;
  AdamOptions adam;
  int batch_size = 32;
  int input_size = 64;
  std::uint64_t seed = 0;
  std::int64_t max_steps = 0;  // 0: no cap

  void validate() const;
};

// Loads backbone arrays when configured, freezes the backbone when asked and
// installs a fresh trainable head seeded from cfg.seed.
void apply_transfer(MiniResNet& network, const TransferConfig& cfg);

// A labelled image collection addressed by position 0..size-1.
struct LabeledSet {
  std::vector<int> labels;
  // N×3×S×S for the requested positions.
  std::function<Tensor(const std::vector<std::size_t>&)> fetch;
  std::size_t size() const { return labels.size(); }
};
LabeledSet in_memory(const Tensor& images, std::vector<int> labels);

struct TrainReport {
  std::vector<double> epoch_loss;
  std::int64_t steps = 0;
};

// Mini-batch Adam on cross entropy. With a frozen backbone the pooled
// features are computed once (eval-mode batch norm) and only the head is
// trained on them.
TrainReport train_classifier(MiniResNet& network, const LabeledSet& data,
                             const TransferConfig& cfg);

struct Predictions {
  std::vector<int> labels;
  std::vector<std::array<double, 2>> probabilities;
};
// Eval mode; argmax with ties going to the lower class index.
Predictions predict(MiniResNet& network, const Tensor& batch);
Predictions predict(MiniResNet& network, const LabeledSet& data, int batch_size = 64);
Predictions predict_from_logits(const Tensor& logits);

double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth);

void save_classifier(MiniResNet& network, const std::filesystem::path& dir);
// Throws on a spec mismatch or damaged array; nothing is modified on failure.
// With backbone_only the head arrays are left untouched.
void load_classifier(MiniResNet& network, const std::filesystem::path& dir,
                     bool backbone_only = false);
MiniResNetSpec read_classifier_spec(const std::filesystem::path& dir);

}  // namespace msggan::cls
