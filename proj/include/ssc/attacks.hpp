#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "ssc/model.hpp"

namespace ssc {

enum class AttackFamily { Fgsm, Jsma, Boundary };
enum class ThreatModel { WhiteBox, BlackBox };

const char* to_string(AttackFamily family) noexcept;
const char* to_string(ThreatModel threat) noexcept;
AttackFamily parse_attack_family(std::string_view text);
ThreatModel parse_threat_model(std::string_view text);

struct AttackSpec {
  AttackFamily family = AttackFamily::Fgsm;
  double epsilon = 0.3;            // FGSM step per pixel
  double theta = 1.0;              // JSMA change per selected pixel
  double gamma = 0.145;            // JSMA maximum fraction of modified pixels
  std::size_t max_queries = 25000; // boundary attack label queries
  ThreatModel threat = ThreatModel::WhiteBox;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AdversarialResult {
  Tensor x_adv;  // same shape as the clean input, values in [0,1]
  bool success = false;  // target's label differs from the true label
  std::size_t queries_used = 0;
  double l2_norm = 0.0;  // sum of squared pixel differences
  std::size_t modified_pixels = 0;
  std::vector<double> accepted_l2;  // boundary attack: l2_norm after every accepted step
};

/// d loss / d x for the summed per-sample cross-entropy of a batch. The
/// gradient passes through any preprocessing layer.
Tensor input_gradient(const Model& model, const Tensor& x, std::span<const int> labels);

/// Jacobian of the logits w.r.t. the pixels of one input [1,C,H,W]: [K, C*H*W].
Tensor logit_jacobian(const Model& model, const Tensor& x);

/// x_adv = clip(x + eps * sign(grad), 0, 1) for a batch [N,C,H,W]. Gradients
/// come from the target (white-box) or the substitute (black-box); success is
/// always judged on the target.
std::vector<AdversarialResult> fgsm_batch(const Model& target, const Tensor& x,
                                          std::span<const int> labels, const AttackSpec& spec,
                                          const Model* substitute = nullptr);
AdversarialResult fgsm(const Model& target, const Tensor& x, int label, const AttackSpec& spec,
                       const Model* substitute = nullptr);

/// Saliency of moving one pixel up (+1) or down (-1) given the logit Jacobian
/// columns for that pixel. Positive values lower the true logit and raise the
/// best competing one.
double jsma_saliency(std::span<const double> jacobian_column, int label, int direction);

/// Untargeted single-pixel Jacobian saliency attack on one input [1,C,H,W].
/// Each iteration changes the unmodified pixel (and direction) of highest
/// saliency by theta; at most floor(gamma * pixels) pixels change.
AdversarialResult jsma(const Model& target, const Tensor& x, int label, const AttackSpec& spec,
                       const Model* substitute = nullptr);

/// Decision-only view of a classifier.
class LabelOracle {
 public:
  virtual ~LabelOracle() = default;
  virtual int label(const Tensor& x) = 0;
};

class ModelLabelOracle final : public LabelOracle {
 public:
  explicit ModelLabelOracle(const Model& model) : model_(model) {}
  int label(const Tensor& x) override;

 private:
  const Model& model_;
};

/// Decision-based boundary attack on one input [1,C,H,W]. Starts from seeded
/// uniform noise (redrawn up to 1000 times until misclassified) and walks the
/// decision boundary towards x with orthogonal and inward steps whose sizes
/// adapt to the acceptance rate. Every query counts against max_queries.
AdversarialResult boundary_attack(LabelOracle& oracle, const Tensor& x, int label,
                                  const AttackSpec& spec);

inline constexpr std::size_t kBoundaryInitDraws = 1000;
inline constexpr std::uint64_t kSubstituteSeedOffset = 7919;

/// Undefended custom CNN trained on the same clean data under a different seed.
Model make_substitute(const LabeledDataset& data, const TrainConfig& cfg);

}  // namespace ssc
