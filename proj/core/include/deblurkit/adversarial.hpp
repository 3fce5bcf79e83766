#pragma once

#include "deblurkit/blocks.hpp"
#include "deblurkit/module.hpp"
#include "deblurkit/ops.hpp"
#include "deblurkit/rng.hpp"
#include "deblurkit/tensor.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace dbk {

/// One patch discriminator: a four-layer strided convolutional stack with
/// instance norm and leaky relu, emitting an unbounded per-patch score map.
/// Every output cell scores a 70x70 receptive field of the input.
class PatchDiscriminator {
  public:
    static PatchDiscriminator make(Rng& rng);

    /// Input must be finite and in [-1, 1]; spatial dims must cover the
    /// receptive field. Returns the raw score map (no sigmoid).
    Tensor forward(const Tensor& x) const;

    void collect(const std::string& prefix, ParamList& out);
    static constexpr int receptive_field() { return 70; }

    Conv2d c1, c2, c3, c4, head;
    InstanceNorm2d n2, n3, n4;
};

/// Axis-aligned crop rectangle in pixels.
struct CropRect {
    int top = 0;
    int left = 0;
    int height = 0;
    int width = 0;
};

/// Global discriminator over the full image plus a local one over a
/// quarter-area (half width, half height) crop. The crop coordinates are
/// chosen once per step and reused for the real and the fake image so both
/// local score maps see the same patch.
class DiscriminatorPair {
  public:
    static DiscriminatorPair make(Rng& rng);

    /// Uniformly random quarter-area crop for an image of the given shape.
    CropRect pick_local_crop(const TensorShape& shape, Rng& rng) const;

    ParamList parameters();

    PatchDiscriminator global_disc;
    PatchDiscriminator local_disc;
};

/// Score maps from one discriminator pass, with the local crop recorded so a
/// paired pass can be made on identical coordinates.
struct DiscScores {
    Tensor global_scores;
    Tensor local_scores;
    CropRect local_crop;
};

DiscScores discriminator_forward(const Tensor& img, const DiscriminatorPair& pair,
                                 const CropRect& local_crop);

/// Relativistic average least-squares GAN objective over per-scale score
/// maps. For each scale
///   d = E[(D(real) - E[D(fake)] - 1)^2] + E[(D(fake) - E[D(real)] + 1)^2]
/// and g mirrors with the roles swapped; the returned losses average the
/// per-scale values. Non-finite scores raise DivergenceError.
std::pair<Tensor, Tensor> ragan_ls_loss(const std::vector<Tensor>& real_scores,
                                        const std::vector<Tensor>& fake_scores);

/// Frozen convolutional feature extractor for the perceptual distance.
/// The canonical weights live in a versioned artifact file; the extractor
/// refuses to run without it so a silent fallback can never skew training.
class FeatureExtractor {
  public:
    /// Deterministic weights from a fixed seed; used to create the artifact.
    static FeatureExtractor make_default();

    static void save(const std::filesystem::path& path, FeatureExtractor& fx);
    /// Missing or malformed file -> DependencyError with instructions.
    static FeatureExtractor load(const std::filesystem::path& path);

    /// Mid-stack activations of an image in [0, 1].
    Tensor features(const Tensor& img01) const;

    /// Identifier of the tapped activation, stored alongside checkpoints.
    const std::string& layer_name() const { return layer_name_; }

    Conv2d c1, c2, c3;

  private:
    std::string layer_name_ = "relu3";
};

/// mean((F(pred) - F(target))^2) with F the frozen extractor.
Tensor perceptual_loss(const Tensor& pred, const Tensor& target,
                       const FeatureExtractor& fx);

struct LossWeights {
    float w_pixel = 0.5f;
    float w_perceptual = 0.006f;
    float w_adversarial = 0.01f;
};

/// w_pixel*pixel + w_perceptual*perceptual + w_adversarial*adversarial.
float combine_weighted(const LossWeights& w, float pixel, float perceptual,
                       float adversarial);

/// Total generator objective with the per-term values kept for logging.
struct GeneratorLossBreakdown {
    Tensor total;
    float pixel = 0.0f;
    float perceptual = 0.0f;
    float adversarial = 0.0f;
};

GeneratorLossBreakdown total_generator_loss(const Tensor& pred, const Tensor& target,
                                            const std::vector<Tensor>& real_scores,
                                            const std::vector<Tensor>& fake_scores,
                                            const FeatureExtractor& fx,
                                            const LossWeights& w);

} // namespace dbk
