#pragma once

#include "deblurkit/blocks.hpp"
#include "deblurkit/module.hpp"
#include "deblurkit/serialize.hpp"
#include "deblurkit/tensor.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace dbk {

struct GeneratorConfig {
    BackboneConfig backbone;
    int fpn_channels = 128;
    /// Per-level nearest-neighbour upscale factors, deepest level first.
    std::vector<int> upscale_ratios = {4, 4, 2, 2, 2};
    int head_channels = 64;
    /// Width of the two 3x3 convolutions refining the deepest tap.
    int bridge_channels = 192;
    std::string output_activation = "tanh";
    bool residual_skip = true;

    bool operator==(const GeneratorConfig&) const;

    static GeneratorConfig canonical();
    std::string to_json() const;
    static GeneratorConfig from_json(const std::string& text);
};

struct PaddingRecord {
    int top = 0;
    int bottom = 0;
    int left = 0;
    int right = 0;
    bool any() const { return top || bottom || left || right; }
};

/// Reflection-pads so both spatial dims become the smallest multiples of
/// `stride`; the record inverts the padding exactly via crop_padding.
std::pair<Tensor, PaddingRecord> pad_to_stride(const Tensor& x, int stride = 32);
Tensor crop_padding(const Tensor& x, const PaddingRecord& rec);

struct MacsBreakdown {
    std::int64_t backbone = 0;
    std::int64_t bridge = 0;
    std::int64_t laterals = 0;
    std::int64_t top_down = 0;
    std::int64_t heads = 0;
    std::int64_t fusion = 0;
    std::int64_t output = 0;
    std::int64_t total() const {
        return backbone + bridge + laterals + top_down + heads + fusion + output;
    }
};

/// One cheap-module application in a forward pass: its channel widths and the
/// spatial size it runs at. The basis for comparing the decoder path against
/// a standard-convolution rebuild at equal widths.
struct CheapApplication {
    std::string name;
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3; // the depthwise kernel, and the rebuild kernel
    int h = 0;
    int w = 0;
};

/// Deblurring generator: truncated backbone taps feed an FPN-style top-down
/// pathway built from cheap modules + half instance norm; per-level heads are
/// upsampled by the configured ratios and fused progressively down to full
/// resolution; a tanh projection is added to the input as a global residual.
class Generator {
public:
    static Generator make(const GeneratorConfig& cfg, Rng& rng);

    /// [n,3,h,w] in [0,1] -> same shape in [0,1]. Any h,w (padded internally).
    Tensor forward(const Tensor& x) const;

    /// All trainable tensors with stable names (checkpoint layout order).
    ParamList parameters();

    /// Convolution multiply-accumulate counts for one forward at h x w input
    /// (padding included, as in forward).
    MacsBreakdown macs(int h, int w) const;

    /// Lists every cheap-module application in a forward at h x w, with the
    /// spatial size each one runs at (same accounting as macs()).
    std::vector<CheapApplication> cheap_applications(int h, int w) const;

    std::int64_t parameter_count();

    const GeneratorConfig& config() const { return cfg_; }

private:
    struct FusionStage {
        std::vector<int> levels; // deepest-first member levels
        int landing = 1;         // stride after upsampling members
        bool has_fuse = false;
        CheapModule fuse;
        HalfInstanceNorm fuse_norm;
    };

    GeneratorConfig cfg_;
    GhostBackbone backbone_;
    Conv2d bridge_a_;
    InstanceNorm2d bridge_a_norm_;
    Conv2d bridge_b_;
    InstanceNorm2d bridge_b_norm_;
    std::vector<Conv2d> laterals_;
    std::vector<CheapModule> merges_; // one per level except the deepest
    std::vector<HalfInstanceNorm> merge_norms_;
    std::vector<CheapModule> heads_;
    std::vector<FusionStage> fusion_;
    int fused_channels_ = 0;
    CheapModule smooth_;
    HalfInstanceNorm smooth_norm_;
    Conv2d project_;
};

/// Packs config + all weights into an in-memory checkpoint container.
CheckpointBlob generator_checkpoint_blob(Generator& gen);

/// Writes config + all weights as one checkpoint file.
void save_generator_checkpoint(const std::filesystem::path& path, Generator& gen);

/// Rebuilds a generator from a checkpoint. If `expected` is given and the
/// stored config differs, loading fails instead of reshaping silently.
Generator load_generator_checkpoint(const std::filesystem::path& path,
                                    const GeneratorConfig* expected = nullptr);

} // namespace dbk
