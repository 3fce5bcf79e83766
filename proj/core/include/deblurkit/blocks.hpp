#pragma once

#include "deblurkit/module.hpp"
#include "deblurkit/ops.hpp"
#include "deblurkit/rng.hpp"
#include "deblurkit/tensor.hpp"

#include <string>
#include <vector>

namespace dbk {

/// Channel rounding used when scaling widths (keeps channels a multiple of
/// `divisor`, never shrinking by more than 10%).
int make_divisible(double v, int divisor = 4);

/// Convolution layer: weight [out_c, in_c/groups, kh, kw], optional bias.
struct Conv2d {
    Tensor weight;
    Tensor bias;
    int stride = 1;
    int padding = 0;
    int groups = 1;

    static Conv2d make(int in_c, int out_c, int kernel, int stride, int padding,
                       int groups, bool with_bias, Rng& rng);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out);
    std::int64_t macs(int in_h, int in_w) const;
    int out_h(int in_h) const { return (in_h + 2 * padding - weight.shape().h) / stride + 1; }
    int out_w(int in_w) const { return (in_w + 2 * padding - weight.shape().w) / stride + 1; }
};

struct InstanceNorm2d {
    Tensor gamma; // undefined when affine is disabled
    Tensor beta;
    float eps = 1e-5f;

    static InstanceNorm2d make(int channels, bool affine = true);
    Tensor forward(const Tensor& x) const { return ops::instance_norm(x, gamma, beta, eps); }
    void collect(const std::string& prefix, ParamList& out);
};

/// Normalizes the first half of the channels, passes the second half through
/// bit-identically, and re-concatenates.
struct HalfInstanceNorm {
    int channels = 0;
    InstanceNorm2d norm;

    static HalfInstanceNorm make(int channels, bool affine = true);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out);
};

struct CheapModuleConfig {
    int in_channels = 0;
    int out_channels = 0; // even; half intrinsic, half cheap
    int intrinsic_kernel = 1;
    int cheap_kernel = 3;
};

/// Halved-cost replacement for a standard convolution: a thin intrinsic
/// convolution produces out/2 channels, a depthwise convolution derives the
/// other out/2 from them, and the two halves are concatenated. No norm or
/// activation inside; callers compose those.
struct CheapModule {
    CheapModuleConfig cfg;
    Conv2d intrinsic; // in -> out/2
    Conv2d cheap;     // depthwise on the intrinsic half

    static CheapModule make(const CheapModuleConfig& cfg, Rng& rng);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out);
    std::int64_t macs(int in_h, int in_w) const;
};

/// Global-pool channel attention: x * hard_sigmoid(fc2(relu(fc1(mean_hw(x))))).
struct SqueezeExcite {
    Conv2d reduce;
    Conv2d expand;

    static SqueezeExcite make(int channels, Rng& rng);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out);
    std::int64_t macs() const;
};

struct GhostBottleneckSpec {
    int kernel = 3;       // depthwise kernel for stride-2 and shortcut paths
    int expansion = 0;    // hidden width (even)
    int out_channels = 0; // even
    bool use_se = false;
    int stride = 1; // 1 or 2
};

/// GhostNet bottleneck: expand (cheap module + norm + relu), optional strided
/// depthwise, optional squeeze-excite, project (cheap module + norm), residual.
struct GhostBottleneck {
    GhostBottleneckSpec spec;
    int in_channels = 0;
    CheapModule expand_gm;
    InstanceNorm2d expand_norm;
    Conv2d down_dw; // stride == 2 only
    InstanceNorm2d down_norm;
    SqueezeExcite se; // use_se only
    CheapModule project_gm;
    InstanceNorm2d project_norm;
    bool identity_shortcut = true;
    Conv2d shortcut_dw; // !identity_shortcut only
    InstanceNorm2d shortcut_dw_norm;
    Conv2d shortcut_pw;
    InstanceNorm2d shortcut_pw_norm;

    static GhostBottleneck make(int in_c, const GhostBottleneckSpec& spec, Rng& rng);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out);
    std::int64_t macs(int in_h, int in_w) const;
};

struct BackboneConfig {
    double width_multiplier = 1.0;
    int num_feature_blocks = 8;
    std::vector<int> tap_stages = {0, 2, 4, 6, 7};
    int final_channels = 160;

    bool operator==(const BackboneConfig&) const = default;
};

struct BackboneTap {
    Tensor features;
    int channels = 0;
    int stride = 0; // downsampling factor relative to the network input
};

/// Truncated GhostNet-style feature extractor: a stride-2 stem convolution
/// followed by the first eight bottleneck stages (ending at final_channels at
/// stride 32 for the canonical width).
struct GhostBackbone {
    BackboneConfig cfg;
    Conv2d stem; // 3 -> base width, stride 2
    InstanceNorm2d stem_norm;
    std::vector<std::vector<GhostBottleneck>> stages;
    std::vector<int> stage_channels; // output channels per stage
    std::vector<int> stage_strides;  // cumulative stride after each stage

    static GhostBackbone make(const BackboneConfig& cfg, Rng& rng);
    /// Input: [n,3,h,w] with h,w divisible by 32, values in [-1,1].
    std::vector<BackboneTap> forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamList& out);
    std::int64_t macs(int in_h, int in_w) const;
    int tap_channels(int tap_index) const;
    int tap_stride(int tap_index) const;
};

} // namespace dbk
