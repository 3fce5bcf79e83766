#include "deblurkit/blocks.hpp"

#include "deblurkit/errors.hpp"

#include <algorithm>

namespace dbk {

int make_divisible(double v, int divisor) {
    int nv = std::max(divisor,
                      static_cast<int>(v + divisor / 2.0) / divisor * divisor);
    if (static_cast<double>(nv) < 0.9 * v) nv += divisor;
    return nv;
}

Conv2d Conv2d::make(int in_c, int out_c, int kernel, int stride, int padding,
                    int groups, bool with_bias, Rng& rng) {
    if (in_c < 1 || out_c < 1 || kernel < 1)
        throw ConfigError("conv: non-positive dimensions");
    if (in_c % groups != 0 || out_c % groups != 0)
        throw ConfigError("conv: channels not divisible by groups");
    Conv2d conv;
    conv.weight = init::conv_weight(out_c, in_c / groups, kernel, kernel, rng);
    if (with_bias) conv.bias = init::zeros_param({1, out_c, 1, 1});
    conv.stride = stride;
    conv.padding = padding;
    conv.groups = groups;
    return conv;
}

Tensor Conv2d::forward(const Tensor& x) const {
    return ops::conv2d(x, weight, bias,
                       {.stride = stride, .padding = padding, .groups = groups});
}

void Conv2d::collect(const std::string& prefix, ParamList& out) {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

std::int64_t Conv2d::macs(int in_h, int in_w) const {
    const TensorShape ws = weight.shape();
    return ops::conv2d_macs(out_h(in_h), out_w(in_w), ws.n, ws.c, ws.h, ws.w);
}

InstanceNorm2d InstanceNorm2d::make(int channels, bool affine) {
    if (channels < 1) throw ConfigError("instance norm: non-positive channels");
    InstanceNorm2d norm;
    if (affine) {
        norm.gamma = init::ones_param({1, channels, 1, 1});
        norm.beta = init::zeros_param({1, channels, 1, 1});
    }
    return norm;
}

void InstanceNorm2d::collect(const std::string& prefix, ParamList& out) {
    if (gamma.defined()) {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
}

HalfInstanceNorm HalfInstanceNorm::make(int channels, bool affine) {
    if (channels < 2 || channels % 2 != 0)
        throw ConfigError("half instance norm: channel count must be even, got " +
                          std::to_string(channels));
    HalfInstanceNorm hin;
    hin.channels = channels;
    hin.norm = InstanceNorm2d::make(channels / 2, affine);
    return hin;
}

Tensor HalfInstanceNorm::forward(const Tensor& x) const {
    if (x.shape().c != channels)
        throw ConfigError("half instance norm: expected " + std::to_string(channels) +
                          " channels, got " + x.shape().str());
    const int half = channels / 2;
    Tensor normalized = norm.forward(ops::slice_channels(x, 0, half));
    Tensor passthrough = ops::slice_channels(x, half, channels);
    return ops::concat_channels({normalized, passthrough});
}

void HalfInstanceNorm::collect(const std::string& prefix, ParamList& out) {
    norm.collect(prefix + ".norm", out);
}

CheapModule CheapModule::make(const CheapModuleConfig& cfg, Rng& rng) {
    if (cfg.in_channels < 1) throw ConfigError("cheap module: non-positive in_channels");
    if (cfg.out_channels < 2 || cfg.out_channels % 2 != 0)
        throw ConfigError("cheap module: out_channels must be even, got " +
                          std::to_string(cfg.out_channels));
    if (cfg.intrinsic_kernel % 2 != 1 || cfg.cheap_kernel % 2 != 1)
        throw ConfigError("cheap module: kernels must be odd");
    CheapModule m;
    m.cfg = cfg;
    const int half = cfg.out_channels / 2;
    m.intrinsic = Conv2d::make(cfg.in_channels, half, cfg.intrinsic_kernel, 1,
                               cfg.intrinsic_kernel / 2, 1, /*with_bias=*/true, rng);
    m.cheap = Conv2d::make(half, half, cfg.cheap_kernel, 1, cfg.cheap_kernel / 2, half,
                           /*with_bias=*/true, rng);
    return m;
}

Tensor CheapModule::forward(const Tensor& x) const {
    if (x.shape().c != cfg.in_channels)
        throw ConfigError("cheap module: expected " + std::to_string(cfg.in_channels) +
                          " input channels, got " + x.shape().str());
    Tensor intrinsic_maps = intrinsic.forward(x);
    Tensor cheap_maps = cheap.forward(intrinsic_maps);
    return ops::concat_channels({intrinsic_maps, cheap_maps});
}

void CheapModule::collect(const std::string& prefix, ParamList& out) {
    intrinsic.collect(prefix + ".intrinsic", out);
    cheap.collect(prefix + ".cheap", out);
}

std::int64_t CheapModule::macs(int in_h, int in_w) const {
    return intrinsic.macs(in_h, in_w) + cheap.macs(in_h, in_w);
}

SqueezeExcite SqueezeExcite::make(int channels, Rng& rng) {
    const int reduced = make_divisible(channels / 4.0, 4);
    SqueezeExcite se;
    se.reduce = Conv2d::make(channels, reduced, 1, 1, 0, 1, /*with_bias=*/true, rng);
    se.expand = Conv2d::make(reduced, channels, 1, 1, 0, 1, /*with_bias=*/true, rng);
    return se;
}

Tensor SqueezeExcite::forward(const Tensor& x) const {
    Tensor s = ops::mean_hw(x);
    s = ops::relu(reduce.forward(s));
    s = ops::hard_sigmoid(expand.forward(s));
    return ops::mul_channelwise(x, s);
}

void SqueezeExcite::collect(const std::string& prefix, ParamList& out) {
    reduce.collect(prefix + ".reduce", out);
    expand.collect(prefix + ".expand", out);
}

std::int64_t SqueezeExcite::macs() const {
    return reduce.macs(1, 1) + expand.macs(1, 1);
}

GhostBottleneck GhostBottleneck::make(int in_c, const GhostBottleneckSpec& spec,
                                      Rng& rng) {
    if (spec.stride != 1 && spec.stride != 2)
        throw ConfigError("ghost bottleneck: stride must be 1 or 2");
    if (spec.expansion % 2 != 0 || spec.out_channels % 2 != 0)
        throw ConfigError("ghost bottleneck: expansion and out_channels must be even");
    GhostBottleneck b;
    b.spec = spec;
    b.in_channels = in_c;
    b.expand_gm = CheapModule::make({in_c, spec.expansion}, rng);
    b.expand_norm = InstanceNorm2d::make(spec.expansion);
    if (spec.stride == 2) {
        b.down_dw = Conv2d::make(spec.expansion, spec.expansion, spec.kernel, 2,
                                 spec.kernel / 2, spec.expansion, false, rng);
        b.down_norm = InstanceNorm2d::make(spec.expansion);
    }
    if (spec.use_se) b.se = SqueezeExcite::make(spec.expansion, rng);
    b.project_gm = CheapModule::make({spec.expansion, spec.out_channels}, rng);
    b.project_norm = InstanceNorm2d::make(spec.out_channels);
    b.identity_shortcut = spec.stride == 1 && in_c == spec.out_channels;
    if (!b.identity_shortcut) {
        b.shortcut_dw = Conv2d::make(in_c, in_c, spec.kernel, spec.stride,
                                     spec.kernel / 2, in_c, false, rng);
        b.shortcut_dw_norm = InstanceNorm2d::make(in_c);
        b.shortcut_pw = Conv2d::make(in_c, spec.out_channels, 1, 1, 0, 1, false, rng);
        b.shortcut_pw_norm = InstanceNorm2d::make(spec.out_channels);
    }
    return b;
}

Tensor GhostBottleneck::forward(const Tensor& x) const {
    Tensor h = ops::relu(expand_norm.forward(expand_gm.forward(x)));
    if (spec.stride == 2) h = down_norm.forward(down_dw.forward(h));
    if (spec.use_se) h = se.forward(h);
    h = project_norm.forward(project_gm.forward(h));
    Tensor shortcut =
        identity_shortcut
            ? x
            : shortcut_pw_norm.forward(shortcut_pw.forward(
                  shortcut_dw_norm.forward(shortcut_dw.forward(x))));
    return ops::add(h, shortcut);
}

void GhostBottleneck::collect(const std::string& prefix, ParamList& out) {
    expand_gm.collect(prefix + ".expand", out);
    expand_norm.collect(prefix + ".expand_norm", out);
    if (spec.stride == 2) {
        down_dw.collect(prefix + ".down", out);
        down_norm.collect(prefix + ".down_norm", out);
    }
    if (spec.use_se) se.collect(prefix + ".se", out);
    project_gm.collect(prefix + ".project", out);
    project_norm.collect(prefix + ".project_norm", out);
    if (!identity_shortcut) {
        shortcut_dw.collect(prefix + ".shortcut_dw", out);
        shortcut_dw_norm.collect(prefix + ".shortcut_dw_norm", out);
        shortcut_pw.collect(prefix + ".shortcut_pw", out);
        shortcut_pw_norm.collect(prefix + ".shortcut_pw_norm", out);
    }
}

std::int64_t GhostBottleneck::macs(int in_h, int in_w) const {
    std::int64_t total = expand_gm.macs(in_h, in_w);
    int mid_h = in_h, mid_w = in_w;
    if (spec.stride == 2) {
        total += down_dw.macs(in_h, in_w);
        mid_h = down_dw.out_h(in_h);
        mid_w = down_dw.out_w(in_w);
    }
    if (spec.use_se) total += se.macs();
    total += project_gm.macs(mid_h, mid_w);
    if (!identity_shortcut)
        total += shortcut_dw.macs(in_h, in_w) + shortcut_pw.macs(mid_h, mid_w);
    return total;
}

namespace {

struct StageRow {
    int kernel;
    int expansion;
    int out_channels;
    bool use_se;
    int stride;
};

// GhostNet 1.0x bottleneck stage table; a stage groups consecutive rows at
// one resolution step. Only the first eight stages are used, ending at 160
// channels and stride 32.
const std::vector<std::vector<StageRow>>& stage_table() {
    static const std::vector<std::vector<StageRow>> table = {
        {{3, 16, 16, false, 1}},
        {{3, 48, 24, false, 2}},
        {{3, 72, 24, false, 1}},
        {{5, 72, 40, true, 2}},
        {{5, 120, 40, true, 1}},
        {{3, 240, 80, false, 2}},
        {{3, 200, 80, false, 1},
         {3, 184, 80, false, 1},
         {3, 184, 80, false, 1},
         {3, 480, 112, true, 1},
         {3, 672, 112, true, 1}},
        {{5, 672, 160, true, 2}},
    };
    return table;
}

} // namespace

GhostBackbone GhostBackbone::make(const BackboneConfig& cfg, Rng& rng) {
    const auto& table = stage_table();
    if (cfg.num_feature_blocks < 1 ||
        cfg.num_feature_blocks > static_cast<int>(table.size()))
        throw ConfigError("backbone: num_feature_blocks must be in [1, " +
                          std::to_string(table.size()) + "]");
    if (cfg.width_multiplier <= 0.0)
        throw ConfigError("backbone: width_multiplier must be positive");
    if (cfg.tap_stages.empty())
        throw ConfigError("backbone: tap_stages must not be empty");
    for (std::size_t i = 0; i < cfg.tap_stages.size(); ++i) {
        if (cfg.tap_stages[i] < 0 || cfg.tap_stages[i] >= cfg.num_feature_blocks)
            throw ConfigError("backbone: tap stage " + std::to_string(cfg.tap_stages[i]) +
                              " out of range");
        if (i > 0 && cfg.tap_stages[i] <= cfg.tap_stages[i - 1])
            throw ConfigError("backbone: tap_stages must be strictly increasing");
    }
    if (cfg.tap_stages.back() != cfg.num_feature_blocks - 1)
        throw ConfigError("backbone: the last tap must be the final block");

    GhostBackbone bb;
    bb.cfg = cfg;
    const int stem_c = make_divisible(16 * cfg.width_multiplier);
    bb.stem = Conv2d::make(3, stem_c, 3, 2, 1, 1, false, rng);
    bb.stem_norm = InstanceNorm2d::make(stem_c);

    int channels = stem_c;
    int stride = 2;
    for (int s = 0; s < cfg.num_feature_blocks; ++s) {
        std::vector<GhostBottleneck> stage;
        for (const StageRow& row : table[static_cast<std::size_t>(s)]) {
            GhostBottleneckSpec spec;
            spec.kernel = row.kernel;
            spec.expansion = make_divisible(row.expansion * cfg.width_multiplier);
            spec.out_channels = make_divisible(row.out_channels * cfg.width_multiplier);
            spec.use_se = row.use_se;
            spec.stride = row.stride;
            stage.push_back(GhostBottleneck::make(channels, spec, rng));
            channels = spec.out_channels;
            stride *= row.stride;
        }
        bb.stages.push_back(std::move(stage));
        bb.stage_channels.push_back(channels);
        bb.stage_strides.push_back(stride);
    }
    if (channels != cfg.final_channels)
        throw ConfigError("backbone: final stage yields " + std::to_string(channels) +
                          " channels but final_channels=" +
                          std::to_string(cfg.final_channels));
    return bb;
}

std::vector<BackboneTap> GhostBackbone::forward(const Tensor& x) const {
    const TensorShape s = x.shape();
    if (s.c != 3)
        throw ContractError("backbone: expected 3 input channels, got " + s.str());
    if (s.h % 32 != 0 || s.w % 32 != 0)
        throw ContractError("backbone: spatial dims must be divisible by 32, got " +
                            s.str());
    Tensor h = ops::relu(stem_norm.forward(stem.forward(x)));
    std::vector<BackboneTap> taps;
    std::size_t next_tap = 0;
    for (std::size_t stage = 0; stage < stages.size(); ++stage) {
        for (const GhostBottleneck& block : stages[stage]) h = block.forward(h);
        if (next_tap < cfg.tap_stages.size() &&
            cfg.tap_stages[next_tap] == static_cast<int>(stage)) {
            taps.push_back({h, stage_channels[stage], stage_strides[stage]});
            ++next_tap;
        }
    }
    return taps;
}

void GhostBackbone::collect(const std::string& prefix, ParamList& out) {
    stem.collect(prefix + ".stem", out);
    stem_norm.collect(prefix + ".stem_norm", out);
    for (std::size_t s = 0; s < stages.size(); ++s)
        for (std::size_t u = 0; u < stages[s].size(); ++u)
            stages[s][u].collect(prefix + ".stage" + std::to_string(s) + ".unit" +
                                     std::to_string(u),
                                 out);
}

std::int64_t GhostBackbone::macs(int in_h, int in_w) const {
    std::int64_t total = stem.macs(in_h, in_w);
    int h = stem.out_h(in_h), w = stem.out_w(in_w);
    for (const auto& stage : stages)
        for (const GhostBottleneck& block : stage) {
            total += block.macs(h, w);
            if (block.spec.stride == 2) {
                h = (h + 1) / 2;
                w = (w + 1) / 2;
            }
        }
    return total;
}

int GhostBackbone::tap_channels(int tap_index) const {
    return stage_channels[static_cast<std::size_t>(cfg.tap_stages[static_cast<std::size_t>(tap_index)])];
}

int GhostBackbone::tap_stride(int tap_index) const {
    return stage_strides[static_cast<std::size_t>(cfg.tap_stages[static_cast<std::size_t>(tap_index)])];
}

} // namespace dbk
