#include "deblurkit/generator.hpp"

#include "deblurkit/errors.hpp"
#include "deblurkit/serialize.hpp"

#include "json.hpp"

#include <algorithm>

namespace dbk {

bool GeneratorConfig::operator==(const GeneratorConfig& o) const {
    return backbone == o.backbone && fpn_channels == o.fpn_channels &&
           upscale_ratios == o.upscale_ratios && head_channels == o.head_channels &&
           bridge_channels == o.bridge_channels &&
           output_activation == o.output_activation && residual_skip == o.residual_skip;
}

GeneratorConfig GeneratorConfig::canonical() { return {}; }

std::string GeneratorConfig::to_json() const {
    nlohmann::json j;
    j["backbone"]["width_multiplier"] = backbone.width_multiplier;
    j["backbone"]["num_feature_blocks"] = backbone.num_feature_blocks;
    j["backbone"]["tap_stages"] = backbone.tap_stages;
    j["backbone"]["final_channels"] = backbone.final_channels;
    j["fpn_channels"] = fpn_channels;
    j["upscale_ratios"] = upscale_ratios;
    j["head_channels"] = head_channels;
    j["bridge_channels"] = bridge_channels;
    j["output_activation"] = output_activation;
    j["residual_skip"] = residual_skip;
    return j.dump();
}

GeneratorConfig GeneratorConfig::from_json(const std::string& text) {
    try {
        const nlohmann::json j = nlohmann::json::parse(text);
        GeneratorConfig cfg;
        cfg.backbone.width_multiplier = j.at("backbone").at("width_multiplier").get<double>();
        cfg.backbone.num_feature_blocks = j.at("backbone").at("num_feature_blocks").get<int>();
        cfg.backbone.tap_stages = j.at("backbone").at("tap_stages").get<std::vector<int>>();
        cfg.backbone.final_channels = j.at("backbone").at("final_channels").get<int>();
        cfg.fpn_channels = j.at("fpn_channels").get<int>();
        cfg.upscale_ratios = j.at("upscale_ratios").get<std::vector<int>>();
        cfg.head_channels = j.at("head_channels").get<int>();
        cfg.bridge_channels = j.at("bridge_channels").get<int>();
        cfg.output_activation = j.at("output_activation").get<std::string>();
        cfg.residual_skip = j.at("residual_skip").get<bool>();
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("generator config: ") + e.what());
    }
}

std::pair<Tensor, PaddingRecord> pad_to_stride(const Tensor& x, int stride) {
    if (stride < 1) throw ConfigError("pad_to_stride: stride must be positive");
    const TensorShape s = x.shape();
    const int ph = (s.h + stride - 1) / stride * stride;
    const int pw = (s.w + stride - 1) / stride * stride;
    PaddingRecord rec;
    rec.top = (ph - s.h) / 2;
    rec.bottom = ph - s.h - rec.top;
    rec.left = (pw - s.w) / 2;
    rec.right = pw - s.w - rec.left;
    if (!rec.any()) return {x, rec};
    return {ops::reflection_pad(x, rec.top, rec.bottom, rec.left, rec.right), rec};
}

Tensor crop_padding(const Tensor& x, const PaddingRecord& rec) {
    if (!rec.any()) return x;
    return ops::crop(x, rec.top, rec.bottom, rec.left, rec.right);
}

Generator Generator::make(const GeneratorConfig& cfg, Rng& rng) {
    if (cfg.output_activation != "tanh")
        throw ConfigError("generator: unsupported output_activation \"" +
                          cfg.output_activation + "\"");
    if (cfg.fpn_channels < 2 || cfg.fpn_channels % 2 != 0)
        throw ConfigError("generator: fpn_channels must be even and positive");
    if (cfg.head_channels < 4 || cfg.head_channels % 4 != 0)
        throw ConfigError("generator: head_channels must be a positive multiple of 4");
    if (cfg.bridge_channels < 1)
        throw ConfigError("generator: bridge_channels must be positive");

    Generator g;
    g.cfg_ = cfg;
    g.backbone_ = GhostBackbone::make(cfg.backbone, rng);

    const int k = static_cast<int>(cfg.backbone.tap_stages.size());
    if (static_cast<int>(cfg.upscale_ratios.size()) != k)
        throw ConfigError("generator: upscale_ratios has " +
                          std::to_string(cfg.upscale_ratios.size()) + " entries for " +
                          std::to_string(k) + " backbone taps");

    const int deep_c = g.backbone_.tap_channels(k - 1);
    g.bridge_a_ = Conv2d::make(deep_c, cfg.bridge_channels, 3, 1, 1, 1, false, rng);
    g.bridge_a_norm_ = InstanceNorm2d::make(cfg.bridge_channels);
    g.bridge_b_ = Conv2d::make(cfg.bridge_channels, deep_c, 3, 1, 1, 1, false, rng);
    g.bridge_b_norm_ = InstanceNorm2d::make(deep_c);

    for (int i = 0; i < k; ++i)
        g.laterals_.push_back(
            Conv2d::make(g.backbone_.tap_channels(i), cfg.fpn_channels, 1, 1, 0, 1,
                         /*with_bias=*/true, rng));

    for (int i = 0; i + 1 < k; ++i) {
        if (g.backbone_.tap_stride(i + 1) % g.backbone_.tap_stride(i) != 0)
            throw ConfigError("generator: tap strides must divide evenly");
        g.merges_.push_back(CheapModule::make({cfg.fpn_channels, cfg.fpn_channels}, rng));
        g.merge_norms_.push_back(HalfInstanceNorm::make(cfg.fpn_channels));
    }

    for (int i = 0; i < k; ++i)
        g.heads_.push_back(CheapModule::make({cfg.fpn_channels, cfg.head_channels}, rng));

    // Landing stride of each level after its upscale ratio (deepest ratio first).
    std::vector<int> landing(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        const int ratio = cfg.upscale_ratios[static_cast<std::size_t>(k - 1 - i)];
        const int stride = g.backbone_.tap_stride(i);
        if (ratio < 1 || stride % ratio != 0)
            throw ConfigError("generator: upscale ratio " + std::to_string(ratio) +
                              " does not divide tap stride " + std::to_string(stride));
        landing[static_cast<std::size_t>(i)] = stride / ratio;
    }

    for (int i = k - 1; i >= 0; --i) {
        const int land = landing[static_cast<std::size_t>(i)];
        if (g.fusion_.empty() || g.fusion_.back().landing != land) {
            if (!g.fusion_.empty()) {
                const int prev = g.fusion_.back().landing;
                if (land >= prev || prev % land != 0)
                    throw ConfigError(
                        "generator: upscale ratios must land at non-increasing "
                        "strides from the deepest level toward full resolution");
            }
            FusionStage stage;
            stage.landing = land;
            g.fusion_.push_back(std::move(stage));
        }
        g.fusion_.back().levels.push_back(i);
    }

    int running_width = 0;
    for (std::size_t j = 0; j < g.fusion_.size(); ++j) {
        FusionStage& stage = g.fusion_[j];
        const int member_width =
            static_cast<int>(stage.levels.size()) * cfg.head_channels;
        if (j == 0) {
            running_width = member_width;
            continue;
        }
        const bool last = j + 1 == g.fusion_.size();
        const int out_width = last ? cfg.head_channels : cfg.fpn_channels;
        stage.fuse = CheapModule::make({running_width + member_width, out_width}, rng);
        stage.fuse_norm = HalfInstanceNorm::make(out_width);
        stage.has_fuse = true;
        running_width = out_width;
    }
    g.fused_channels_ = running_width;

    g.smooth_ = CheapModule::make({g.fused_channels_, cfg.head_channels / 2}, rng);
    g.smooth_norm_ = HalfInstanceNorm::make(cfg.head_channels / 2);
    g.project_ = Conv2d::make(cfg.head_channels / 2, 3, 3, 1, 1, 1, /*with_bias=*/true,
                              rng);
    return g;
}

Tensor Generator::forward(const Tensor& x) const {
    if (x.shape().c != 3)
        throw ContractError("generator: expected 3-channel input, got " +
                            x.shape().str());
    if (!ops::all_finite(x))
        throw ContractError("generator: non-finite values in input");

    auto [padded, rec] = pad_to_stride(x, 32);
    // [0,1] -> network domain [-1,1]
    Tensor xn = ops::add_scalar(ops::mul_scalar(padded, 2.0f), -1.0f);
    std::vector<BackboneTap> taps = backbone_.forward(xn);
    const int k = static_cast<int>(taps.size());

    Tensor deep = taps[static_cast<std::size_t>(k - 1)].features;
    deep = ops::relu(bridge_a_norm_.forward(bridge_a_.forward(deep)));
    deep = ops::relu(bridge_b_norm_.forward(bridge_b_.forward(deep)));

    std::vector<Tensor> lateral(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        const Tensor& src = i == k - 1 ? deep : taps[static_cast<std::size_t>(i)].features;
        lateral[static_cast<std::size_t>(i)] = laterals_[static_cast<std::size_t>(i)].forward(src);
    }

    std::vector<Tensor> maps(static_cast<std::size_t>(k));
    maps[static_cast<std::size_t>(k - 1)] = lateral[static_cast<std::size_t>(k - 1)];
    for (int i = k - 2; i >= 0; --i) {
        const int factor = taps[static_cast<std::size_t>(i + 1)].stride /
                           taps[static_cast<std::size_t>(i)].stride;
        Tensor above = maps[static_cast<std::size_t>(i + 1)];
        if (factor > 1) above = ops::upsample_nearest(above, factor);
        Tensor merged = ops::add(lateral[static_cast<std::size_t>(i)], above);
        merged = merges_[static_cast<std::size_t>(i)].forward(merged);
        merged = ops::relu(merge_norms_[static_cast<std::size_t>(i)].forward(merged));
        maps[static_cast<std::size_t>(i)] = merged;
    }

    std::vector<Tensor> upscaled(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        Tensor h = heads_[static_cast<std::size_t>(i)].forward(maps[static_cast<std::size_t>(i)]);
        const int ratio = cfg_.upscale_ratios[static_cast<std::size_t>(k - 1 - i)];
        upscaled[static_cast<std::size_t>(i)] = ratio > 1 ? ops::upsample_nearest(h, ratio) : h;
    }

    Tensor fused;
    int fused_landing = 0;
    for (const FusionStage& stage : fusion_) {
        std::vector<Tensor> parts;
        if (fused.defined()) {
            const int factor = fused_landing / stage.landing;
            parts.push_back(factor > 1 ? ops::upsample_nearest(fused, factor) : fused);
        }
        for (int level : stage.levels)
            parts.push_back(upscaled[static_cast<std::size_t>(level)]);
        Tensor y = parts.size() == 1 ? parts[0] : ops::concat_channels(parts);
        if (stage.has_fuse)
            y = ops::relu(stage.fuse_norm.forward(stage.fuse.forward(y)));
        fused = y;
        fused_landing = stage.landing;
    }
    if (fused_landing > 1) fused = ops::upsample_nearest(fused, fused_landing);

    fused = ops::relu(smooth_norm_.forward(smooth_.forward(fused)));
    Tensor residual = ops::tanh(project_.forward(fused));

    // In the [-1,1] network domain the output is clamp(x + r); expressed in
    // [0,1] storage that is clamp(x01 + r/2), which keeps the zero-residual
    // case bit-identical to the input.
    Tensor out = cfg_.residual_skip
                     ? ops::clamp(ops::add(padded, ops::mul_scalar(residual, 0.5f)),
                                  0.0f, 1.0f)
                     : ops::clamp(ops::mul_scalar(ops::add_scalar(residual, 1.0f), 0.5f),
                                  0.0f, 1.0f);
    return crop_padding(out, rec);
}

ParamList Generator::parameters() {
    ParamList params;
    backbone_.collect("backbone", params);
    bridge_a_.collect("bridge.a", params);
    bridge_a_norm_.collect("bridge.a_norm", params);
    bridge_b_.collect("bridge.b", params);
    bridge_b_norm_.collect("bridge.b_norm", params);
    for (std::size_t i = 0; i < laterals_.size(); ++i)
        laterals_[i].collect("lateral" + std::to_string(i), params);
    for (std::size_t i = 0; i < merges_.size(); ++i) {
        merges_[i].collect("merge" + std::to_string(i), params);
        merge_norms_[i].collect("merge" + std::to_string(i) + "_norm", params);
    }
    for (std::size_t i = 0; i < heads_.size(); ++i)
        heads_[i].collect("head" + std::to_string(i), params);
    for (std::size_t j = 0; j < fusion_.size(); ++j) {
        if (!fusion_[j].has_fuse) continue;
        fusion_[j].fuse.collect("fusion" + std::to_string(j), params);
        fusion_[j].fuse_norm.collect("fusion" + std::to_string(j) + "_norm", params);
    }
    smooth_.collect("smooth", params);
    smooth_norm_.collect("smooth_norm", params);
    project_.collect("project", params);
    return params;
}

std::int64_t Generator::parameter_count() { return dbk::parameter_count(parameters()); }

MacsBreakdown Generator::macs(int h, int w) const {
    if (h < 1 || w < 1) throw ContractError("generator macs: non-positive dims");
    const int ph = (h + 31) / 32 * 32;
    const int pw = (w + 31) / 32 * 32;
    const int k = static_cast<int>(laterals_.size());

    MacsBreakdown mb;
    mb.backbone = backbone_.macs(ph, pw);

    std::vector<int> lh(static_cast<std::size_t>(k)), lw(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        const int stride = backbone_.tap_stride(i);
        lh[static_cast<std::size_t>(i)] = ph / stride;
        lw[static_cast<std::size_t>(i)] = pw / stride;
    }

    mb.bridge = bridge_a_.macs(lh[static_cast<std::size_t>(k - 1)], lw[static_cast<std::size_t>(k - 1)]) +
                bridge_b_.macs(lh[static_cast<std::size_t>(k - 1)], lw[static_cast<std::size_t>(k - 1)]);
    for (int i = 0; i < k; ++i)
        mb.laterals += laterals_[static_cast<std::size_t>(i)].macs(lh[static_cast<std::size_t>(i)],
                                                                   lw[static_cast<std::size_t>(i)]);
    for (std::size_t i = 0; i < merges_.size(); ++i)
        mb.top_down += merges_[i].macs(lh[i], lw[i]);
    for (int i = 0; i < k; ++i)
        mb.heads += heads_[static_cast<std::size_t>(i)].macs(lh[static_cast<std::size_t>(i)],
                                                             lw[static_cast<std::size_t>(i)]);
    for (const FusionStage& stage : fusion_)
        if (stage.has_fuse)
            mb.fusion += stage.fuse.macs(ph / stage.landing, pw / stage.landing);
    mb.output = smooth_.macs(ph, pw) + project_.macs(ph, pw);
    return mb;
}

std::vector<CheapApplication> Generator::cheap_applications(int h, int w) const {
    if (h < 1 || w < 1) throw ContractError("generator cheap_applications: non-positive dims");
    const int ph = (h + 31) / 32 * 32;
    const int pw = (w + 31) / 32 * 32;
    const int k = static_cast<int>(laterals_.size());

    std::vector<int> lh(static_cast<std::size_t>(k)), lw(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        const int stride = backbone_.tap_stride(i);
        lh[static_cast<std::size_t>(i)] = ph / stride;
        lw[static_cast<std::size_t>(i)] = pw / stride;
    }

    auto entry = [](std::string name, const CheapModule& m, int eh, int ew) {
        return CheapApplication{std::move(name), m.cfg.in_channels, m.cfg.out_channels,
                                m.cfg.cheap_kernel, eh, ew};
    };

    std::vector<CheapApplication> apps;
    for (std::size_t i = 0; i < merges_.size(); ++i)
        apps.push_back(entry("merge" + std::to_string(i), merges_[i], lh[i], lw[i]));
    for (int i = 0; i < k; ++i)
        apps.push_back(entry("head" + std::to_string(i), heads_[static_cast<std::size_t>(i)],
                             lh[static_cast<std::size_t>(i)], lw[static_cast<std::size_t>(i)]));
    for (std::size_t i = 0; i < fusion_.size(); ++i)
        if (fusion_[i].has_fuse)
            apps.push_back(entry("fuse" + std::to_string(i), fusion_[i].fuse,
                                 ph / fusion_[i].landing, pw / fusion_[i].landing));
    apps.push_back(entry("smooth", smooth_, ph, pw));
    return apps;
}

CheckpointBlob generator_checkpoint_blob(Generator& gen) {
    CheckpointBlob blob;
    blob.config_json = gen.config().to_json();
    for (const NamedParam& p : gen.parameters()) {
        auto view = p.tensor.data();
        blob.arrays.emplace_back(p.name, std::vector<float>(view.begin(), view.end()));
    }
    return blob;
}

void save_generator_checkpoint(const std::filesystem::path& path, Generator& gen) {
    save_checkpoint_blob(path, generator_checkpoint_blob(gen));
}

Generator load_generator_checkpoint(const std::filesystem::path& path,
                                    const GeneratorConfig* expected) {
    const CheckpointBlob blob = load_checkpoint_blob(path);
    const GeneratorConfig cfg = GeneratorConfig::from_json(blob.config_json);
    if (expected != nullptr && !(cfg == *expected))
        throw ContractError("checkpoint config does not match the requested one: " +
                            path.string());
    Rng rng(0);
    Generator gen = Generator::make(cfg, rng);
    ParamList params = gen.parameters();
    if (params.size() != blob.arrays.size())
        throw ContractError("checkpoint holds " + std::to_string(blob.arrays.size()) +
                            " arrays, model expects " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, values] = blob.arrays[i];
        auto dst = params[i].tensor.data();
        if (name != params[i].name || values.size() != dst.size())
            throw ContractError("checkpoint array \"" + name +
                                "\" does not match model layout");
        std::copy(values.begin(), values.end(), dst.begin());
    }
    return gen;
}

} // namespace dbk
