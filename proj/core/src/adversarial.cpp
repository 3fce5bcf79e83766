#include "deblurkit/adversarial.hpp"

#include "deblurkit/errors.hpp"

#include <algorithm>
#include "deblurkit/serialize.hpp"

namespace dbk {

namespace {

constexpr float kLeakySlope = 0.2f;

void check_disc_input(const Tensor& x) {
    const TensorShape s = x.shape();
    if (s.c != 3)
        throw ContractError("discriminator: expected 3 input channels, got " + s.str());
    if (s.h < PatchDiscriminator::receptive_field() ||
        s.w < PatchDiscriminator::receptive_field())
        throw ContractError("discriminator: input " + s.str() +
                            " is smaller than the 70x70 receptive field");
    if (!ops::all_finite(x))
        throw ContractError("discriminator: non-finite input");
    for (float v : x.data())
        if (v < -1.001f || v > 1.001f)
            throw ContractError("discriminator: input outside the [-1,1] domain");
}

Tensor crop_tensor(const Tensor& x, const CropRect& r) {
    const TensorShape s = x.shape();
    if (r.top < 0 || r.left < 0 || r.height < 1 || r.width < 1 ||
        r.top + r.height > s.h || r.left + r.width > s.w)
        throw ContractError("discriminator: local crop out of bounds");
    return ops::crop(x, r.top, s.h - r.top - r.height, r.left,
                     s.w - r.left - r.width);
}

Tensor scale_loss(const std::vector<Tensor>& a_scores,
                  const std::vector<Tensor>& b_scores) {
    // E[(A - E[B] - 1)^2] + E[(B - E[A] + 1)^2], then averaged over scales.
    Tensor acc;
    for (std::size_t i = 0; i < a_scores.size(); ++i) {
        const Tensor& a = a_scores[i];
        const Tensor& b = b_scores[i];
        Tensor ma = ops::mean_all(a);
        Tensor mb = ops::mean_all(b);
        Tensor t1 = ops::add_scalar(ops::sub_broadcast(a, mb), -1.0f);
        Tensor t2 = ops::add_scalar(ops::sub_broadcast(b, ma), 1.0f);
        Tensor term = ops::add(ops::mean_all(ops::mul(t1, t1)),
                               ops::mean_all(ops::mul(t2, t2)));
        acc = acc.defined() ? ops::add(acc, term) : term;
    }
    return ops::mul_scalar(acc, 1.0f / static_cast<float>(a_scores.size()));
}

} // namespace

PatchDiscriminator PatchDiscriminator::make(Rng& rng) {
    PatchDiscriminator d;
    d.c1 = Conv2d::make(3, 64, 4, 2, 1, 1, true, rng);
    // Convs that feed an instance norm carry no bias: the norm cancels any
    // per-plane constant, which would leave the bias without a gradient.
    d.c2 = Conv2d::make(64, 128, 4, 2, 1, 1, false, rng);
    d.n2 = InstanceNorm2d::make(128);
    d.c3 = Conv2d::make(128, 256, 4, 2, 1, 1, false, rng);
    d.n3 = InstanceNorm2d::make(256);
    d.c4 = Conv2d::make(256, 512, 4, 1, 1, 1, false, rng);
    d.n4 = InstanceNorm2d::make(512);
    d.head = Conv2d::make(512, 1, 4, 1, 1, 1, true, rng);
    return d;
}

Tensor PatchDiscriminator::forward(const Tensor& x) const {
    check_disc_input(x);
    Tensor h = ops::leaky_relu(c1.forward(x), kLeakySlope);
    h = ops::leaky_relu(n2.forward(c2.forward(h)), kLeakySlope);
    h = ops::leaky_relu(n3.forward(c3.forward(h)), kLeakySlope);
    h = ops::leaky_relu(n4.forward(c4.forward(h)), kLeakySlope);
    return head.forward(h);
}

void PatchDiscriminator::collect(const std::string& prefix, ParamList& out) {
    c1.collect(prefix + ".c1", out);
    c2.collect(prefix + ".c2", out);
    n2.collect(prefix + ".n2", out);
    c3.collect(prefix + ".c3", out);
    n3.collect(prefix + ".n3", out);
    c4.collect(prefix + ".c4", out);
    n4.collect(prefix + ".n4", out);
    head.collect(prefix + ".head", out);
}

DiscriminatorPair DiscriminatorPair::make(Rng& rng) {
    DiscriminatorPair pair;
    pair.global_disc = PatchDiscriminator::make(rng);
    pair.local_disc = PatchDiscriminator::make(rng);
    return pair;
}

CropRect DiscriminatorPair::pick_local_crop(const TensorShape& shape, Rng& rng) const {
    CropRect r;
    r.height = shape.h / 2;
    r.width = shape.w / 2;
    r.top = static_cast<int>(rng.randint(0, shape.h - r.height));
    r.left = static_cast<int>(rng.randint(0, shape.w - r.width));
    return r;
}

ParamList DiscriminatorPair::parameters() {
    ParamList params;
    global_disc.collect("global", params);
    local_disc.collect("local", params);
    return params;
}

DiscScores discriminator_forward(const Tensor& img, const DiscriminatorPair& pair,
                                 const CropRect& local_crop) {
    DiscScores out;
    out.global_scores = pair.global_disc.forward(img);
    out.local_scores = pair.local_disc.forward(crop_tensor(img, local_crop));
    out.local_crop = local_crop;
    return out;
}

std::pair<Tensor, Tensor> ragan_ls_loss(const std::vector<Tensor>& real_scores,
                                        const std::vector<Tensor>& fake_scores) {
    if (real_scores.empty() || real_scores.size() != fake_scores.size())
        throw ContractError("ragan_ls_loss: need matching non-empty score sets");
    for (const Tensor& t : real_scores)
        if (!ops::all_finite(t))
            throw DivergenceError("ragan_ls_loss: non-finite real scores");
    for (const Tensor& t : fake_scores)
        if (!ops::all_finite(t))
            throw DivergenceError("ragan_ls_loss: non-finite fake scores");
    Tensor d_loss = scale_loss(real_scores, fake_scores);
    Tensor g_loss = scale_loss(fake_scores, real_scores);
    return {d_loss, g_loss};
}

FeatureExtractor FeatureExtractor::make_default() {
    Rng rng(0x9e3779b9u);
    FeatureExtractor fx;
    fx.c1 = Conv2d::make(3, 16, 3, 1, 1, 1, true, rng);
    fx.c2 = Conv2d::make(16, 32, 3, 2, 1, 1, true, rng);
    fx.c3 = Conv2d::make(32, 64, 3, 2, 1, 1, true, rng);
    ParamList params;
    fx.c1.collect("c1", params);
    fx.c2.collect("c2", params);
    fx.c3.collect("c3", params);
    for (NamedParam& p : params) p.tensor.set_requires_grad(false);
    return fx;
}

void FeatureExtractor::save(const std::filesystem::path& path, FeatureExtractor& fx) {
    CheckpointBlob blob;
    blob.config_json = "{\"format\":\"perceptual-extractor\",\"layer\":\"relu3\"}";
    ParamList params;
    fx.c1.collect("c1", params);
    fx.c2.collect("c2", params);
    fx.c3.collect("c3", params);
    for (const NamedParam& p : params) {
        auto view = p.tensor.data();
        blob.arrays.emplace_back(p.name, std::vector<float>(view.begin(), view.end()));
    }
    save_checkpoint_blob(path, blob);
}

FeatureExtractor FeatureExtractor::load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw DependencyError(
            "perceptual feature extractor weights not found at '" + path.string() +
            "'; generate the artifact with `deblurkit-make-extractor --out " +
            path.string() + "` (deterministic) and retry");
    CheckpointBlob blob;
    try {
        blob = load_checkpoint_blob(path);
    } catch (const Error& e) {
        throw DependencyError("perceptual feature extractor at '" + path.string() +
                              "' is unreadable: " + e.what());
    }
    FeatureExtractor fx = make_default();
    ParamList params;
    fx.c1.collect("c1", params);
    fx.c2.collect("c2", params);
    fx.c3.collect("c3", params);
    for (NamedParam& p : params) {
        const std::vector<float>* arr = blob.find(p.name);
        if (!arr || arr->size() != p.tensor.data().size())
            throw DependencyError("perceptual feature extractor at '" + path.string() +
                                  "' does not contain expected array '" + p.name + "'");
        std::copy(arr->begin(), arr->end(), p.tensor.data().begin());
    }
    return fx;
}

Tensor FeatureExtractor::features(const Tensor& img01) const {
    if (img01.shape().c != 3)
        throw ContractError("feature extractor: expected 3 input channels, got " +
                            img01.shape().str());
    Tensor h = ops::relu(c1.forward(img01));
    h = ops::relu(c2.forward(h));
    return ops::relu(c3.forward(h));
}

Tensor perceptual_loss(const Tensor& pred, const Tensor& target,
                       const FeatureExtractor& fx) {
    if (!(pred.shape() == target.shape()))
        throw ContractError("perceptual_loss: shape mismatch " + pred.shape().str() +
                            " vs " + target.shape().str());
    return ops::mse(fx.features(pred), fx.features(target));
}

float combine_weighted(const LossWeights& w, float pixel, float perceptual,
                       float adversarial) {
    if (w.w_pixel < 0.0f || w.w_perceptual < 0.0f || w.w_adversarial < 0.0f)
        throw ConfigError("loss weights must be non-negative");
    return w.w_pixel * pixel + w.w_perceptual * perceptual + w.w_adversarial * adversarial;
}

GeneratorLossBreakdown total_generator_loss(const Tensor& pred, const Tensor& target,
                                            const std::vector<Tensor>& real_scores,
                                            const std::vector<Tensor>& fake_scores,
                                            const FeatureExtractor& fx,
                                            const LossWeights& w) {
    if (w.w_pixel < 0.0f || w.w_perceptual < 0.0f || w.w_adversarial < 0.0f)
        throw ConfigError("loss weights must be non-negative");
    GeneratorLossBreakdown out;
    Tensor pixel = ops::mse(pred, target);
    Tensor perceptual = perceptual_loss(pred, target, fx);
    Tensor g_loss = ragan_ls_loss(real_scores, fake_scores).second;
    out.pixel = pixel.item();
    out.perceptual = perceptual.item();
    out.adversarial = g_loss.item();
    out.total = ops::add(ops::add(ops::mul_scalar(pixel, w.w_pixel),
                                  ops::mul_scalar(perceptual, w.w_perceptual)),
                         ops::mul_scalar(g_loss, w.w_adversarial));
    return out;
}

} // namespace dbk
