#include "deblurkit/training.hpp"

#include "deblurkit/errors.hpp"
#include "deblurkit/ops.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

namespace dbk {

namespace {

double now_seconds() {
    return std::chrono::duration<double>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

std::string slurp_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot read " + p.string());
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

// Smallest crop edge that is a multiple of 32 and leaves the half-size local
// discriminator crop at least one receptive field wide.
constexpr int min_crop_size() {
    int c = 2 * PatchDiscriminator::receptive_field();
    return (c + 31) / 32 * 32;
}

} // namespace

Adam::Adam(ParamList params, float lr, float beta1, float beta2, float eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto n = static_cast<std::size_t>(params_[i].tensor.numel());
        m_[i].assign(n, 0.0f);
        v_[i].assign(n, 0.0f);
    }
}

void Adam::step(float lr_scale) {
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(beta1_), static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(static_cast<double>(beta2_), static_cast<double>(t_));
    const double lr = static_cast<double>(lr_) * static_cast<double>(lr_scale);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto data = params_[i].tensor.data();
        auto grad = params_[i].tensor.grad();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < data.size(); ++j) {
            const double g = grad.empty() ? 0.0 : static_cast<double>(grad[j]);
            m[j] = static_cast<float>(beta1_ * m[j] + (1.0 - beta1_) * g);
            v[j] = static_cast<float>(beta2_ * v[j] + (1.0 - beta2_) * g * g);
            const double mhat = static_cast<double>(m[j]) / bc1;
            const double vhat = static_cast<double>(v[j]) / bc2;
            data[j] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps_));
        }
    }
}

void Adam::zero_grad() {
    for (NamedParam& p : params_) p.tensor.zero_grad();
}

void Adam::save_state(const std::string& prefix, CheckpointBlob& blob) const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        blob.arrays.emplace_back(prefix + ".m." + params_[i].name, m_[i]);
        blob.arrays.emplace_back(prefix + ".v." + params_[i].name, v_[i]);
    }
}

void Adam::load_state(const std::string& prefix, const CheckpointBlob& blob,
                      std::int64_t time_step) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto* m = blob.find(prefix + ".m." + params_[i].name);
        const auto* v = blob.find(prefix + ".v." + params_[i].name);
        if (m == nullptr || v == nullptr || m->size() != m_[i].size() ||
            v->size() != v_[i].size())
            throw ContractError("training state misses optimizer moments for " +
                                params_[i].name);
        m_[i] = *m;
        v_[i] = *v;
    }
    t_ = time_step;
}

std::string lr_schedule_name(LrSchedule s) {
    return s == LrSchedule::constant ? "constant" : "linear-decay";
}

LrSchedule lr_schedule_from_name(const std::string& name) {
    if (name == "constant") return LrSchedule::constant;
    if (name == "linear-decay") return LrSchedule::linear_decay;
    throw ConfigError("unknown lr_schedule '" + name +
                      "' (expected constant or linear-decay)");
}

float lr_scale_at(LrSchedule schedule, std::int64_t step, std::int64_t total_steps) {
    if (schedule == LrSchedule::constant || total_steps <= 1) return 1.0f;
    const std::int64_t half = total_steps / 2;
    if (step < half) return 1.0f;
    return static_cast<float>(total_steps - step) /
           static_cast<float>(total_steps - half);
}

std::string TrainConfig::to_json() const {
    nlohmann::json j;
    j["epochs"] = epochs;
    j["images_per_epoch"] = images_per_epoch;
    j["batch_size"] = batch_size;
    j["crop_size"] = crop_size;
    j["lr_generator"] = lr_generator;
    j["lr_discriminator"] = lr_discriminator;
    j["lr_schedule"] = lr_schedule_name(lr_schedule);
    j["seed"] = seed;
    j["checkpoint_every"] = checkpoint_every;
    j["loss_weights"] = {{"pixel", loss_weights.w_pixel},
                         {"perceptual", loss_weights.w_perceptual},
                         {"adversarial", loss_weights.w_adversarial}};
    j["generator"] = nlohmann::json::parse(generator.to_json());
    j["extractor_path"] = extractor_path.string();
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    TrainConfig cfg;
    try {
        const nlohmann::json j = nlohmann::json::parse(text);
        cfg.epochs = j.at("epochs").get<int>();
        cfg.images_per_epoch = j.at("images_per_epoch").get<int>();
        cfg.batch_size = j.at("batch_size").get<int>();
        cfg.crop_size = j.at("crop_size").get<int>();
        cfg.lr_generator = j.at("lr_generator").get<float>();
        cfg.lr_discriminator = j.at("lr_discriminator").get<float>();
        cfg.lr_schedule = lr_schedule_from_name(j.at("lr_schedule").get<std::string>());
        cfg.seed = j.at("seed").get<std::uint64_t>();
        cfg.checkpoint_every = j.at("checkpoint_every").get<int>();
        const auto& w = j.at("loss_weights");
        cfg.loss_weights.w_pixel = w.at("pixel").get<float>();
        cfg.loss_weights.w_perceptual = w.at("perceptual").get<float>();
        cfg.loss_weights.w_adversarial = w.at("adversarial").get<float>();
        cfg.generator = GeneratorConfig::from_json(j.at("generator").dump());
        cfg.extractor_path = j.at("extractor_path").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train config: malformed JSON: ") + e.what());
    }
    return cfg;
}

std::vector<std::string> validate(const TrainConfig& cfg) {
    // Collect every problem before throwing so a bad config is reported in
    // one pass rather than one complaint per run.
    std::vector<std::string> problems;
    if (cfg.epochs <= 0) problems.push_back("epochs must be positive");
    if (cfg.images_per_epoch <= 0) problems.push_back("images_per_epoch must be positive");
    if (cfg.batch_size <= 0) problems.push_back("batch_size must be positive");
    if (cfg.checkpoint_every <= 0) problems.push_back("checkpoint_every must be positive");
    if (cfg.crop_size % 32 != 0)
        problems.push_back("crop_size must be divisible by 32, got " +
                           std::to_string(cfg.crop_size));
    if (cfg.crop_size < min_crop_size())
        problems.push_back("crop_size must be at least " + std::to_string(min_crop_size()) +
                           " so the half-size local discriminator crop covers its " +
                           std::to_string(PatchDiscriminator::receptive_field()) +
                           "-pixel receptive field");
    if (cfg.batch_size > 0 && cfg.images_per_epoch % cfg.batch_size != 0)
        problems.push_back("images_per_epoch must be divisible by batch_size");
    if (!(cfg.lr_generator > 0.0f) || !(cfg.lr_discriminator > 0.0f))
        problems.push_back("learning rates must be positive");
    if (cfg.loss_weights.w_pixel < 0.0f || cfg.loss_weights.w_perceptual < 0.0f ||
        cfg.loss_weights.w_adversarial < 0.0f)
        problems.push_back("loss weights must be non-negative");
    if (!problems.empty()) {
        std::string all = "invalid training config:";
        for (const std::string& p : problems) all += "\n  - " + p;
        throw ConfigError(all);
    }

    std::vector<std::string> warnings;
    const std::int64_t images =
        static_cast<std::int64_t>(cfg.epochs) * cfg.images_per_epoch;
    if (images > 50000)
        warnings.push_back("schedule covers " + std::to_string(images) +
                           " images; that is paper scale, not desk scale");
    return warnings;
}

std::string StepRecord::to_json() const {
    nlohmann::json j;
    j["step"] = step;
    j["d_loss"] = d_loss;
    j["g_loss"] = g_loss;
    j["pixel"] = pixel;
    j["perceptual"] = perceptual;
    j["adversarial"] = adversarial;
    j["timestamp"] = timestamp;
    return j.dump();
}

StepRecord StepRecord::from_json(const std::string& line) {
    StepRecord r;
    try {
        const nlohmann::json j = nlohmann::json::parse(line);
        r.step = j.at("step").get<std::int64_t>();
        r.d_loss = j.at("d_loss").get<float>();
        r.g_loss = j.at("g_loss").get<float>();
        r.pixel = j.at("pixel").get<float>();
        r.perceptual = j.at("perceptual").get<float>();
        r.adversarial = j.at("adversarial").get<float>();
        r.timestamp = j.at("timestamp").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("step record: malformed JSON: ") + e.what());
    }
    return r;
}

std::vector<CorpusPair> load_corpus_pairs(const std::filesystem::path& corpus_root,
                                          const std::string& split) {
    const auto manifest_path = corpus_root / "manifest.json";
    if (!std::filesystem::exists(manifest_path))
        throw IoError("no manifest.json under " + corpus_root.string());
    const CorpusManifest manifest = CorpusManifest::from_json(slurp_file(manifest_path));
    std::vector<CorpusPair> out;
    for (const PairRecord& rec : manifest.pairs) {
        if (rec.split != split) continue;
        CorpusPair p;
        p.blurred = read_png(corpus_root / rec.blur_path);
        p.sharp = read_png(corpus_root / rec.sharp_path);
        p.record = rec;
        out.push_back(std::move(p));
    }
    if (out.empty())
        throw IoError("corpus " + corpus_root.string() + " has no pairs for split '" +
                      split + "'");
    return out;
}

Trainer::Trainer(TrainConfig cfg, std::vector<CorpusPair> pairs, FeatureExtractor fx)
    : cfg_(std::move(cfg)), pairs_(std::move(pairs)), fx_(std::move(fx)) {
    validate(cfg_);
    if (pairs_.empty()) throw IoError("training corpus is empty");
    for (const CorpusPair& p : pairs_) {
        if (p.blurred.channels != 3 || p.sharp.channels != 3 ||
            p.blurred.height != p.sharp.height || p.blurred.width != p.sharp.width)
            throw ContractError("corpus pair '" + p.record.blur_path +
                                "' is not an aligned RGB pair");
        if (p.blurred.height < cfg_.crop_size || p.blurred.width < cfg_.crop_size)
            throw ConfigError("crop_size " + std::to_string(cfg_.crop_size) +
                              " exceeds corpus image " + p.record.blur_path);
    }
    total_steps_ = cfg_.total_steps();

    Rng init(cfg_.seed);
    gen_ = Generator::make(cfg_.generator, init);
    discs_ = DiscriminatorPair::make(init);
    g_opt_ = Adam(gen_.parameters(), cfg_.lr_generator);
    d_opt_ = Adam(discs_.parameters(), cfg_.lr_discriminator);
    rng_ = init; // data sampling continues the same deterministic stream
}

StepRecord Trainer::training_step() {
    const float scale = lr_scale_at(cfg_.lr_schedule, step_, total_steps_);
    const int batch = cfg_.batch_size;
    const int crop = cfg_.crop_size;

    // Batch of aligned random crops. Draw order per element: pair index,
    // then crop top, then crop left — the replay contract depends on it.
    const std::size_t plane = static_cast<std::size_t>(crop) * crop;
    std::vector<float> bx(static_cast<std::size_t>(batch) * 3 * plane);
    std::vector<float> by(bx.size());
    for (int b = 0; b < batch; ++b) {
        const auto idx = static_cast<std::size_t>(
            rng_.randint(0, static_cast<std::int64_t>(pairs_.size()) - 1));
        const Image& bl = pairs_[idx].blurred;
        const Image& sh = pairs_[idx].sharp;
        const int top = static_cast<int>(rng_.randint(0, bl.height - crop));
        const int left = static_cast<int>(rng_.randint(0, bl.width - crop));
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < crop; ++y)
                for (int x = 0; x < crop; ++x) {
                    const std::size_t at =
                        (static_cast<std::size_t>(b) * 3 + static_cast<std::size_t>(c)) *
                            plane +
                        static_cast<std::size_t>(y) * crop + x;
                    bx[at] = bl.at(c, top + y, left + x);
                    by[at] = sh.at(c, top + y, left + x);
                }
    }
    const TensorShape shape{batch, 3, crop, crop};
    Tensor x = Tensor::from_data(std::move(bx), shape);
    Tensor y = Tensor::from_data(std::move(by), shape);

    Tensor pred = gen_.forward(x);
    if (!ops::all_finite(pred))
        throw DivergenceError("generator output non-finite at step " +
                              std::to_string(step_ + 1));

    const auto to_disc = [](const Tensor& t) {
        return ops::add_scalar(ops::mul_scalar(t, 2.0f), -1.0f);
    };
    const CropRect local_crop = discs_.pick_local_crop(pred.shape(), rng_);

    // Discriminator update on both scales, generator frozen via detach.
    d_opt_.zero_grad();
    const DiscScores real_d = discriminator_forward(to_disc(y), discs_, local_crop);
    const DiscScores fake_d =
        discriminator_forward(to_disc(pred.detach()), discs_, local_crop);
    auto [d_loss, d_side] = ragan_ls_loss({real_d.global_scores, real_d.local_scores},
                                          {fake_d.global_scores, fake_d.local_scores});
    (void)d_side;
    if (!ops::all_finite(d_loss))
        throw DivergenceError("discriminator loss non-finite at step " +
                              std::to_string(step_ + 1));
    const float d_val = d_loss.item();
    d_loss.backward();
    d_opt_.step(scale);

    // Generator update against the just-updated discriminators. Real scores
    // carry no gradient: the generator cannot influence the real branch.
    g_opt_.zero_grad();
    std::vector<Tensor> real_scores;
    {
        NoGradGuard frozen;
        const DiscScores r = discriminator_forward(to_disc(y), discs_, local_crop);
        real_scores = {r.global_scores, r.local_scores};
    }
    const DiscScores fake_g = discriminator_forward(to_disc(pred), discs_, local_crop);
    GeneratorLossBreakdown parts = total_generator_loss(
        pred, y, real_scores, {fake_g.global_scores, fake_g.local_scores}, fx_,
        cfg_.loss_weights);
    if (!ops::all_finite(parts.total) || !std::isfinite(parts.pixel) ||
        !std::isfinite(parts.perceptual) || !std::isfinite(parts.adversarial))
        throw DivergenceError("generator loss non-finite at step " +
                              std::to_string(step_ + 1));
    const float g_val = parts.total.item();
    parts.total.backward();
    g_opt_.step(scale);

    StepRecord rec;
    rec.step = step_ + 1;
    rec.d_loss = d_val;
    rec.g_loss = g_val;
    rec.pixel = parts.pixel;
    rec.perceptual = parts.perceptual;
    rec.adversarial = parts.adversarial;
    rec.timestamp = now_seconds();
    ++step_;
    return rec;
}

std::filesystem::path Trainer::save_checkpoint(const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    const std::string base = "ckpt_" + std::to_string(step_);
    const auto gen_path = out_dir / (base + ".bin");
    save_generator_checkpoint(gen_path, gen_);

    CheckpointBlob side;
    nlohmann::json j;
    j["kind"] = "training-state";
    j["step"] = step_;
    j["total_steps"] = total_steps_;
    j["pair_count"] = pairs_.size();
    j["rng"] = rng_.serialize();
    j["adam_g_t"] = g_opt_.time_step();
    j["adam_d_t"] = d_opt_.time_step();
    j["train"] = nlohmann::json::parse(cfg_.to_json());
    side.config_json = j.dump();
    for (NamedParam& p : discs_.parameters()) {
        auto view = p.tensor.data();
        side.arrays.emplace_back("disc." + p.name,
                                 std::vector<float>(view.begin(), view.end()));
    }
    g_opt_.save_state("adam_g", side);
    d_opt_.save_state("adam_d", side);
    save_checkpoint_blob(out_dir / (base + ".state.bin"), side);

    std::ofstream latest(out_dir / "latest", std::ios::binary | std::ios::trunc);
    if (!latest) throw IoError("cannot write " + (out_dir / "latest").string());
    latest << base + ".bin\n";
    return gen_path;
}

void Trainer::restore(const std::filesystem::path& out_dir) {
    const auto latest_path = out_dir / "latest";
    if (!std::filesystem::exists(latest_path))
        throw IoError("no latest checkpoint under " + out_dir.string());
    std::string name = slurp_file(latest_path);
    while (!name.empty() && (name.back() == '\n' || name.back() == '\r')) name.pop_back();
    if (name.size() < 5 || name.substr(name.size() - 4) != ".bin")
        throw IoError("latest pointer is malformed: '" + name + "'");

    gen_ = load_generator_checkpoint(out_dir / name, &cfg_.generator);
    g_opt_ = Adam(gen_.parameters(), cfg_.lr_generator);

    const std::string side_name = name.substr(0, name.size() - 4) + ".state.bin";
    const CheckpointBlob side = load_checkpoint_blob(out_dir / side_name);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(side.config_json);
        if (j.at("kind").get<std::string>() != "training-state")
            throw ContractError("not a training state file: " +
                                (out_dir / side_name).string());
        if (j.at("train") != nlohmann::json::parse(cfg_.to_json()))
            throw ContractError("resume config differs from the saved run");
        if (j.at("pair_count").get<std::size_t>() != pairs_.size())
            throw ContractError("resume corpus size differs from the saved run");
        step_ = j.at("step").get<std::int64_t>();
        total_steps_ = j.at("total_steps").get<std::int64_t>();
        rng_ = Rng::deserialize(j.at("rng").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("training state: malformed JSON: ") + e.what());
    }

    for (NamedParam& p : discs_.parameters()) {
        const auto* arr = side.find("disc." + p.name);
        auto dst = p.tensor.data();
        if (arr == nullptr || arr->size() != dst.size())
            throw ContractError("training state misses discriminator array " + p.name);
        std::copy(arr->begin(), arr->end(), dst.begin());
    }
    g_opt_.load_state("adam_g", side, j.at("adam_g_t").get<std::int64_t>());
    d_opt_.load_state("adam_d", side, j.at("adam_d_t").get<std::int64_t>());
}

TrainResult train(const TrainConfig& cfg, const std::filesystem::path& corpus_root,
                  const std::filesystem::path& out_dir) {
    TrainResult result;
    result.warnings = validate(cfg);
    std::vector<CorpusPair> pairs = load_corpus_pairs(corpus_root, "train");
    FeatureExtractor fx = FeatureExtractor::load(cfg.extractor_path);
    Trainer trainer(cfg, std::move(pairs), std::move(fx));

    std::filesystem::create_directories(out_dir);
    std::filesystem::path last_ckpt;
    if (std::filesystem::exists(out_dir / "latest")) {
        trainer.restore(out_dir);
        std::string name = slurp_file(out_dir / "latest");
        while (!name.empty() && (name.back() == '\n' || name.back() == '\r'))
            name.pop_back();
        last_ckpt = out_dir / name;
    }

    std::ofstream log(out_dir / "metrics.ndjson", std::ios::binary | std::ios::app);
    if (!log) throw IoError("cannot open " + (out_dir / "metrics.ndjson").string());

    while (trainer.completed_steps() < trainer.total_steps()) {
        StepRecord rec;
        try {
            rec = trainer.training_step();
        } catch (const DivergenceError& e) {
            throw DivergenceError(std::string(e.what()) + "; last good checkpoint: " +
                                  (last_ckpt.empty() ? std::string("none")
                                                     : last_ckpt.string()));
        }
        log << rec.to_json() << "\n" << std::flush;
        result.records.push_back(rec);
        if (trainer.completed_steps() % cfg.checkpoint_every == 0 ||
            trainer.completed_steps() == trainer.total_steps())
            last_ckpt = trainer.save_checkpoint(out_dir);
    }
    result.last_checkpoint = last_ckpt;
    return result;
}

} // namespace dbk
