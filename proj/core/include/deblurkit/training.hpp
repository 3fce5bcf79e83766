#pragma once

#include "deblurkit/adversarial.hpp"
#include "deblurkit/blursynth.hpp"
#include "deblurkit/generator.hpp"
#include "deblurkit/module.hpp"
#include "deblurkit/rng.hpp"
#include "deblurkit/serialize.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dbk {

/// Adaptive-moment optimizer over an ordered parameter list. Moment buffers
/// are keyed by list position, so the list must come from the same
/// deterministic parameter walk every time.
class Adam {
  public:
    Adam() = default;
    explicit Adam(ParamList params, float lr, float beta1 = 0.9f, float beta2 = 0.999f,
                  float eps = 1e-8f);

    /// One update from the accumulated gradients; lr_scale multiplies the
    /// base learning rate (schedule hook). Missing gradients count as zero.
    void step(float lr_scale = 1.0f);
    void zero_grad();

    std::int64_t time_step() const { return t_; }
    float base_lr() const { return lr_; }

    /// Moment buffers under `<prefix>.m.<param>` / `<prefix>.v.<param>`.
    void save_state(const std::string& prefix, CheckpointBlob& blob) const;
    void load_state(const std::string& prefix, const CheckpointBlob& blob,
                    std::int64_t time_step);

  private:
    ParamList params_;
    float lr_ = 1e-4f, beta1_ = 0.9f, beta2_ = 0.999f, eps_ = 1e-8f;
    std::int64_t t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

enum class LrSchedule { constant, linear_decay };

std::string lr_schedule_name(LrSchedule s);
LrSchedule lr_schedule_from_name(const std::string& name);

/// Learning-rate multiplier for a 0-indexed step: 1 through the first half
/// of the run, then a linear ramp toward zero across the second half.
float lr_scale_at(LrSchedule schedule, std::int64_t step, std::int64_t total_steps);

struct TrainConfig {
    int epochs = 1;
    int images_per_epoch = 16;
    int batch_size = 1;
    int crop_size = 256; // training patch edge, divisible by 32
    float lr_generator = 1e-4f;
    float lr_discriminator = 1e-4f;
    LrSchedule lr_schedule = LrSchedule::linear_decay;
    std::uint64_t seed = 0;
    int checkpoint_every = 100; // steps between checkpoints
    LossWeights loss_weights;
    GeneratorConfig generator = GeneratorConfig::canonical();
    std::filesystem::path extractor_path;

    std::int64_t total_steps() const {
        return static_cast<std::int64_t>(epochs) * (images_per_epoch / batch_size);
    }

    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

/// Throws ConfigError on invariant violations; returns advisory warnings
/// (a schedule far beyond desk scale is legal but flagged).
std::vector<std::string> validate(const TrainConfig& cfg);

/// One line of the metrics log.
struct StepRecord {
    std::int64_t step = 0; // 1-based count of completed steps
    float d_loss = 0.0f;
    float g_loss = 0.0f;
    float pixel = 0.0f;
    float perceptual = 0.0f;
    float adversarial = 0.0f;
    double timestamp = 0.0; // seconds since the unix epoch

    std::string to_json() const;
    static StepRecord from_json(const std::string& line);
};

/// An in-memory corpus pair plus its manifest row.
struct CorpusPair {
    Image blurred;
    Image sharp;
    PairRecord record;
};

/// Reads every pair of one split from `<root>/manifest.json`. Missing
/// manifest, unknown split content, or unreadable pair files fail fast.
std::vector<CorpusPair> load_corpus_pairs(const std::filesystem::path& corpus_root,
                                          const std::string& split);

/// Drives one generator / discriminator-pair duel over an in-memory corpus.
/// Each training step samples a batch of seed-deterministic aligned crops,
/// updates the discriminators on detached generator output, then updates the
/// generator through the full weighted objective.
class Trainer {
  public:
    Trainer(TrainConfig cfg, std::vector<CorpusPair> pairs, FeatureExtractor fx);

    /// One discriminator update (both scales) followed by one generator
    /// update. Throws DivergenceError the moment any loss or the generator
    /// output stops being finite.
    StepRecord training_step();

    std::int64_t completed_steps() const { return step_; }
    std::int64_t total_steps() const { return total_steps_; }

    /// Writes `ckpt_<step>.bin` (generator weights, loadable standalone),
    /// `ckpt_<step>.state.bin` (discriminators, optimizer moments, rng) and
    /// repoints `latest`. Returns the generator checkpoint path.
    std::filesystem::path save_checkpoint(const std::filesystem::path& out_dir);

    /// Restores the state written by save_checkpoint from `<dir>/latest`,
    /// resuming bit-identically. The config and corpus must match the saved
    /// run.
    void restore(const std::filesystem::path& out_dir);

    Generator& generator() { return gen_; }
    DiscriminatorPair& discriminators() { return discs_; }
    Rng& rng() { return rng_; }
    const TrainConfig& config() const { return cfg_; }

  private:
    TrainConfig cfg_;
    std::vector<CorpusPair> pairs_;
    FeatureExtractor fx_;
    Generator gen_;
    DiscriminatorPair discs_;
    Adam g_opt_, d_opt_;
    Rng rng_;
    std::int64_t step_ = 0;
    std::int64_t total_steps_ = 0;
};

struct TrainResult {
    std::filesystem::path last_checkpoint;
    std::vector<StepRecord> records; // steps executed by this call
    std::vector<std::string> warnings;
};

/// Full training run: loads the train split of the corpus, trains for the
/// configured schedule, appends newline-delimited JSON step records to
/// `<out_dir>/metrics.ndjson` and checkpoints on the configured cadence plus
/// at the final step. If `<out_dir>/latest` exists the run resumes from it.
/// A divergence aborts with the last good checkpoint named in the error.
TrainResult train(const TrainConfig& cfg, const std::filesystem::path& corpus_root,
                  const std::filesystem::path& out_dir);

} // namespace dbk
