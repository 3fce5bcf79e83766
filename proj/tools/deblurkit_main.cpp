// Single entry point for the deblurring pipeline: scene rendering, blur
// synthesis, training, batch deblurring, evaluation, compute/size reports,
// latency benchmarks and report plots.
//
// Exit codes: 0 success, 2 usage or configuration problems, 3 runtime
// failures. Every run writes exactly one run_manifest.json next to its
// outputs holding the fully resolved configuration, the seed, timestamps and
// the produced paths, so a run can be reproduced from the manifest alone.

#include "deblurkit/blursynth.hpp"
#include "deblurkit/errors.hpp"
#include "deblurkit/evaluation.hpp"
#include "deblurkit/generator.hpp"
#include "deblurkit/image.hpp"
#include "deblurkit/plots.hpp"
#include "deblurkit/training.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

using dbk::ConfigError;
using dbk::IoError;

constexpr const char* kToolVersion = "0.1.0";

std::string iso_utc_now() {
    const std::time_t now = std::chrono::system_clock::to_time_t(
        std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Collects the pieces of a run manifest and writes it next to the outputs.
class RunManifest {
  public:
    RunManifest(std::string command, std::filesystem::path out_dir)
        : out_dir_(std::move(out_dir)) {
        j_["command"] = std::move(command);
        j_["tool_version"] = kToolVersion;
        j_["started_at"] = iso_utc_now();
        j_["seed"] = nullptr;
        j_["config"] = nlohmann::json::object();
        j_["outputs"] = nlohmann::json::array();
    }

    void set_config(nlohmann::json config) { j_["config"] = std::move(config); }
    void set_seed(std::uint64_t seed) { j_["seed"] = seed; }
    void add_output(const std::filesystem::path& p) {
        j_["outputs"].push_back(p.string());
    }

    std::filesystem::path write() {
        j_["finished_at"] = iso_utc_now();
        std::filesystem::create_directories(out_dir_);
        const std::filesystem::path path = out_dir_ / "run_manifest.json";
        std::ofstream out(path, std::ios::binary);
        out << j_.dump(2) << "\n";
        if (!out) throw IoError("cannot write " + path.string());
        return path;
    }

  private:
    nlohmann::json j_;
    std::filesystem::path out_dir_;
};

std::string join_args(int argc, char** argv) {
    std::string cmd;
    for (int i = 0; i < argc; ++i) {
        if (i) cmd += ' ';
        cmd += argv[i];
    }
    return cmd;
}

std::pair<int, int> parse_size(const std::string& text) {
    const std::size_t x = text.find('x');
    if (x == std::string::npos || x == 0 || x + 1 >= text.size())
        throw ConfigError("sizes are written HxW, e.g. 720x1280; got \"" + text + "\"");
    try {
        return {std::stoi(text.substr(0, x)), std::stoi(text.substr(x + 1))};
    } catch (const std::exception&) {
        throw ConfigError("sizes are written HxW, e.g. 720x1280; got \"" + text + "\"");
    }
}

dbk::Generator load_or_default_generator(const std::string& checkpoint) {
    if (checkpoint.empty()) {
        dbk::Rng rng(0);
        return dbk::Generator::make(dbk::GeneratorConfig::canonical(), rng);
    }
    return dbk::load_generator_checkpoint(checkpoint);
}

// ---------------------------------------------------------------------------
// scene: render procedural frames to feed the blur synthesizer
// ---------------------------------------------------------------------------

struct SceneArgs {
    std::string out;
    int count = 16;
    dbk::SceneSpec spec;
};

int run_scene(const SceneArgs& a, const std::string& command) {
    if (a.count < 1) throw ConfigError("--count must be positive");
    dbk::SceneSpec spec = a.spec;
    spec.travel_frames = a.count;
    std::filesystem::create_directories(a.out);

    RunManifest manifest(command, a.out);
    manifest.set_seed(spec.seed);
    manifest.set_config({{"width", spec.width},
                         {"height", spec.height},
                         {"marker_count", spec.marker_count},
                         {"marker_size", spec.marker_size},
                         {"vx", spec.vx},
                         {"vy", spec.vy},
                         {"travel_frames", spec.travel_frames},
                         {"seed", spec.seed},
                         {"count", a.count}});
    for (int t = 0; t < a.count; ++t) {
        char name[32];
        std::snprintf(name, sizeof(name), "%04d.png", t);
        const std::filesystem::path path = std::filesystem::path(a.out) / name;
        dbk::write_png(path, dbk::render_scene_frame(spec, t));
        manifest.add_output(path);
    }
    manifest.write();
    std::cout << "rendered " << a.count << " frames under " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// synth: sharp frame sequence -> paired blur/sharp corpus
// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string frames;
    std::string out;
    std::string split = "train";
    std::string scene;
    int window = 0; // 0 = use the range
    int window_min = 3;
    int window_max = 11;
    int stride = 5;
    double gamma = 2.2;
    std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a, const std::string& command) {
    dbk::DatasetConfig cfg;
    cfg.frames_dir = a.frames;
    cfg.out_root = a.out;
    cfg.split = a.split;
    cfg.scene = a.scene;
    cfg.window_min = a.window ? a.window : a.window_min;
    cfg.window_max = a.window ? a.window : a.window_max;
    cfg.stride = a.stride;
    cfg.gamma = a.gamma;
    cfg.seed = a.seed;

    if (cfg.window_min % 2 == 0 || cfg.window_max % 2 == 0)
        throw ConfigError("averaging windows must be odd so a middle frame exists; got " +
                          std::to_string(cfg.window_min) + ".." +
                          std::to_string(cfg.window_max));
    if (!std::filesystem::is_directory(cfg.frames_dir))
        throw ConfigError("frames directory " + cfg.frames_dir.string() + " does not exist");

    const dbk::CorpusManifest result = dbk::generate_dataset(cfg);

    RunManifest manifest(command, a.out);
    manifest.set_seed(a.seed);
    manifest.set_config({{"frames_dir", cfg.frames_dir.string()},
                         {"out_root", cfg.out_root.string()},
                         {"split", cfg.split},
                         {"scene", cfg.scene},
                         {"window_min", cfg.window_min},
                         {"window_max", cfg.window_max},
                         {"stride", cfg.stride},
                         {"gamma", cfg.gamma},
                         {"seed", cfg.seed}});
    manifest.add_output(cfg.out_root / "manifest.json");
    manifest.write();

    std::cout << "corpus now holds " << result.pairs.size() << " pairs ("
              << result.skipped.size() << " windows skipped) under " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string corpus;
    std::string out;
    std::string config_file;
    std::string preset;
    std::string resume;
    std::string extractor;
    // flag-level overrides; negative/empty means "not given"
    int epochs = -1;
    int images = -1;
    int batch = -1;
    int crop = -1;
    double lr_g = -1.0;
    double lr_d = -1.0;
    std::string schedule;
    std::int64_t seed = -1;
    int checkpoint_every = -1;
};

dbk::TrainConfig resolve_train_config(const TrainArgs& a) {
    dbk::TrainConfig cfg; // layer 1: built-in defaults

    if (!a.preset.empty()) { // layer 2: named preset
        if (a.preset == "smoke") {
            cfg.epochs = 1;
            cfg.images_per_epoch = 200;
            cfg.batch_size = 1;
            cfg.crop_size = 256;
            cfg.checkpoint_every = 50;
            cfg.seed = 7;
        } else {
            throw ConfigError("unknown preset \"" + a.preset + "\" (available: smoke)");
        }
    }

    if (!a.config_file.empty()) { // layer 3: config file (partial JSON allowed)
        nlohmann::json base;
        nlohmann::json overlay;
        try {
            base = nlohmann::json::parse(cfg.to_json());
            overlay = nlohmann::json::parse(slurp(a.config_file));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config file " + a.config_file + ": " + e.what());
        }
        base.merge_patch(overlay);
        cfg = dbk::TrainConfig::from_json(base.dump());
    }

    // layer 4: individual flags
    if (a.epochs >= 0) cfg.epochs = a.epochs;
    if (a.images >= 0) cfg.images_per_epoch = a.images;
    if (a.batch >= 0) cfg.batch_size = a.batch;
    if (a.crop >= 0) cfg.crop_size = a.crop;
    if (a.lr_g >= 0.0) cfg.lr_generator = static_cast<float>(a.lr_g);
    if (a.lr_d >= 0.0) cfg.lr_discriminator = static_cast<float>(a.lr_d);
    if (!a.schedule.empty()) cfg.lr_schedule = dbk::lr_schedule_from_name(a.schedule);
    if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
    if (a.checkpoint_every >= 0) cfg.checkpoint_every = a.checkpoint_every;
    if (!a.extractor.empty()) cfg.extractor_path = a.extractor;
    return cfg;
}

int run_train(const TrainArgs& a, const std::string& command) {
    dbk::TrainConfig cfg = resolve_train_config(a);

    // Fail fast, before any output exists: bad config or missing corpus must
    // leave no trace behind.
    std::vector<std::string> warnings = dbk::validate(cfg);
    if (!std::filesystem::exists(std::filesystem::path(a.corpus) / "manifest.json"))
        throw ConfigError("no corpus manifest at " + a.corpus +
                          "/manifest.json; run `deblurkit synth` first");

    const std::filesystem::path out_dir = a.out;
    std::filesystem::create_directories(out_dir);

    if (cfg.extractor_path.empty()) {
        // No extractor given: materialize the canonical one inside the run
        // directory so the run stays self-contained and reproducible.
        const std::filesystem::path path = out_dir / "extractor.bin";
        if (!std::filesystem::exists(path)) {
            dbk::FeatureExtractor fx = dbk::FeatureExtractor::make_default();
            dbk::FeatureExtractor::save(path, fx);
        }
        cfg.extractor_path = path;
    }

    if (!a.resume.empty()) {
        // Point the `latest` marker at the requested checkpoint; training
        // always continues from `latest` when it exists.
        const std::filesystem::path target = out_dir / a.resume;
        if (!std::filesystem::exists(target))
            throw ConfigError("cannot resume: " + target.string() + " does not exist");
        std::ofstream latest(out_dir / "latest", std::ios::binary);
        latest << a.resume << "\n";
        if (!latest) throw IoError("cannot write " + (out_dir / "latest").string());
    }

    for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";

    const dbk::TrainResult result = dbk::train(cfg, a.corpus, out_dir);
    for (const std::string& w : result.warnings) std::cerr << "warning: " << w << "\n";

    RunManifest manifest(command, out_dir);
    manifest.set_seed(cfg.seed);
    manifest.set_config(nlohmann::json::parse(cfg.to_json()));
    manifest.add_output(result.last_checkpoint);
    manifest.add_output(out_dir / "metrics.ndjson");
    manifest.write();

    if (!result.records.empty())
        std::cout << "trained " << result.records.size() << " steps; final g_loss "
                  << result.records.back().g_loss << "\n";
    std::cout << "last checkpoint: " << result.last_checkpoint.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// deblur
// ---------------------------------------------------------------------------

struct DeblurArgs {
    std::string input;
    std::string checkpoint;
    std::string out;
    std::string expect_config;
};

int run_deblur(const DeblurArgs& a, const std::string& command) {
    std::vector<std::filesystem::path> inputs;
    if (std::filesystem::is_directory(a.input)) {
        for (const auto& entry : std::filesystem::directory_iterator(a.input))
            if (entry.path().extension() == ".png") inputs.push_back(entry.path());
        std::sort(inputs.begin(), inputs.end());
        if (inputs.empty())
            throw ConfigError("no .png inputs under " + a.input);
    } else if (std::filesystem::exists(a.input)) {
        inputs.push_back(a.input);
    } else {
        throw ConfigError("input " + a.input + " does not exist");
    }

    dbk::Generator gen = [&] {
        if (a.expect_config.empty()) return dbk::load_generator_checkpoint(a.checkpoint);
        const dbk::GeneratorConfig expected =
            dbk::GeneratorConfig::from_json(slurp(a.expect_config));
        try {
            return dbk::load_generator_checkpoint(a.checkpoint, &expected);
        } catch (const dbk::ContractError&) {
            // Name the differing fields instead of a bare mismatch.
            const dbk::GeneratorConfig stored =
                dbk::load_generator_checkpoint(a.checkpoint).config();
            const nlohmann::json sj = nlohmann::json::parse(stored.to_json());
            const nlohmann::json ej = nlohmann::json::parse(expected.to_json());
            std::string diff;
            for (const auto& [key, value] : ej.items())
                if (sj.at(key) != value)
                    diff += "\n  " + key + ": checkpoint has " + sj.at(key).dump() +
                            ", expected " + value.dump();
            throw ConfigError("checkpoint " + a.checkpoint +
                              " does not match the expected architecture:" + diff);
        }
    }();

    std::filesystem::create_directories(a.out);
    RunManifest manifest(command, a.out);
    manifest.set_config({{"checkpoint", a.checkpoint},
                         {"generator", nlohmann::json::parse(gen.config().to_json())}});

    dbk::NoGradGuard guard;
    for (const std::filesystem::path& in_path : inputs) {
        const dbk::Image input = dbk::read_png(in_path);
        const dbk::Tensor out = gen.forward(dbk::image_to_tensor(input));
        const std::filesystem::path out_path =
            std::filesystem::path(a.out) / in_path.filename();
        dbk::write_png(out_path, dbk::tensor_to_image(out));
        manifest.add_output(out_path);
    }
    manifest.write();
    std::cout << "deblurred " << inputs.size() << " image"
              << (inputs.size() == 1 ? "" : "s") << " into " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string corpus;
    std::string checkpoint;
    std::string out;
    std::string split = "test";
    std::string detector_cmd;
    std::string detector_name = "stub";
    bool no_detector = false;
    bool latency = false;
    int warmup = 3;
    int repeats = 10;
    std::string flops_size = "720x1280";
    int max_pairs = 0;
};

int run_eval(const EvalArgs& a, const std::string& command) {
    dbk::EvalOptions opts;
    opts.split = a.split;
    opts.run_detector = !a.no_detector;
    opts.detector_command = a.detector_cmd;
    opts.detector_name = a.detector_name;
    opts.measure_latency = a.latency;
    opts.latency_warmup = a.warmup;
    opts.latency_repeats = a.repeats;
    std::tie(opts.flops_height, opts.flops_width) = parse_size(a.flops_size);
    opts.max_pairs = a.max_pairs;
    opts.checkpoint_note = a.checkpoint;

    if (opts.run_detector && opts.detector_command.empty())
        throw ConfigError(
            "marker detection needs --detector-cmd (or pass --no-detector). The command "
            "is run as `cmd <request.jsonl> <response.jsonl>`; each request line is "
            "{\"image_path\": str, \"detector\": str} and each response line must be "
            "{\"image_path\": str, \"markers\": [{\"id\": int, \"corners\": [[x, y] x4]}]}. "
            "The bundled `deblurkit-stub-detector` speaks this protocol.");

    dbk::Generator gen = dbk::load_generator_checkpoint(a.checkpoint);
    const dbk::EvalReport report = dbk::evaluate_corpus(gen, a.corpus, a.out, opts);

    const std::filesystem::path report_path = std::filesystem::path(a.out) / "report.json";
    {
        std::ofstream out(report_path, std::ios::binary);
        out << report.to_json();
        if (!out) throw IoError("cannot write " + report_path.string());
    }
    const std::vector<std::filesystem::path> plot_files =
        dbk::render_report_plots(report, std::filesystem::path(a.out) / "plots");

    RunManifest manifest(command, a.out);
    manifest.set_config({{"corpus", a.corpus},
                         {"checkpoint", a.checkpoint},
                         {"split", a.split},
                         {"detector", a.no_detector ? "" : a.detector_name},
                         {"flops_size", a.flops_size},
                         {"max_pairs", a.max_pairs}});
    manifest.add_output(report_path);
    for (const auto& p : plot_files) manifest.add_output(p);
    manifest.write();

    for (const dbk::MetricsSection& s : report.metrics)
        std::cout << s.set_name << ": mean psnr " << s.psnr.mean << " dB, mean ssim "
                  << s.ssim.mean << "\n";
    if (report.has_detection)
        for (const auto& [name, counts] : report.detection.sets)
            std::cout << "detection " << name << ": " << counts.detected << " markers (rate "
                      << counts.rate << ")\n";
    std::cout << "report: " << report_path.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// flops / bench / plots
// ---------------------------------------------------------------------------

struct FlopsArgs {
    std::string checkpoint;
    std::string size = "720x1280";
    std::string out;
};

int run_flops(const FlopsArgs& a, const std::string& command) {
    const auto [h, w] = parse_size(a.size);
    dbk::Generator gen = load_or_default_generator(a.checkpoint);
    const dbk::FlopsReport report = dbk::count_flops(gen, h, w);
    const dbk::CheapPathComparison cheap = dbk::compare_cheap_path(gen, h, w);
    const std::int64_t bytes = dbk::checkpoint_byte_size(gen);

    std::printf("%-10s %16s %16s\n", "section", "MACs", "FLOPs");
    for (const dbk::FlopsRow& row : report.rows)
        std::printf("%-10s %16lld %16lld\n", row.section.c_str(),
                    static_cast<long long>(row.macs), static_cast<long long>(row.flops));
    std::printf("%-10s %16lld %16lld\n", "total", static_cast<long long>(report.total_macs),
                static_cast<long long>(report.total_flops));
    std::cout << "convention: " << report.convention << "\n";
    std::cout << "cheap decoder path: " << cheap.cheap_macs << " MACs vs "
              << cheap.standard_macs << " standard (ratio " << cheap.ratio << ")\n";
    std::cout << "parameters: " << gen.parameter_count() << ", checkpoint "
              << static_cast<double>(bytes) / 1e6 << " MB\n";

    if (!a.out.empty()) {
        const std::filesystem::path json_path = std::filesystem::path(a.out) / "flops.json";
        std::filesystem::create_directories(a.out);
        nlohmann::json j = nlohmann::json::parse(report.to_json());
        j["cheap_path"] = {{"cheap_macs", cheap.cheap_macs},
                           {"standard_macs", cheap.standard_macs},
                           {"ratio", cheap.ratio}};
        j["parameters"] = gen.parameter_count();
        j["model_mb"] = static_cast<double>(bytes) / 1e6;
        std::ofstream out(json_path, std::ios::binary);
        out << j.dump(2) << "\n";
        if (!out) throw IoError("cannot write " + json_path.string());

        RunManifest manifest(command, a.out);
        manifest.set_config({{"checkpoint", a.checkpoint}, {"size", a.size}});
        manifest.add_output(json_path);
        manifest.write();
    }
    return 0;
}

struct BenchArgs {
    std::string checkpoint;
    std::string size = "256x256";
    int warmup = 3;
    int repeats = 10;
    std::string out;
};

int run_bench(const BenchArgs& a, const std::string& command) {
    const auto [h, w] = parse_size(a.size);
    dbk::Generator gen = load_or_default_generator(a.checkpoint);
    const dbk::LatencyStats stats = dbk::benchmark_inference(gen, h, w, a.warmup, a.repeats);

    std::cout << "latency at " << h << "x" << w << " on " << stats.device << ":\n";
    std::cout << "  mean " << stats.mean_ms << " ms, p50 " << stats.p50_ms << " ms, p95 "
              << stats.p95_ms << " ms over " << stats.repeats << " runs\n";
    std::cout << "  reference: " << stats.reference_ms << " ms on "
              << stats.reference_device << " (informational, not comparable)\n";

    if (!a.out.empty()) {
        std::filesystem::create_directories(a.out);
        const std::filesystem::path json_path = std::filesystem::path(a.out) / "bench.json";
        std::ofstream out(json_path, std::ios::binary);
        out << nlohmann::json{{"height", stats.height},
                              {"width", stats.width},
                              {"warmup", stats.warmup},
                              {"repeats", stats.repeats},
                              {"mean_ms", stats.mean_ms},
                              {"p50_ms", stats.p50_ms},
                              {"p95_ms", stats.p95_ms},
                              {"device", stats.device},
                              {"samples_ms", stats.samples_ms},
                              {"reference_ms", stats.reference_ms},
                              {"reference_device", stats.reference_device}}
                       .dump(2)
               << "\n";
        if (!out) throw IoError("cannot write " + json_path.string());

        RunManifest manifest(command, a.out);
        manifest.set_config({{"checkpoint", a.checkpoint},
                             {"size", a.size},
                             {"warmup", a.warmup},
                             {"repeats", a.repeats}});
        manifest.add_output(json_path);
        manifest.write();
    }
    return 0;
}

struct PlotsArgs {
    std::string report;
    std::string out;
};

int run_plots(const PlotsArgs& a, const std::string& command) {
    const dbk::EvalReport report = dbk::EvalReport::from_json(slurp(a.report));
    const std::vector<std::filesystem::path> files =
        dbk::render_report_plots(report, a.out);

    RunManifest manifest(command, a.out);
    manifest.set_config({{"report", a.report}});
    for (const auto& p : files) manifest.add_output(p);
    manifest.write();

    for (const auto& p : files) std::cout << "wrote " << p.string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"lightweight motion-deblurring pipeline"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);
    const std::string command = join_args(argc, argv);

    SceneArgs scene;
    CLI::App* scene_cmd = app.add_subcommand("scene", "render procedural marker frames");
    scene_cmd->add_option("--out", scene.out, "frame output directory")->required();
    scene_cmd->add_option("--count", scene.count, "number of frames");
    scene_cmd->add_option("--width", scene.spec.width, "frame width");
    scene_cmd->add_option("--height", scene.spec.height, "frame height");
    scene_cmd->add_option("--markers", scene.spec.marker_count, "markers in the scene");
    scene_cmd->add_option("--marker-size", scene.spec.marker_size,
                          "marker edge in pixels (multiple of 6)");
    scene_cmd->add_option("--vx", scene.spec.vx, "camera x velocity per frame");
    scene_cmd->add_option("--vy", scene.spec.vy, "camera y velocity per frame");
    scene_cmd->add_option("--seed", scene.spec.seed, "scene layout seed");

    SynthArgs synth;
    CLI::App* synth_cmd =
        app.add_subcommand("synth", "average sharp frames into a blur/sharp corpus");
    synth_cmd->add_option("--frames", synth.frames, "directory of sharp frames")->required();
    synth_cmd->add_option("--out", synth.out, "corpus root")->required();
    synth_cmd->add_option("--split", synth.split, "train or test");
    synth_cmd->add_option("--scene", synth.scene, "scene name (default: frames dir name)");
    synth_cmd->add_option("--window", synth.window, "fixed averaging window (odd)");
    synth_cmd->add_option("--window-range", [&synth](const std::vector<std::string>& v) {
        if (v.size() != 2) return false;
        try {
            synth.window_min = std::stoi(v[0]);
            synth.window_max = std::stoi(v[1]);
        } catch (const std::exception&) {
            return false;
        }
        return true;
    }, "min and max averaging window (odd)")->expected(2);
    synth_cmd->add_option("--stride", synth.stride, "frames between window starts");
    synth_cmd->add_option("--gamma", synth.gamma, "camera response exponent");
    synth_cmd->add_option("--seed", synth.seed, "window-size sampling seed");

    TrainArgs train;
    CLI::App* train_cmd = app.add_subcommand("train", "train the deblurring generator");
    train_cmd->add_option("--corpus", train.corpus, "corpus root")->required();
    train_cmd->add_option("--out", train.out, "run directory")->required();
    train_cmd->add_option("--config", train.config_file,
                          "JSON config file (partial; overrides defaults and preset)");
    train_cmd->add_option("--preset", train.preset, "named schedule (smoke)");
    train_cmd->add_option("--resume", train.resume,
                          "checkpoint file name in the run directory to resume from");
    train_cmd->add_option("--extractor", train.extractor, "perceptual feature extractor");
    train_cmd->add_option("--epochs", train.epochs, "epochs");
    train_cmd->add_option("--images", train.images, "images per epoch");
    train_cmd->add_option("--batch", train.batch, "batch size");
    train_cmd->add_option("--crop", train.crop, "training crop edge");
    train_cmd->add_option("--lr-g", train.lr_g, "generator learning rate");
    train_cmd->add_option("--lr-d", train.lr_d, "discriminator learning rate");
    train_cmd->add_option("--schedule", train.schedule, "constant or linear_decay");
    train_cmd->add_option("--seed", train.seed, "training seed");
    train_cmd->add_option("--checkpoint-every", train.checkpoint_every,
                          "steps between checkpoints");

    DeblurArgs deblur;
    CLI::App* deblur_cmd = app.add_subcommand("deblur", "deblur an image or directory");
    deblur_cmd->add_option("--input", deblur.input, "input image or directory")->required();
    deblur_cmd->add_option("--checkpoint", deblur.checkpoint, "generator checkpoint")
        ->required();
    deblur_cmd->add_option("--out", deblur.out, "output directory")->required();
    deblur_cmd->add_option("--expect-config", deblur.expect_config,
                           "generator config JSON the checkpoint must match");

    EvalArgs eval;
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint over a corpus");
    eval_cmd->add_option("--corpus", eval.corpus, "corpus root")->required();
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "generator checkpoint")->required();
    eval_cmd->add_option("--out", eval.out, "evaluation output directory")->required();
    eval_cmd->add_option("--split", eval.split, "corpus split to evaluate");
    eval_cmd->add_option("--detector-cmd", eval.detector_cmd, "marker detector command");
    eval_cmd->add_option("--detector-name", eval.detector_name, "detector label");
    eval_cmd->add_flag("--no-detector", eval.no_detector, "skip the marker section");
    eval_cmd->add_flag("--latency", eval.latency, "time inference at the corpus size");
    eval_cmd->add_option("--warmup", eval.warmup, "latency warmup runs");
    eval_cmd->add_option("--repeats", eval.repeats, "latency timed runs");
    eval_cmd->add_option("--flops-size", eval.flops_size, "resolution for compute figures");
    eval_cmd->add_option("--max-pairs", eval.max_pairs, "evaluate at most this many pairs");

    FlopsArgs flops;
    CLI::App* flops_cmd =
        app.add_subcommand("flops", "analytic compute and size report");
    flops_cmd->add_option("--checkpoint", flops.checkpoint,
                          "generator checkpoint (default: canonical architecture)");
    flops_cmd->add_option("--size", flops.size, "input size HxW");
    flops_cmd->add_option("--out", flops.out, "also write flops.json here");

    BenchArgs bench;
    CLI::App* bench_cmd = app.add_subcommand("bench", "wall-clock inference benchmark");
    bench_cmd->add_option("--checkpoint", bench.checkpoint,
                          "generator checkpoint (default: canonical architecture)");
    bench_cmd->add_option("--size", bench.size, "input size HxW");
    bench_cmd->add_option("--warmup", bench.warmup, "warmup runs (>= 3)");
    bench_cmd->add_option("--repeats", bench.repeats, "timed runs (>= 10)");
    bench_cmd->add_option("--out", bench.out, "also write bench.json here");

    PlotsArgs plots;
    CLI::App* plots_cmd = app.add_subcommand("plots", "render charts from a report.json");
    plots_cmd->add_option("--report", plots.report, "evaluation report JSON")->required();
    plots_cmd->add_option("--out", plots.out, "plot output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (scene_cmd->parsed()) return run_scene(scene, command);
        if (synth_cmd->parsed()) return run_synth(synth, command);
        if (train_cmd->parsed()) return run_train(train, command);
        if (deblur_cmd->parsed()) return run_deblur(deblur, command);
        if (eval_cmd->parsed()) return run_eval(eval, command);
        if (flops_cmd->parsed()) return run_flops(flops, command);
        if (bench_cmd->parsed()) return run_bench(bench, command);
        if (plots_cmd->parsed()) return run_plots(plots, command);
        std::cerr << "no subcommand selected\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const dbk::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
