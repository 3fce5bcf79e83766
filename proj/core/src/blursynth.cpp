#include "deblurkit/blursynth.hpp"

#include "deblurkit/errors.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace dbk {

namespace {

void check_domain(const Image& img, const char* op) {
    for (float v : img.data)
        if (!(v >= 0.0f && v <= 1.0f))
            throw ContractError(std::string(op) + ": values outside [0,1]");
}

void check_gamma(double gamma, const char* op) {
    if (!(gamma > 0.0) || !std::isfinite(gamma))
        throw ContractError(std::string(op) + ": gamma must be positive and finite");
}

Image pow_image(const Image& src, double exponent) {
    Image out = src;
    for (float& v : out.data)
        v = static_cast<float>(std::pow(static_cast<double>(v), exponent));
    return out;
}

// Deterministic smooth background sampled in world coordinates, so a camera
// translation reads the same texture at an offset.
float background_value(const SceneSpec& spec, int channel, double wx, double wy) {
    const double s = static_cast<double>(spec.seed % 977 + 13);
    const double a = std::sin(0.031 * wx + 0.017 * wy + 0.9 * channel + 0.01 * s);
    const double b = std::sin(0.011 * wx - 0.023 * wy + 1.7 * channel + 0.02 * s);
    const double c = std::sin(0.053 * wx + 0.041 * wy + 2.3 * channel + 0.03 * s);
    return static_cast<float>(0.5 + 0.1 * a + 0.08 * b + 0.05 * c);
}

struct MarkerWorld {
    int left = 0; // world coordinates at frame 0
    int top = 0;
    std::uint32_t code = 0; // 16 bits for the 4x4 interior pattern
};

std::vector<MarkerWorld> place_markers(const SceneSpec& spec) {
    if (spec.marker_size % 6 != 0)
        throw ConfigError("scene: marker_size must be divisible by 6");
    if (spec.width < spec.marker_size || spec.height < spec.marker_size)
        throw ConfigError("scene: frame smaller than a marker");
    Rng rng(spec.seed);
    std::vector<MarkerWorld> markers;
    for (int m = 0; m < spec.marker_count; ++m) {
        MarkerWorld w;
        // A marker at world (left, top) appears at frame position
        // left - vx*t, so positive camera velocity drags it toward the low
        // edge. Place it where it stays fully in view for travel_frames.
        const int x_lo = std::max(0, spec.vx * spec.travel_frames) + 2;
        const int x_hi =
            spec.width - spec.marker_size - std::max(0, -spec.vx * spec.travel_frames) - 2;
        const int y_lo = std::max(0, spec.vy * spec.travel_frames) + 2;
        const int y_hi =
            spec.height - spec.marker_size - std::max(0, -spec.vy * spec.travel_frames) - 2;
        if (x_hi <= x_lo || y_hi <= y_lo)
            throw ConfigError("scene: camera travel leaves no room for markers");
        for (int attempt = 0;; ++attempt) {
            w.left = static_cast<int>(rng.randint(x_lo, x_hi));
            w.top = static_cast<int>(rng.randint(y_lo, y_hi));
            bool overlaps = false;
            for (const MarkerWorld& other : markers)
                if (std::abs(other.left - w.left) < spec.marker_size + 8 &&
                    std::abs(other.top - w.top) < spec.marker_size + 8)
                    overlaps = true;
            if (!overlaps) break;
            if (attempt > 500)
                throw ConfigError("scene: cannot place markers without overlap");
        }
        w.code = static_cast<std::uint32_t>(rng.randint(0, 0xffff));
        markers.push_back(w);
    }
    return markers;
}

} // namespace

Image crf_apply(const Image& signal, double gamma) {
    check_gamma(gamma, "crf_apply");
    check_domain(signal, "crf_apply");
    return pow_image(signal, 1.0 / gamma);
}

Image crf_invert(const Image& observed, double gamma) {
    check_gamma(gamma, "crf_invert");
    check_domain(observed, "crf_invert");
    return pow_image(observed, gamma);
}

PairedSample synthesize_blur(const BlurJobSpec& spec, const std::vector<Image>& frames) {
    if (spec.n < 3 || spec.n > 11 || spec.n % 2 == 0)
        throw ContractError("synthesize_blur: N must be odd and in [3, 11], got " +
                            std::to_string(spec.n));
    check_gamma(spec.gamma, "synthesize_blur");
    if (static_cast<int>(frames.size()) != spec.n)
        throw ContractError("synthesize_blur: expected " + std::to_string(spec.n) +
                            " frames, got " + std::to_string(frames.size()));
    const Image& first = frames.front();
    for (const Image& f : frames) {
        if (f.channels != first.channels || f.height != first.height ||
            f.width != first.width)
            throw ContractError("synthesize_blur: frames differ in shape");
        check_domain(f, "synthesize_blur");
    }

    std::vector<double> acc(first.data.size(), 0.0);
    for (const Image& f : frames)
        for (std::size_t i = 0; i < acc.size(); ++i)
            acc[i] += std::pow(static_cast<double>(f.data[i]), spec.gamma);

    PairedSample out;
    out.blurred = make_image(first.channels, first.height, first.width);
    const double inv_n = 1.0 / spec.n;
    const double inv_gamma = 1.0 / spec.gamma;
    for (std::size_t i = 0; i < acc.size(); ++i)
        out.blurred.data[i] = static_cast<float>(std::pow(acc[i] * inv_n, inv_gamma));
    out.sharp = frames[static_cast<std::size_t>(spec.n / 2)];
    out.provenance = spec;
    return out;
}

Image render_scene_frame(const SceneSpec& spec, int frame_index) {
    const std::vector<MarkerWorld> markers = place_markers(spec);
    const int cam_x = spec.vx * frame_index;
    const int cam_y = spec.vy * frame_index;
    Image img = make_image(3, spec.height, spec.width);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < spec.height; ++y)
            for (int x = 0; x < spec.width; ++x)
                img.at(c, y, x) = background_value(spec, c, x + cam_x, y + cam_y);

    const int cell = spec.marker_size / 6;
    for (const MarkerWorld& m : markers) {
        const int left = m.left - cam_x;
        const int top = m.top - cam_y;
        for (int yy = 0; yy < spec.marker_size; ++yy) {
            const int y = top + yy;
            if (y < 0 || y >= spec.height) continue;
            for (int xx = 0; xx < spec.marker_size; ++xx) {
                const int x = left + xx;
                if (x < 0 || x >= spec.width) continue;
                const int cy = yy / cell, cx = xx / cell;
                float v;
                if (cy == 0 || cy == 5 || cx == 0 || cx == 5) {
                    v = 0.05f; // dark border ring
                } else {
                    const int bit = (cy - 1) * 4 + (cx - 1);
                    v = (m.code >> bit) & 1u ? 0.95f : 0.05f;
                }
                for (int c = 0; c < 3; ++c) img.at(c, y, x) = v;
            }
        }
    }
    return img;
}

std::vector<Image> render_scene(const SceneSpec& spec, int frame_count) {
    if (frame_count < 1) throw ConfigError("scene: frame_count must be positive");
    std::vector<Image> frames;
    frames.reserve(static_cast<std::size_t>(frame_count));
    for (int t = 0; t < frame_count; ++t) frames.push_back(render_scene_frame(spec, t));
    return frames;
}

std::vector<MarkerRect> scene_marker_rects(const SceneSpec& spec, int frame_index) {
    const std::vector<MarkerWorld> markers = place_markers(spec);
    std::vector<MarkerRect> rects;
    for (const MarkerWorld& m : markers) {
        MarkerRect r;
        r.left = m.left - spec.vx * frame_index;
        r.top = m.top - spec.vy * frame_index;
        r.size = spec.marker_size;
        if (r.left >= 0 && r.top >= 0 && r.left + r.size <= spec.width &&
            r.top + r.size <= spec.height)
            rects.push_back(r);
    }
    return rects;
}

std::string CorpusManifest::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["pairs"] = nlohmann::json::array();
    for (const PairRecord& p : pairs) {
        nlohmann::json e;
        e["scene"] = p.scene;
        e["split"] = p.split;
        e["index"] = p.index;
        e["blur_path"] = p.blur_path;
        e["sharp_path"] = p.sharp_path;
        e["n"] = p.n;
        e["gamma"] = p.gamma;
        e["frames"] = p.frames;
        e["sharp_frame"] = p.sharp_frame;
        j["pairs"].push_back(e);
    }
    j["skipped"] = nlohmann::json::array();
    for (const SkippedWindow& s : skipped)
        j["skipped"].push_back({{"frame", s.frame}, {"reason", s.reason}});
    return j.dump(2) + "\n";
}

CorpusManifest CorpusManifest::from_json(const std::string& text) {
    CorpusManifest m;
    try {
        const nlohmann::json j = nlohmann::json::parse(text);
        m.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& e : j.at("pairs")) {
            PairRecord p;
            p.scene = e.at("scene").get<std::string>();
            p.split = e.at("split").get<std::string>();
            p.index = e.at("index").get<int>();
            p.blur_path = e.at("blur_path").get<std::string>();
            p.sharp_path = e.at("sharp_path").get<std::string>();
            p.n = e.at("n").get<int>();
            p.gamma = e.at("gamma").get<double>();
            p.frames = e.at("frames").get<std::vector<std::string>>();
            p.sharp_frame = e.at("sharp_frame").get<std::string>();
            m.pairs.push_back(std::move(p));
        }
        for (const auto& e : j.at("skipped"))
            m.skipped.push_back({e.at("frame").get<std::string>(),
                                 e.at("reason").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("manifest: malformed JSON: ") + e.what());
    }
    return m;
}

CorpusManifest generate_dataset(const DatasetConfig& cfg) {
    if (cfg.window_min < 3 || cfg.window_max > 11 || cfg.window_min > cfg.window_max ||
        cfg.window_min % 2 == 0 || cfg.window_max % 2 == 0)
        throw ConfigError("generate_dataset: window range must be odd values in [3, 11]");
    if (cfg.stride < 1) throw ConfigError("generate_dataset: stride must be positive");
    if (cfg.split != "train" && cfg.split != "test")
        throw ConfigError("generate_dataset: split must be train or test");

    std::vector<std::filesystem::path> frames;
    if (!std::filesystem::is_directory(cfg.frames_dir))
        throw IoError("generate_dataset: frames directory '" + cfg.frames_dir.string() +
                      "' does not exist");
    for (const auto& entry : std::filesystem::directory_iterator(cfg.frames_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".png")
            frames.push_back(entry.path());
    std::sort(frames.begin(), frames.end());
    if (static_cast<int>(frames.size()) < cfg.window_max)
        throw ContractError("generate_dataset: " + std::to_string(frames.size()) +
                            " frames is fewer than the largest window (" +
                            std::to_string(cfg.window_max) + ")");

    const std::string scene =
        cfg.scene.empty() ? cfg.frames_dir.filename().string() : cfg.scene;
    const std::filesystem::path scene_dir = cfg.out_root / cfg.split / scene;
    std::filesystem::create_directories(scene_dir / "blur");
    std::filesystem::create_directories(scene_dir / "sharp");

    Rng rng(cfg.seed);
    CorpusManifest manifest;
    manifest.seed = cfg.seed;

    // Merge with an existing manifest so multiple scenes share one corpus.
    const std::filesystem::path manifest_path = cfg.out_root / "manifest.json";
    if (std::filesystem::exists(manifest_path)) {
        std::ifstream in(manifest_path);
        std::string text((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
        manifest = CorpusManifest::from_json(text);
        manifest.seed = cfg.seed;
    }

    int index = 0;
    for (std::size_t start = 0;;) {
        const int odd_steps = (cfg.window_max - cfg.window_min) / 2;
        const int n = cfg.window_min + 2 * static_cast<int>(rng.randint(0, odd_steps));
        if (start + static_cast<std::size_t>(n) > frames.size()) break;

        BlurJobSpec spec;
        spec.n = n;
        spec.gamma = cfg.gamma;
        std::vector<Image> window;
        bool ok = true;
        for (int i = 0; i < n; ++i) {
            const auto& path = frames[start + static_cast<std::size_t>(i)];
            spec.frame_ids.push_back(path.filename().string());
            try {
                window.push_back(read_png(path));
            } catch (const Error& e) {
                manifest.skipped.push_back({path.filename().string(), e.what()});
                ok = false;
                break;
            }
        }
        if (ok) {
            PairedSample sample = synthesize_blur(spec, window);
            char name[32];
            std::snprintf(name, sizeof(name), "%06d.png", index);
            const auto blur_path = scene_dir / "blur" / name;
            const auto sharp_path = scene_dir / "sharp" / name;
            write_png(blur_path, sample.blurred);
            write_png(sharp_path, sample.sharp);

            PairRecord rec;
            rec.scene = scene;
            rec.split = cfg.split;
            rec.index = index;
            rec.blur_path =
                std::filesystem::relative(blur_path, cfg.out_root).generic_string();
            rec.sharp_path =
                std::filesystem::relative(sharp_path, cfg.out_root).generic_string();
            rec.n = n;
            rec.gamma = cfg.gamma;
            rec.frames = spec.frame_ids;
            rec.sharp_frame = spec.frame_ids[static_cast<std::size_t>(n / 2)];
            manifest.pairs.push_back(std::move(rec));
            ++index;
        }
        start += static_cast<std::size_t>(cfg.stride);
    }

    std::ofstream out(manifest_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("generate_dataset: cannot write " + manifest_path.string());
    out << manifest.to_json();
    return manifest;
}

} // namespace dbk
