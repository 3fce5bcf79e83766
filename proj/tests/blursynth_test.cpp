#include "doctest.h"

#include "deblurkit/blursynth.hpp"
#include "deblurkit/errors.hpp"

#include "support.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace dbk;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("deblurkit_blursynth_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

Image random_image(int channels, int height, int width, Rng& rng) {
    Image img = make_image(channels, height, width);
    for (float& v : img.data) v = static_cast<float>(rng.uniform());
    return img;
}

float max_abs_diff(const Image& a, const Image& b) {
    REQUIRE(a.data.size() == b.data.size());
    float worst = 0.0f;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
    return worst;
}

double linear_mean(const Image& img, double gamma) {
    double sum = 0.0;
    for (float v : img.data) sum += std::pow(static_cast<double>(v), gamma);
    return sum / static_cast<double>(img.data.size());
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

// Writes frame_count rendered scene frames as 0-padded PNGs and returns the dir.
std::filesystem::path write_scene_frames(const TempDir& tmp, const SceneSpec& spec,
                                         int frame_count, const std::string& name) {
    const std::filesystem::path dir = tmp.path / name;
    std::filesystem::create_directories(dir);
    for (int t = 0; t < frame_count; ++t) {
        char fname[32];
        std::snprintf(fname, sizeof(fname), "%04d.png", t);
        write_png(dir / fname, render_scene_frame(spec, t));
    }
    return dir;
}

} // namespace

TEST_CASE("camera response curve fixes endpoints and reduces to identity at gamma 1") {
    Image img = make_image(1, 1, 3);
    img.data = {0.0f, 0.5f, 1.0f};

    Image curved = crf_apply(img, 2.2);
    CHECK(curved.data[0] == 0.0f);
    CHECK(curved.data[2] == 1.0f);
    // 0.5^(1/2.2), evaluated independently.
    CHECK(curved.data[1] == doctest::Approx(0.7297400529).epsilon(1e-6));

    Image same = crf_apply(img, 1.0);
    CHECK(max_abs_diff(same, img) == 0.0f);

    Image inv = crf_invert(img, 2.2);
    CHECK(inv.data[0] == 0.0f);
    CHECK(inv.data[2] == 1.0f);
}

TEST_CASE("camera response curve is strictly monotone on (0,1)") {
    Image img = make_image(1, 1, 64);
    for (int i = 0; i < 64; ++i)
        img.data[static_cast<std::size_t>(i)] = static_cast<float>(i + 1) / 66.0f;
    Image curved = crf_apply(img, 2.2);
    for (int i = 1; i < 64; ++i)
        CHECK(curved.data[static_cast<std::size_t>(i)] >
              curved.data[static_cast<std::size_t>(i - 1)]);
}

TEST_CASE("response curve and its inverse round-trip within 1e-6") {
    Rng rng(11);
    Image img = random_image(1, 10, 100, rng);
    Image back = crf_invert(crf_apply(img, 2.2), 2.2);
    CHECK(max_abs_diff(back, img) < 1e-6f);
    // And in the other composition order.
    Image back2 = crf_apply(crf_invert(img, 2.2), 2.2);
    CHECK(max_abs_diff(back2, img) < 1e-6f);

    Image probe = make_image(1, 1, 1, 0.72974f);
    CHECK(crf_invert(probe, 2.2).data[0] == doctest::Approx(0.5).epsilon(1e-5));
}

TEST_CASE("response curve rejects values outside the unit interval") {
    Image low = make_image(1, 1, 2);
    low.data = {0.5f, -0.01f};
    CHECK_THROWS_AS(crf_apply(low, 2.2), ContractError);
    CHECK_THROWS_AS(crf_invert(low, 2.2), ContractError);

    Image high = make_image(1, 1, 2);
    high.data = {1.2f, 0.3f};
    CHECK_THROWS_AS(crf_apply(high, 2.2), ContractError);
    CHECK_THROWS_AS(crf_invert(high, 2.2), ContractError);

    Image nan = make_image(1, 1, 1, std::numeric_limits<float>::quiet_NaN());
    CHECK_THROWS_AS(crf_apply(nan, 2.2), ContractError);

    Image ok = make_image(1, 1, 1, 0.5f);
    CHECK_THROWS_AS(crf_apply(ok, 0.0), ContractError);
    CHECK_THROWS_AS(crf_apply(ok, -2.2), ContractError);
}

TEST_CASE("averaging identical frames reproduces the frame") {
    Rng rng(5);
    Image frame = random_image(3, 12, 16, rng);
    BlurJobSpec spec;
    spec.n = 5;
    PairedSample out = synthesize_blur(spec, std::vector<Image>(5, frame));
    CHECK(max_abs_diff(out.blurred, frame) < 1e-6f);
    CHECK(max_abs_diff(out.sharp, frame) == 0.0f);
}

TEST_CASE("black-gray-black window lands on the fixed accumulation constant") {
    // (0.5^2.2 / 3)^(1/2.2) evaluated independently in 64-bit arithmetic.
    const double expected = 0.3034566833;
    Image black = make_image(3, 8, 8, 0.0f);
    Image gray = make_image(3, 8, 8, 0.5f);
    BlurJobSpec spec;
    spec.n = 3;
    PairedSample out = synthesize_blur(spec, {black, gray, black});
    float lo = 1.0f, hi = 0.0f;
    for (float v : out.blurred.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo == doctest::Approx(expected).epsilon(1e-6));
    CHECK(hi == doctest::Approx(expected).epsilon(1e-6));
    CHECK(hi - lo < 1e-9f); // uniform output for uniform inputs
    CHECK(max_abs_diff(out.sharp, gray) == 0.0f);
}

TEST_CASE("accumulation conserves linear-domain brightness") {
    Rng rng(17);
    BlurJobSpec spec;
    spec.n = 7;
    std::vector<Image> frames;
    double frame_mean_sum = 0.0;
    for (int i = 0; i < spec.n; ++i) {
        frames.push_back(random_image(3, 20, 24, rng));
        frame_mean_sum += linear_mean(frames.back(), spec.gamma);
    }
    PairedSample out = synthesize_blur(spec, frames);
    const double blurred_mean = linear_mean(out.blurred, spec.gamma);
    CHECK(blurred_mean ==
          doctest::Approx(frame_mean_sum / spec.n).epsilon(1e-6));
}

TEST_CASE("accumulation is linear in the sensor signal") {
    // Scaling every frame by a in linear domain scales the blurred result by
    // a in linear domain: conjugating by the response curve exposes it.
    Rng rng(23);
    BlurJobSpec spec;
    spec.n = 5;
    const double a = 0.37;
    std::vector<Image> frames, scaled;
    for (int i = 0; i < spec.n; ++i) {
        frames.push_back(random_image(3, 10, 12, rng));
        Image lin = crf_invert(frames.back(), spec.gamma);
        for (float& v : lin.data) v = static_cast<float>(a * v);
        scaled.push_back(crf_apply(lin, spec.gamma));
    }
    Image base_lin = crf_invert(synthesize_blur(spec, frames).blurred, spec.gamma);
    Image scaled_lin = crf_invert(synthesize_blur(spec, scaled).blurred, spec.gamma);
    float worst = 0.0f;
    for (std::size_t i = 0; i < base_lin.data.size(); ++i)
        worst = std::max(worst, std::abs(scaled_lin.data[i] -
                                         static_cast<float>(a) * base_lin.data[i]));
    CHECK(worst < 1e-5f);
}

TEST_CASE("only the middle slot matters beyond the symmetric average") {
    Rng rng(31);
    BlurJobSpec spec;
    spec.n = 5;
    std::vector<Image> frames;
    for (int i = 0; i < spec.n; ++i) frames.push_back(random_image(3, 9, 11, rng));

    PairedSample base = synthesize_blur(spec, frames);

    SUBCASE("reversing the window keeps blurred and the middle-frame sharp") {
        std::vector<Image> rev(frames.rbegin(), frames.rend());
        PairedSample out = synthesize_blur(spec, rev);
        CHECK(max_abs_diff(out.blurred, base.blurred) < 1e-6f);
        CHECK(max_abs_diff(out.sharp, base.sharp) == 0.0f);
    }
    SUBCASE("swapping the middle frame changes sharp, not blurred") {
        std::vector<Image> swapped = frames;
        std::swap(swapped[0], swapped[2]);
        PairedSample out = synthesize_blur(spec, swapped);
        CHECK(max_abs_diff(out.blurred, base.blurred) < 1e-6f);
        CHECK(max_abs_diff(out.sharp, frames[0]) == 0.0f);
    }
    SUBCASE("sharp is the middle frame by value") {
        std::vector<Image> fills;
        for (float f : {0.1f, 0.2f, 0.3f, 0.4f, 0.5f})
            fills.push_back(make_image(1, 2, 2, f));
        BlurJobSpec s5;
        s5.n = 5;
        PairedSample out = synthesize_blur(s5, fills);
        for (float v : out.sharp.data) CHECK(v == 0.3f);
    }
}

TEST_CASE("accumulation window validation") {
    Image f = make_image(3, 4, 4, 0.5f);
    BlurJobSpec spec;

    spec.n = 4; // even
    CHECK_THROWS_AS(synthesize_blur(spec, std::vector<Image>(4, f)), ContractError);
    spec.n = 1; // below range
    CHECK_THROWS_AS(synthesize_blur(spec, std::vector<Image>(1, f)), ContractError);
    spec.n = 13; // above range
    CHECK_THROWS_AS(synthesize_blur(spec, std::vector<Image>(13, f)), ContractError);

    spec.n = 3;
    CHECK_THROWS_AS(synthesize_blur(spec, std::vector<Image>(2, f)), ContractError);

    std::vector<Image> mixed = {f, make_image(3, 4, 5, 0.5f), f};
    CHECK_THROWS_AS(synthesize_blur(spec, mixed), ContractError);

    std::vector<Image> hot = {f, make_image(3, 4, 4, 1.5f), f};
    CHECK_THROWS_AS(synthesize_blur(spec, hot), ContractError);
}

TEST_CASE("procedural scene renders deterministic marker frames") {
    SceneSpec spec;
    spec.width = 160;
    spec.height = 128;
    spec.marker_count = 3;
    spec.marker_size = 24;
    spec.vx = 2;
    spec.vy = 1;
    spec.seed = 42;

    Image a = render_scene_frame(spec, 4);
    Image b = render_scene_frame(spec, 4);
    CHECK(max_abs_diff(a, b) == 0.0f);
    CHECK(a.channels == 3);
    CHECK(a.height == spec.height);
    CHECK(a.width == spec.width);

    float lo = 1.0f, hi = 0.0f;
    for (float v : a.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    // Marker border ring is near-black; code cells include near-white.
    CHECK(lo <= 0.06f);
    CHECK(hi >= 0.9f);

    Image other_seed = render_scene_frame(SceneSpec{spec.width, spec.height, 3, 24, 2,
                                                    1, spec.travel_frames, 43},
                                          4);
    CHECK(max_abs_diff(a, other_seed) > 0.01f);
}

TEST_CASE("markers translate against the scripted camera motion") {
    SceneSpec spec;
    spec.width = 200;
    spec.height = 160;
    spec.marker_count = 2;
    spec.marker_size = 30;
    spec.vx = 3;
    spec.vy = 1;
    spec.travel_frames = 10;
    spec.seed = 7;

    auto r0 = scene_marker_rects(spec, 0);
    REQUIRE(r0.size() == 2);
    for (int t = 1; t <= spec.travel_frames; ++t) {
        auto rt = scene_marker_rects(spec, t);
        REQUIRE(rt.size() == 2);
        for (std::size_t m = 0; m < rt.size(); ++m) {
            CHECK(rt[m].left == r0[m].left - spec.vx * t);
            CHECK(rt[m].top == r0[m].top - spec.vy * t);
            CHECK(rt[m].size == spec.marker_size);
            CHECK(rt[m].left >= 0);
            CHECK(rt[m].top >= 0);
            CHECK(rt[m].left + rt[m].size <= spec.width);
            CHECK(rt[m].top + rt[m].size <= spec.height);
        }
    }

    // The marker interior actually sits where the rect says: its border ring
    // is near-black in the rendered frame.
    Image frame = render_scene_frame(spec, 5);
    for (const MarkerRect& r : scene_marker_rects(spec, 5))
        CHECK(frame.at(0, r.top, r.left) <= 0.06f);
}

TEST_CASE("scene frames feed the accumulation model with visible motion blur") {
    SceneSpec spec;
    spec.width = 128;
    spec.height = 96;
    spec.marker_count = 2;
    spec.marker_size = 18;
    spec.vx = 4;
    spec.vy = 0;
    spec.travel_frames = 8;
    spec.seed = 3;

    std::vector<Image> frames = render_scene(spec, 5);
    BlurJobSpec job;
    job.n = 5;
    PairedSample pair = synthesize_blur(job, frames);
    // Moving high-contrast markers must smear: the blurred image departs
    // clearly from the sharp middle frame.
    CHECK(max_abs_diff(pair.blurred, pair.sharp) > 0.1f);
}

TEST_CASE("dataset generation slides windows and writes the corpus layout") {
    TempDir tmp;
    SceneSpec scene;
    scene.width = 96;
    scene.height = 64;
    scene.marker_count = 1;
    scene.marker_size = 12;
    scene.vx = 1;
    scene.vy = 0;
    scene.travel_frames = 33;
    scene.seed = 9;
    const auto frames_dir = write_scene_frames(tmp, scene, 33, "desk");

    DatasetConfig cfg;
    cfg.frames_dir = frames_dir;
    cfg.out_root = tmp.path / "corpus";
    cfg.split = "train";
    cfg.window_min = 11;
    cfg.window_max = 11;
    cfg.stride = 11;
    cfg.seed = 1;

    CorpusManifest manifest = generate_dataset(cfg);
    // 33 frames, stride 11, fixed window 11: starts 0, 11, 22.
    REQUIRE(manifest.pairs.size() == 3);
    CHECK(manifest.skipped.empty());

    for (const PairRecord& p : manifest.pairs) {
        CHECK(p.scene == "desk");
        CHECK(p.split == "train");
        CHECK(p.n == 11);
        CHECK(p.frames.size() == 11);
        CHECK(p.sharp_frame == p.frames[5]);
        CHECK(std::filesystem::exists(cfg.out_root / p.blur_path));
        CHECK(std::filesystem::exists(cfg.out_root / p.sharp_path));
    }
    CHECK(manifest.pairs[0].blur_path == "train/desk/blur/000000.png");
    CHECK(manifest.pairs[0].sharp_path == "train/desk/sharp/000000.png");
    CHECK(manifest.pairs[2].frames.front() == "0022.png");
    CHECK(std::filesystem::exists(cfg.out_root / "manifest.json"));

    // The manifest on disk round-trips through the parser.
    CorpusManifest loaded = CorpusManifest::from_json(slurp(cfg.out_root / "manifest.json"));
    CHECK(loaded.pairs.size() == 3);
    CHECK(loaded.seed == 1);
    CHECK(loaded.pairs[1].frames == manifest.pairs[1].frames);
}

TEST_CASE("dataset generation is byte-deterministic for a fixed seed") {
    TempDir tmp;
    SceneSpec scene;
    scene.width = 80;
    scene.height = 64;
    scene.marker_count = 1;
    scene.marker_size = 12;
    scene.vx = 1;
    scene.vy = 1;
    scene.travel_frames = 15;
    scene.seed = 2;
    const auto frames_dir = write_scene_frames(tmp, scene, 15, "scene_a");

    DatasetConfig cfg;
    cfg.frames_dir = frames_dir;
    cfg.split = "test";
    cfg.window_min = 3;
    cfg.window_max = 7;
    cfg.stride = 4;
    cfg.seed = 77;

    cfg.out_root = tmp.path / "run1";
    generate_dataset(cfg);
    cfg.out_root = tmp.path / "run2";
    generate_dataset(cfg);

    CHECK(slurp(tmp.path / "run1" / "manifest.json") ==
          slurp(tmp.path / "run2" / "manifest.json"));

    // Window lengths vary across the sweep when the range allows it.
    CorpusManifest m = CorpusManifest::from_json(slurp(tmp.path / "run1" / "manifest.json"));
    REQUIRE(m.pairs.size() >= 2);
    for (const PairRecord& p : m.pairs) {
        CHECK(p.n >= 3);
        CHECK(p.n <= 7);
        CHECK(p.n % 2 == 1);
    }
}

TEST_CASE("static scenes produce blur equal to sharp") {
    TempDir tmp;
    SceneSpec scene;
    scene.width = 80;
    scene.height = 64;
    scene.marker_count = 2;
    scene.marker_size = 12;
    scene.vx = 0;
    scene.vy = 0;
    scene.seed = 4;
    const auto frames_dir = write_scene_frames(tmp, scene, 11, "still");

    DatasetConfig cfg;
    cfg.frames_dir = frames_dir;
    cfg.out_root = tmp.path / "corpus";
    cfg.window_min = 11;
    cfg.window_max = 11;
    cfg.stride = 11;
    cfg.seed = 5;

    CorpusManifest manifest = generate_dataset(cfg);
    REQUIRE(manifest.pairs.size() == 1);
    Image blur = read_png(cfg.out_root / manifest.pairs[0].blur_path);
    Image sharp = read_png(cfg.out_root / manifest.pairs[0].sharp_path);
    // Identical frames average to themselves; after the shared 8-bit
    // quantization the stored pair may differ only where a value lands
    // within a float ulp of a rounding boundary.
    CHECK(max_abs_diff(blur, sharp) <= 1.0f / 255.0f + 1e-6f);
    std::size_t mismatched = 0;
    for (std::size_t i = 0; i < blur.data.size(); ++i)
        if (blur.data[i] != sharp.data[i]) ++mismatched;
    CHECK(static_cast<double>(mismatched) <=
          1e-3 * static_cast<double>(blur.data.size()));
}

TEST_CASE("dataset generation validates its inputs") {
    TempDir tmp;
    SceneSpec scene;
    scene.width = 80;
    scene.height = 64;
    scene.marker_count = 1;
    scene.marker_size = 12;
    scene.vx = 0;
    scene.vy = 0;
    scene.seed = 6;
    const auto frames_dir = write_scene_frames(tmp, scene, 5, "short");

    DatasetConfig cfg;
    cfg.frames_dir = frames_dir;
    cfg.out_root = tmp.path / "corpus";

    SUBCASE("fewer frames than the largest window") {
        cfg.window_min = 7;
        cfg.window_max = 7;
        CHECK_THROWS_AS(generate_dataset(cfg), ContractError);
    }
    SUBCASE("even or out-of-range window bounds") {
        cfg.window_min = 4;
        cfg.window_max = 4;
        CHECK_THROWS_AS(generate_dataset(cfg), ConfigError);
        cfg.window_min = 3;
        cfg.window_max = 13;
        CHECK_THROWS_AS(generate_dataset(cfg), ConfigError);
    }
    SUBCASE("bad stride and split") {
        cfg.stride = 0;
        CHECK_THROWS_AS(generate_dataset(cfg), ConfigError);
        cfg.stride = 1;
        cfg.split = "validation";
        CHECK_THROWS_AS(generate_dataset(cfg), ConfigError);
    }
    SUBCASE("missing frames directory") {
        cfg.frames_dir = tmp.path / "nowhere";
        CHECK_THROWS_AS(generate_dataset(cfg), IoError);
    }
}

TEST_CASE("unreadable frames skip their window and are recorded") {
    TempDir tmp;
    SceneSpec scene;
    scene.width = 80;
    scene.height = 64;
    scene.marker_count = 1;
    scene.marker_size = 12;
    scene.vx = 1;
    scene.vy = 0;
    scene.travel_frames = 13;
    scene.seed = 8;
    const auto frames_dir = write_scene_frames(tmp, scene, 12, "broken");
    {
        // Lexicographically this lands between 0005.png and 0006.png, so the
        // second window of three hits it.
        std::ofstream bad(frames_dir / "0005a.png", std::ios::binary);
        bad << "this is not a png";
    }

    DatasetConfig cfg;
    cfg.frames_dir = frames_dir;
    cfg.out_root = tmp.path / "corpus";
    cfg.window_min = 3;
    cfg.window_max = 3;
    cfg.stride = 3;
    cfg.seed = 9;

    CorpusManifest manifest = generate_dataset(cfg);
    REQUIRE(manifest.skipped.size() == 1);
    CHECK(manifest.skipped[0].frame == "0005a.png");
    CHECK_FALSE(manifest.skipped[0].reason.empty());
    // 13 files, stride 3: windows at 0,3,6,9; the one at 3 covers the bad file.
    CHECK(manifest.pairs.size() == 3);
    for (const PairRecord& p : manifest.pairs)
        CHECK(std::filesystem::exists(cfg.out_root / p.blur_path));
}

TEST_CASE("corpus manifests from different scenes merge into one file") {
    TempDir tmp;
    SceneSpec scene;
    scene.width = 80;
    scene.height = 64;
    scene.marker_count = 1;
    scene.marker_size = 12;
    scene.vx = 0;
    scene.vy = 0;
    scene.seed = 10;
    const auto dir_a = write_scene_frames(tmp, scene, 11, "scene_a");
    scene.seed = 11;
    const auto dir_b = write_scene_frames(tmp, scene, 11, "scene_b");

    DatasetConfig cfg;
    cfg.out_root = tmp.path / "corpus";
    cfg.window_min = 11;
    cfg.window_max = 11;
    cfg.stride = 11;

    cfg.frames_dir = dir_a;
    cfg.split = "train";
    generate_dataset(cfg);
    cfg.frames_dir = dir_b;
    cfg.split = "test";
    CorpusManifest merged = generate_dataset(cfg);

    REQUIRE(merged.pairs.size() == 2);
    CHECK(merged.pairs[0].scene == "scene_a");
    CHECK(merged.pairs[0].split == "train");
    CHECK(merged.pairs[1].scene == "scene_b");
    CHECK(merged.pairs[1].split == "test");
    CHECK(std::filesystem::exists(cfg.out_root / "test" / "scene_b" / "blur" /
                                  "000000.png"));
}

TEST_CASE("manifest parser rejects malformed JSON") {
    CHECK_THROWS_AS(CorpusManifest::from_json("{not json"), IoError);
    CHECK_THROWS_AS(CorpusManifest::from_json("{\"seed\": 1}"), IoError);
}
