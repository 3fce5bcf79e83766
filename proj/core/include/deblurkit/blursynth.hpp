#pragma once

#include "deblurkit/image.hpp"
#include "deblurkit/rng.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace dbk {

/// One accumulation window: which source frames average into a blurred
/// exposure and the gamma of the camera response curve.
struct BlurJobSpec {
    int n = 0;
    double gamma = 2.2;
    std::vector<std::string> frame_ids;
};

struct PairedSample {
    Image blurred;
    Image sharp;
    BlurJobSpec provenance;
};

/// Camera response curve g(x) = x^(1/gamma), elementwise on [0, 1].
/// Out-of-range values are a contract violation; clamping is always the
/// caller's explicit decision.
Image crf_apply(const Image& signal, double gamma);

/// Inverse response g^-1(I) = I^gamma, elementwise on [0, 1].
Image crf_invert(const Image& observed, double gamma);

/// Averages the linearized frames and re-applies the response curve:
///   blurred = g( (1/N) * sum_i g^-1(I_i) ),   sharp = the middle frame.
/// All accumulation runs in 64-bit floats. N must be odd and in [3, 11].
PairedSample synthesize_blur(const BlurJobSpec& spec, const std::vector<Image>& frames);

/// Procedural desk-scale test scene: high-contrast square fiducial markers
/// over a smooth textured background, with a scripted camera translation of
/// (vx, vy) pixels per frame. Integer velocities keep each frame sharp.
struct SceneSpec {
    int width = 320;
    int height = 256;
    int marker_count = 4;
    int marker_size = 48;   // pixels, divisible by 6 (border ring + 4x4 code)
    int vx = 3;
    int vy = 1;
    int travel_frames = 16; // markers stay fully in view for this many frames
    std::uint64_t seed = 0;
};

/// Axis-aligned marker placement in frame coordinates at a given frame index.
struct MarkerRect {
    int left = 0;
    int top = 0;
    int size = 0;
};

Image render_scene_frame(const SceneSpec& spec, int frame_index);
std::vector<Image> render_scene(const SceneSpec& spec, int frame_count);
/// Ground-truth marker rectangles visible in the given frame (fully inside).
std::vector<MarkerRect> scene_marker_rects(const SceneSpec& spec, int frame_index);

/// Dataset generation over a directory of ordered sharp frames.
struct DatasetConfig {
    std::filesystem::path frames_dir;
    std::filesystem::path out_root;
    std::string split = "train";  // train or test
    std::string scene;            // defaults to frames_dir filename
    int window_min = 3;
    int window_max = 11;
    int stride = 5;
    double gamma = 2.2;
    std::uint64_t seed = 0;
};

struct SkippedWindow {
    std::string frame;
    std::string reason;
};

struct PairRecord {
    std::string scene;
    std::string split;
    int index = 0;
    std::string blur_path;
    std::string sharp_path;
    int n = 0;
    double gamma = 2.2;
    std::vector<std::string> frames;
    std::string sharp_frame;
};

struct CorpusManifest {
    std::uint64_t seed = 0;
    std::vector<PairRecord> pairs;
    std::vector<SkippedWindow> skipped;

    std::string to_json() const;
    static CorpusManifest from_json(const std::string& text);
};

/// Slides windows of random odd length over the ordered frames, writes
/// blur/sharp PNG pairs in the `<root>/<split>/<scene>/{blur,sharp}/` layout
/// and merges the records into `<root>/manifest.json`. Deterministic for a
/// given seed. Unreadable frames skip their window with a recorded reason.
CorpusManifest generate_dataset(const DatasetConfig& cfg);

} // namespace dbk
