#pragma once

#include "deblurkit/generator.hpp"
#include "deblurkit/image.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dbk {

// ---------------------------------------------------------------------------
// Fidelity metrics
// ---------------------------------------------------------------------------

struct PsnrResult {
    double db = 0.0;
    bool exact = false; ///< set only when the inputs matched bit for bit
};

/// Peak signal-to-noise ratio between two same-shaped [0,1] images,
/// 10*log10(1/MSE) with MSE accumulated in double over all channels.
/// Values are capped at 100 dB so aggregates stay finite; the `exact` flag
/// distinguishes a true zero-MSE match from a merely very close pair.
PsnrResult psnr(const Image& a, const Image& b);

/// Mean structural similarity over every valid 11x11 window: Gaussian
/// weights (sigma 1.5), stabilizers k1=0.01 / k2=0.03 at dynamic range 1.
/// Three-channel images are reduced to luma (0.299 R + 0.587 G + 0.114 B)
/// first; images smaller than the window are rejected.
double ssim(const Image& a, const Image& b);

// ---------------------------------------------------------------------------
// Compute accounting
// ---------------------------------------------------------------------------

struct FlopsRow {
    std::string section;
    std::int64_t macs = 0;
    std::int64_t flops = 0; ///< 2 * macs
};

struct FlopsReport {
    int height = 0; ///< requested input size
    int width = 0;
    int padded_height = 0; ///< size actually convolved after padding to stride 32
    int padded_width = 0;
    std::string convention; ///< how FLOPs relate to MACs and what is excluded
    std::vector<FlopsRow> rows;
    std::int64_t total_macs = 0;
    std::int64_t total_flops = 0;

    double gflops() const { return static_cast<double>(total_flops) / 1e9; }
    std::string to_json() const;
};

/// Analytic per-section convolution cost of one generator forward at h x w.
/// The total equals the sum of the rows exactly; the counting convention is
/// spelled out inside the report.
FlopsReport count_flops(const Generator& gen, int h, int w);

/// MACs of one cheap module at h x w: a pointwise convolution produces half
/// the output channels, a depthwise `kernel` convolution the other half.
std::int64_t cheap_module_macs(int in_c, int out_c, int kernel, int h, int w);

/// MACs of the standard convolution producing the same out_c x h x w output.
std::int64_t standard_conv_macs(int in_c, int out_c, int kernel, int h, int w);

struct CheapPathComparison {
    std::int64_t cheap_macs = 0;    ///< the decoder path as built
    std::int64_t standard_macs = 0; ///< same widths rebuilt with standard convs
    double ratio = 0.0;             ///< cheap_macs / standard_macs
};

/// Totals every cheap-module application in one generator forward at h x w
/// against a standard-convolution rebuild at equal channel widths and sizes.
CheapPathComparison compare_cheap_path(const Generator& gen, int h, int w);

/// Bytes of the generator serialized as a standalone checkpoint.
std::int64_t checkpoint_byte_size(Generator& gen);

// ---------------------------------------------------------------------------
// Marker detection
// ---------------------------------------------------------------------------

struct Detection {
    int id = 0;
    std::array<std::array<double, 2>, 4> corners{};
};

struct DetectionRecord {
    std::string image_path;
    std::vector<Detection> markers;
    bool error = false; ///< the detector failed on this image; counted as zero
    std::string error_message;
};

/// Out-of-process marker detector. `command` must name an executable that is
/// invoked as `command <request.jsonl> <response.jsonl>`, reads one request
/// per line of the form {"image_path": str, "detector": str}, and writes one
/// response line per image of the form {"image_path": str, "markers":
/// [{"id": int, "corners": [[x, y] x4]}]}. A nonzero exit or an unusable
/// response line flags the affected images as errored; no image is dropped.
class DetectorAdapter {
public:
    DetectorAdapter(std::string command, std::string detector_name);

    std::vector<DetectionRecord>
    detect(const std::vector<std::filesystem::path>& images) const;

    const std::string& command() const { return command_; }
    const std::string& detector_name() const { return detector_name_; }

private:
    std::string command_;
    std::string detector_name_;
};

/// The percentage detected/reference * 100, rounded to two decimals (the
/// usual reporting convention for detection rates).
double rate_percent(std::int64_t detected, std::int64_t reference);

struct SetCounts {
    std::int64_t detected = 0;      ///< markers found in non-errored images
    std::int64_t errored_images = 0;
    double rate = 0.0;              ///< detected / detected(reference set)
};

struct DetectionSection {
    std::string detector;
    std::string reference_set;
    std::map<std::string, SetCounts> sets;
    std::map<std::string, std::vector<DetectionRecord>> records;
};

/// Runs the adapter over index-aligned image sets and reports per-set marker
/// totals plus detection rates relative to `reference_set` (the sharp images
/// in the usual protocol). Errored images count zero detections but stay in
/// the per-image records.
DetectionSection marker_detection_rates(
    const std::map<std::string, std::vector<std::filesystem::path>>& sets,
    const std::string& reference_set, const DetectorAdapter& adapter);

// ---------------------------------------------------------------------------
// Latency
// ---------------------------------------------------------------------------

struct LatencyStats {
    int height = 0;
    int width = 0;
    int warmup = 0;
    int repeats = 0;
    double mean_ms = 0.0;
    double p50_ms = 0.0;
    double p95_ms = 0.0;
    std::string device;             ///< descriptor of the measuring machine
    std::vector<double> samples_ms; ///< exactly `repeats` entries
    // Published reference measurement for this architecture family, kept as
    // context next to local numbers. Informational only — never a gate.
    double reference_ms = 37.0;
    std::string reference_device = "NVIDIA Quadro RTX 4000";
};

/// Wall-clock generator forwards at h x w on this machine. Requires at least
/// 3 warmup and 10 timed repeats; percentiles use the nearest-rank rule.
LatencyStats benchmark_inference(const Generator& gen, int h, int w, int warmup,
                                 int repeats);

// ---------------------------------------------------------------------------
// Corpus evaluation report
// ---------------------------------------------------------------------------

struct Aggregate {
    double mean = 0.0;
    double median = 0.0;
};

/// Mean and median of a non-empty sample.
Aggregate aggregate(const std::vector<double>& values);

struct ImageMetrics {
    std::string image; ///< the evaluated image, relative to its root
    double psnr_db = 0.0;
    bool psnr_exact = false;
    double ssim = 0.0;
};

struct MetricsSection {
    std::string set_name; ///< which rendition was compared against sharp
    std::vector<ImageMetrics> rows;
    Aggregate psnr;
    Aggregate ssim;
};

struct EvalReport {
    std::string corpus_id;
    std::string checkpoint; ///< provenance note for the weights used
    int pair_count = 0;
    std::vector<MetricsSection> metrics;
    FlopsReport flops;
    double model_mb = 0.0;
    bool has_latency = false;
    LatencyStats latency;
    bool has_detection = false;
    DetectionSection detection;

    std::string to_json() const;
    static EvalReport from_json(const std::string& text);
};

struct EvalOptions {
    std::string split = "test";
    bool run_detector = true;
    std::string detector_command; ///< required when run_detector is set
    std::string detector_name = "stub";
    bool measure_latency = false;
    int latency_warmup = 3;
    int latency_repeats = 10;
    int flops_height = 720; ///< resolution the compute figures are quoted at
    int flops_width = 1280;
    int max_pairs = 0; ///< 0 = evaluate every pair in the split
    std::string checkpoint_note;
};

/// Evaluates a generator over one corpus split: writes deblurred PNGs under
/// `<work_dir>/deblurred/`, scores blurred and deblurred renditions against
/// the sharp references, and (optionally) runs the marker-detection protocol
/// over the sharp / blurred / deblurred sets and times inference.
EvalReport evaluate_corpus(Generator& gen, const std::filesystem::path& corpus_root,
                           const std::filesystem::path& work_dir,
                           const EvalOptions& opts);

} // namespace dbk
