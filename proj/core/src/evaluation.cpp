#include "deblurkit/evaluation.hpp"

#include "deblurkit/errors.hpp"
#include "deblurkit/rng.hpp"
#include "deblurkit/tensor.hpp"
#include "deblurkit/training.hpp"

#include "json.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace dbk {

namespace {

std::string shape_str(const Image& img) {
    return std::to_string(img.channels) + "x" + std::to_string(img.height) + "x" +
           std::to_string(img.width);
}

void check_same_shape(const Image& a, const Image& b, const char* op) {
    if (a.channels != b.channels || a.height != b.height || a.width != b.width)
        throw ContractError(std::string(op) + ": shape mismatch, " + shape_str(a) + " vs " +
                            shape_str(b));
}

void check_domain(const Image& img, const char* op) {
    for (float v : img.data)
        if (!(v >= 0.0f && v <= 1.0f))
            throw ContractError(std::string(op) + ": values outside [0,1]");
}

// Single-channel pass-through, or Rec. 601 luma for color inputs.
std::vector<double> luma_plane(const Image& img, const char* op) {
    const std::size_t hw = static_cast<std::size_t>(img.height) * img.width;
    std::vector<double> out(hw);
    if (img.channels == 1) {
        for (std::size_t i = 0; i < hw; ++i) out[i] = static_cast<double>(img.data[i]);
    } else if (img.channels == 3) {
        const float* r = img.data.data();
        const float* g = r + hw;
        const float* b = g + hw;
        for (std::size_t i = 0; i < hw; ++i)
            out[i] = 0.299 * static_cast<double>(r[i]) + 0.587 * static_cast<double>(g[i]) +
                     0.114 * static_cast<double>(b[i]);
    } else {
        throw ContractError(std::string(op) + ": expects 1- or 3-channel images, got " +
                            std::to_string(img.channels));
    }
    return out;
}

constexpr int kSsimWindow = 11;

std::array<double, kSsimWindow> ssim_kernel() {
    std::array<double, kSsimWindow> k{};
    const double sigma = 1.5;
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - kSsimWindow / 2;
        k[static_cast<std::size_t>(i)] = std::exp(-(d * d) / (2.0 * sigma * sigma));
        sum += k[static_cast<std::size_t>(i)];
    }
    for (double& v : k) v /= sum;
    return k;
}

// Valid-region separable Gaussian: (h, w) -> (h - 10, w - 10).
std::vector<double> valid_gauss(const std::vector<double>& plane, int h, int w,
                                const std::array<double, kSsimWindow>& k) {
    const int vw = w - kSsimWindow + 1;
    const int vh = h - kSsimWindow + 1;
    std::vector<double> rows(static_cast<std::size_t>(h) * vw);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < vw; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kSsimWindow; ++i)
                acc += k[static_cast<std::size_t>(i)] *
                       plane[static_cast<std::size_t>(y) * w + x + i];
            rows[static_cast<std::size_t>(y) * vw + x] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(vh) * vw);
    for (int y = 0; y < vh; ++y)
        for (int x = 0; x < vw; ++x) {
            double acc = 0.0;
            for (int j = 0; j < kSsimWindow; ++j)
                acc += k[static_cast<std::size_t>(j)] *
                       rows[static_cast<std::size_t>(y + j) * vw + x];
            out[static_cast<std::size_t>(y) * vw + x] = acc;
        }
    return out;
}

std::string six_digits(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06d", index);
    return buf;
}

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'')
            out += "'\\''";
        else
            out += c;
    }
    out += "'";
    return out;
}

std::filesystem::path fresh_temp_dir() {
    const std::filesystem::path base = std::filesystem::temp_directory_path();
    std::random_device rd;
    for (int attempt = 0; attempt < 16; ++attempt) {
        const std::filesystem::path dir =
            base / ("dbk-detect-" + std::to_string(rd()) + "-" + std::to_string(rd()));
        std::error_code ec;
        if (std::filesystem::create_directory(dir, ec)) return dir;
    }
    throw IoError("could not create a scratch directory under " + base.string());
}

const char* kWireContract =
    "the detector must be an executable invoked as `cmd <request.jsonl> <response.jsonl>`; "
    "each request line is {\"image_path\": str, \"detector\": str} and each response line "
    "must be {\"image_path\": str, \"markers\": [{\"id\": int, \"corners\": [[x, y] x4]}]}";

std::string cpu_descriptor() {
    std::string model = "unknown CPU";
    std::ifstream in("/proc/cpuinfo");
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("model name", 0) == 0) {
            const std::size_t colon = line.find(':');
            if (colon != std::string::npos) {
                std::size_t begin = line.find_first_not_of(" \t", colon + 1);
                if (begin != std::string::npos) model = line.substr(begin);
            }
            break;
        }
    }
    return model + ", " + std::to_string(std::thread::hardware_concurrency()) +
           " hardware threads (CPU build)";
}

double nearest_rank(const std::vector<double>& sorted, double q) {
    const auto n = static_cast<double>(sorted.size());
    auto idx = static_cast<std::size_t>(std::ceil(q * n));
    if (idx > 0) --idx;
    if (idx >= sorted.size()) idx = sorted.size() - 1;
    return sorted[idx];
}

nlohmann::json flops_to_json_obj(const FlopsReport& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const FlopsRow& row : r.rows)
        rows.push_back({{"section", row.section}, {"macs", row.macs}, {"flops", row.flops}});
    return nlohmann::json{{"height", r.height},
                          {"width", r.width},
                          {"padded_height", r.padded_height},
                          {"padded_width", r.padded_width},
                          {"convention", r.convention},
                          {"rows", rows},
                          {"total_macs", r.total_macs},
                          {"total_flops", r.total_flops},
                          {"gflops", r.gflops()}};
}

FlopsReport flops_from_json_obj(const nlohmann::json& j) {
    FlopsReport r;
    r.height = j.at("height").get<int>();
    r.width = j.at("width").get<int>();
    r.padded_height = j.at("padded_height").get<int>();
    r.padded_width = j.at("padded_width").get<int>();
    r.convention = j.at("convention").get<std::string>();
    for (const auto& row : j.at("rows"))
        r.rows.push_back({row.at("section").get<std::string>(),
                          row.at("macs").get<std::int64_t>(),
                          row.at("flops").get<std::int64_t>()});
    r.total_macs = j.at("total_macs").get<std::int64_t>();
    r.total_flops = j.at("total_flops").get<std::int64_t>();
    return r;
}

nlohmann::json detection_to_json_obj(const DetectionSection& d) {
    nlohmann::json sets = nlohmann::json::object();
    for (const auto& [name, c] : d.sets)
        sets[name] = {{"detected", c.detected},
                      {"errored_images", c.errored_images},
                      {"rate", c.rate}};
    nlohmann::json records = nlohmann::json::object();
    for (const auto& [name, recs] : d.records) {
        nlohmann::json arr = nlohmann::json::array();
        for (const DetectionRecord& r : recs) {
            nlohmann::json markers = nlohmann::json::array();
            for (const Detection& m : r.markers) {
                nlohmann::json corners = nlohmann::json::array();
                for (const auto& c : m.corners) corners.push_back({c[0], c[1]});
                markers.push_back({{"id", m.id}, {"corners", corners}});
            }
            arr.push_back({{"image_path", r.image_path},
                           {"markers", markers},
                           {"error", r.error},
                           {"error_message", r.error_message}});
        }
        records[name] = std::move(arr);
    }
    return nlohmann::json{{"detector", d.detector},
                          {"reference_set", d.reference_set},
                          {"sets", sets},
                          {"records", records}};
}

DetectionSection detection_from_json_obj(const nlohmann::json& j) {
    DetectionSection d;
    d.detector = j.at("detector").get<std::string>();
    d.reference_set = j.at("reference_set").get<std::string>();
    for (const auto& [name, c] : j.at("sets").items())
        d.sets[name] = {c.at("detected").get<std::int64_t>(),
                        c.at("errored_images").get<std::int64_t>(),
                        c.at("rate").get<double>()};
    for (const auto& [name, arr] : j.at("records").items()) {
        std::vector<DetectionRecord> recs;
        for (const auto& rj : arr) {
            DetectionRecord r;
            r.image_path = rj.at("image_path").get<std::string>();
            r.error = rj.at("error").get<bool>();
            r.error_message = rj.at("error_message").get<std::string>();
            for (const auto& mj : rj.at("markers")) {
                Detection m;
                m.id = mj.at("id").get<int>();
                const auto& corners = mj.at("corners");
                for (std::size_t i = 0; i < 4; ++i) {
                    m.corners[i][0] = corners.at(i).at(0).get<double>();
                    m.corners[i][1] = corners.at(i).at(1).get<double>();
                }
                r.markers.push_back(m);
            }
            recs.push_back(std::move(r));
        }
        d.records[name] = std::move(recs);
    }
    return d;
}

nlohmann::json latency_to_json_obj(const LatencyStats& l) {
    return nlohmann::json{{"height", l.height},
                          {"width", l.width},
                          {"warmup", l.warmup},
                          {"repeats", l.repeats},
                          {"mean_ms", l.mean_ms},
                          {"p50_ms", l.p50_ms},
                          {"p95_ms", l.p95_ms},
                          {"device", l.device},
                          {"samples_ms", l.samples_ms},
                          {"reference_ms", l.reference_ms},
                          {"reference_device", l.reference_device}};
}

LatencyStats latency_from_json_obj(const nlohmann::json& j) {
    LatencyStats l;
    l.height = j.at("height").get<int>();
    l.width = j.at("width").get<int>();
    l.warmup = j.at("warmup").get<int>();
    l.repeats = j.at("repeats").get<int>();
    l.mean_ms = j.at("mean_ms").get<double>();
    l.p50_ms = j.at("p50_ms").get<double>();
    l.p95_ms = j.at("p95_ms").get<double>();
    l.device = j.at("device").get<std::string>();
    l.samples_ms = j.at("samples_ms").get<std::vector<double>>();
    l.reference_ms = j.at("reference_ms").get<double>();
    l.reference_device = j.at("reference_device").get<std::string>();
    return l;
}

nlohmann::json metrics_to_json_obj(const MetricsSection& s) {
    nlohmann::json rows = nlohmann::json::array();
    for (const ImageMetrics& r : s.rows)
        rows.push_back({{"image", r.image},
                        {"psnr_db", r.psnr_db},
                        {"psnr_exact", r.psnr_exact},
                        {"ssim", r.ssim}});
    return nlohmann::json{{"set", s.set_name},
                          {"rows", rows},
                          {"psnr", {{"mean", s.psnr.mean}, {"median", s.psnr.median}}},
                          {"ssim", {{"mean", s.ssim.mean}, {"median", s.ssim.median}}}};
}

MetricsSection metrics_from_json_obj(const nlohmann::json& j) {
    MetricsSection s;
    s.set_name = j.at("set").get<std::string>();
    for (const auto& rj : j.at("rows"))
        s.rows.push_back({rj.at("image").get<std::string>(), rj.at("psnr_db").get<double>(),
                          rj.at("psnr_exact").get<bool>(), rj.at("ssim").get<double>()});
    s.psnr = {j.at("psnr").at("mean").get<double>(), j.at("psnr").at("median").get<double>()};
    s.ssim = {j.at("ssim").at("mean").get<double>(), j.at("ssim").at("median").get<double>()};
    return s;
}

} // namespace

PsnrResult psnr(const Image& a, const Image& b) {
    check_same_shape(a, b, "psnr");
    check_domain(a, "psnr");
    check_domain(b, "psnr");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        acc += d * d;
    }
    const double mse = acc / static_cast<double>(a.data.size());
    if (mse == 0.0) return {100.0, true};
    return {std::min(100.0, 10.0 * std::log10(1.0 / mse)), false};
}

double ssim(const Image& a, const Image& b) {
    check_same_shape(a, b, "ssim");
    check_domain(a, "ssim");
    check_domain(b, "ssim");
    if (a.height < kSsimWindow || a.width < kSsimWindow)
        throw ContractError("ssim: image " + shape_str(a) + " is smaller than the " +
                            std::to_string(kSsimWindow) + "x" + std::to_string(kSsimWindow) +
                            " window");

    const std::vector<double> x = luma_plane(a, "ssim");
    const std::vector<double> y = luma_plane(b, "ssim");
    const int h = a.height;
    const int w = a.width;
    const std::size_t hw = x.size();
    std::vector<double> xx(hw), yy(hw), xy(hw);
    for (std::size_t i = 0; i < hw; ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }

    const std::array<double, kSsimWindow> k = ssim_kernel();
    const std::vector<double> mu_x = valid_gauss(x, h, w, k);
    const std::vector<double> mu_y = valid_gauss(y, h, w, k);
    const std::vector<double> e_xx = valid_gauss(xx, h, w, k);
    const std::vector<double> e_yy = valid_gauss(yy, h, w, k);
    const std::vector<double> e_xy = valid_gauss(xy, h, w, k);

    const double c1 = 0.01 * 0.01; // (k1 * L)^2 at dynamic range L = 1
    const double c2 = 0.03 * 0.03;
    double sum = 0.0;
    for (std::size_t i = 0; i < mu_x.size(); ++i) {
        const double var_x = e_xx[i] - mu_x[i] * mu_x[i];
        const double var_y = e_yy[i] - mu_y[i] * mu_y[i];
        const double cov = e_xy[i] - mu_x[i] * mu_y[i];
        // Squares and variances are combined smallest-first so the result is
        // bitwise symmetric in (a, b) even when the compiler fuses a multiply
        // into the following add.
        const double sq_x = mu_x[i] * mu_x[i];
        const double sq_y = mu_y[i] * mu_y[i];
        const double num = (2.0 * (mu_x[i] * mu_y[i]) + c1) * (2.0 * cov + c2);
        const double den = (std::min(sq_x, sq_y) + std::max(sq_x, sq_y) + c1) *
                           (std::min(var_x, var_y) + std::max(var_x, var_y) + c2);
        sum += num / den;
    }
    return sum / static_cast<double>(mu_x.size());
}

FlopsReport count_flops(const Generator& gen, int h, int w) {
    if (h < 1 || w < 1)
        throw ContractError("flop counting needs a concrete positive input size, got " +
                            std::to_string(h) + "x" + std::to_string(w));
    const MacsBreakdown mb = gen.macs(h, w);
    FlopsReport r;
    r.height = h;
    r.width = w;
    r.padded_height = (h + 31) / 32 * 32;
    r.padded_width = (w + 31) / 32 * 32;
    r.convention =
        "1 MAC = 2 FLOPs; convolution multiply-accumulates only (normalization, activation, "
        "resampling and elementwise ops excluded); spatial sizes include the reflection "
        "padding to a multiple of 32. Published figures for this architecture family follow "
        "the MAC-as-FLOP convention, so comparisons against them use the MAC column.";
    auto add = [&r](const char* section, std::int64_t macs) {
        r.rows.push_back({section, macs, 2 * macs});
        r.total_macs += macs;
        r.total_flops += 2 * macs;
    };
    add("backbone", mb.backbone);
    add("bridge", mb.bridge);
    add("laterals", mb.laterals);
    add("top_down", mb.top_down);
    add("heads", mb.heads);
    add("fusion", mb.fusion);
    add("output", mb.output);
    return r;
}

std::string FlopsReport::to_json() const { return flops_to_json_obj(*this).dump(2) + "\n"; }

std::int64_t cheap_module_macs(int in_c, int out_c, int kernel, int h, int w) {
    if (in_c < 1 || h < 1 || w < 1)
        throw ContractError("cheap_module_macs: non-positive dimensions");
    if (out_c < 2 || out_c % 2 != 0)
        throw ContractError("cheap_module_macs: out_c must be even, got " +
                            std::to_string(out_c));
    if (kernel < 1 || kernel % 2 != 1)
        throw ContractError("cheap_module_macs: kernel must be odd, got " +
                            std::to_string(kernel));
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    const std::int64_t half = out_c / 2;
    return hw * half * in_c + hw * half * kernel * kernel;
}

std::int64_t standard_conv_macs(int in_c, int out_c, int kernel, int h, int w) {
    if (in_c < 1 || out_c < 1 || kernel < 1 || h < 1 || w < 1)
        throw ContractError("standard_conv_macs: non-positive dimensions");
    return static_cast<std::int64_t>(h) * w * out_c * in_c * kernel * kernel;
}

CheapPathComparison compare_cheap_path(const Generator& gen, int h, int w) {
    CheapPathComparison cmp;
    for (const CheapApplication& app : gen.cheap_applications(h, w)) {
        cmp.cheap_macs +=
            cheap_module_macs(app.in_channels, app.out_channels, app.kernel, app.h, app.w);
        cmp.standard_macs +=
            standard_conv_macs(app.in_channels, app.out_channels, app.kernel, app.h, app.w);
    }
    cmp.ratio = static_cast<double>(cmp.cheap_macs) / static_cast<double>(cmp.standard_macs);
    return cmp;
}

std::int64_t checkpoint_byte_size(Generator& gen) {
    return static_cast<std::int64_t>(generator_checkpoint_blob(gen).byte_size());
}

DetectorAdapter::DetectorAdapter(std::string command, std::string detector_name)
    : command_(std::move(command)), detector_name_(std::move(detector_name)) {
    if (command_.empty())
        throw DependencyError(std::string("empty detector command; ") + kWireContract);
    if (detector_name_.empty()) throw ContractError("detector name must not be empty");
}

std::vector<DetectionRecord>
DetectorAdapter::detect(const std::vector<std::filesystem::path>& images) const {
    std::vector<DetectionRecord> records;
    records.reserve(images.size());
    for (const std::filesystem::path& p : images) records.push_back({p.string(), {}, false, ""});
    if (records.empty()) return records;

    const std::filesystem::path dir = fresh_temp_dir();
    const std::filesystem::path request = dir / "request.jsonl";
    const std::filesystem::path response = dir / "response.jsonl";
    struct Cleanup {
        std::filesystem::path dir;
        ~Cleanup() {
            std::error_code ec;
            std::filesystem::remove_all(dir, ec);
        }
    } cleanup{dir};

    {
        std::ofstream out(request);
        for (const DetectionRecord& r : records)
            out << nlohmann::json{{"image_path", r.image_path}, {"detector", detector_name_}}
                       .dump()
                << '\n';
        if (!out) throw IoError("could not write detector request " + request.string());
    }

    const std::string cmd =
        command_ + " " + shell_quote(request.string()) + " " + shell_quote(response.string());
    const int status = std::system(cmd.c_str());
    if (status == -1)
        throw DependencyError("could not launch a shell for the detector command");
    const int exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    if (exit_code == 126 || exit_code == 127)
        throw DependencyError("detector command could not be run (`" + command_ + "` exited " +
                              std::to_string(exit_code) + "); " + kWireContract);

    if (exit_code != 0) {
        const std::string reason =
            exit_code == -1 ? "detector terminated abnormally"
                            : "detector exited with status " + std::to_string(exit_code);
        for (DetectionRecord& r : records) {
            r.error = true;
            r.error_message = reason;
        }
        return records;
    }

    std::map<std::string, std::vector<Detection>> parsed;
    std::string first_bad_line;
    std::ifstream in(response);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const nlohmann::json j = nlohmann::json::parse(line);
            const std::string path = j.at("image_path").get<std::string>();
            std::vector<Detection> dets;
            for (const auto& mj : j.at("markers")) {
                Detection m;
                m.id = mj.at("id").get<int>();
                if (m.id < 0) throw IoError("negative marker id");
                const auto& corners = mj.at("corners");
                if (!corners.is_array() || corners.size() != 4)
                    throw IoError("corners must hold 4 points");
                for (std::size_t i = 0; i < 4; ++i) {
                    m.corners[i][0] = corners.at(i).at(0).get<double>();
                    m.corners[i][1] = corners.at(i).at(1).get<double>();
                }
                dets.push_back(m);
            }
            parsed.emplace(path, std::move(dets)); // first line per image wins
        } catch (const std::exception& e) {
            if (first_bad_line.empty())
                first_bad_line =
                    "response line " + std::to_string(lineno) + " unusable: " + e.what();
        }
    }

    for (DetectionRecord& r : records) {
        const auto it = parsed.find(r.image_path);
        if (it != parsed.end()) {
            r.markers = it->second;
        } else {
            r.error = true;
            r.error_message = first_bad_line.empty() ? "no response line from detector"
                                                     : first_bad_line;
        }
    }
    return records;
}

double rate_percent(std::int64_t detected, std::int64_t reference) {
    if (reference <= 0)
        throw ContractError("rate_percent: reference count must be positive, got " +
                            std::to_string(reference));
    if (detected < 0)
        throw ContractError("rate_percent: negative detection count");
    return std::round(10000.0 * static_cast<double>(detected) /
                      static_cast<double>(reference)) /
           100.0;
}

DetectionSection marker_detection_rates(
    const std::map<std::string, std::vector<std::filesystem::path>>& sets,
    const std::string& reference_set, const DetectorAdapter& adapter) {
    const auto ref_it = sets.find(reference_set);
    if (ref_it == sets.end())
        throw ContractError("reference set \"" + reference_set +
                            "\" is missing from the evaluated sets");
    const std::size_t n = ref_it->second.size();
    if (n == 0) throw ContractError("detection sets must not be empty");
    for (const auto& [name, paths] : sets)
        if (paths.size() != n)
            throw ContractError("detection sets must be index-aligned: \"" + name + "\" has " +
                                std::to_string(paths.size()) + " images, \"" + reference_set +
                                "\" has " + std::to_string(n));

    DetectionSection section;
    section.detector = adapter.detector_name();
    section.reference_set = reference_set;
    for (const auto& [name, paths] : sets) {
        std::vector<DetectionRecord> recs = adapter.detect(paths);
        SetCounts counts;
        for (const DetectionRecord& r : recs) {
            if (r.error)
                ++counts.errored_images;
            else
                counts.detected += static_cast<std::int64_t>(r.markers.size());
        }
        section.sets[name] = counts;
        section.records[name] = std::move(recs);
    }

    const std::int64_t ref = section.sets.at(reference_set).detected;
    if (ref <= 0)
        throw ContractError("reference set \"" + reference_set +
                            "\" produced zero detections; rates are undefined");
    for (auto& [name, counts] : section.sets)
        counts.rate = static_cast<double>(counts.detected) / static_cast<double>(ref);
    return section;
}

LatencyStats benchmark_inference(const Generator& gen, int h, int w, int warmup,
                                 int repeats) {
    if (warmup < 3)
        throw ContractError("benchmark needs at least 3 warmup runs, got " +
                            std::to_string(warmup));
    if (repeats < 10)
        throw ContractError("benchmark needs at least 10 timed runs, got " +
                            std::to_string(repeats));
    if (h < 1 || w < 1) throw ContractError("benchmark: non-positive input size");

    NoGradGuard guard;
    Rng rng(0x62656e6368ULL);
    std::vector<float> values(static_cast<std::size_t>(3) * h * w);
    for (float& v : values) v = rng.uniform();
    const Tensor x = Tensor::from_data(std::move(values), {1, 3, h, w});

    for (int i = 0; i < warmup; ++i) (void)gen.forward(x);

    LatencyStats stats;
    stats.height = h;
    stats.width = w;
    stats.warmup = warmup;
    stats.repeats = repeats;
    stats.samples_ms.reserve(static_cast<std::size_t>(repeats));
    for (int i = 0; i < repeats; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        (void)gen.forward(x);
        const auto t1 = std::chrono::steady_clock::now();
        stats.samples_ms.push_back(
            std::chrono::duration<double, std::milli>(t1 - t0).count());
    }

    stats.mean_ms = std::accumulate(stats.samples_ms.begin(), stats.samples_ms.end(), 0.0) /
                    static_cast<double>(stats.samples_ms.size());
    std::vector<double> sorted = stats.samples_ms;
    std::sort(sorted.begin(), sorted.end());
    stats.p50_ms = nearest_rank(sorted, 0.50);
    stats.p95_ms = nearest_rank(sorted, 0.95);
    stats.device = cpu_descriptor();
    return stats;
}

Aggregate aggregate(const std::vector<double>& values) {
    if (values.empty()) throw ContractError("aggregate of an empty sample");
    Aggregate agg;
    agg.mean = std::accumulate(values.begin(), values.end(), 0.0) /
               static_cast<double>(values.size());
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    agg.median = (n % 2 == 1) ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    return agg;
}

std::string EvalReport::to_json() const {
    nlohmann::json sections = nlohmann::json::array();
    for (const MetricsSection& s : metrics) sections.push_back(metrics_to_json_obj(s));
    nlohmann::json j{{"corpus_id", corpus_id},
                     {"checkpoint", checkpoint},
                     {"pair_count", pair_count},
                     {"metrics", sections},
                     {"flops", flops_to_json_obj(flops)},
                     {"model_mb", model_mb},
                     {"latency", has_latency ? latency_to_json_obj(latency)
                                             : nlohmann::json(nullptr)},
                     {"detection", has_detection ? detection_to_json_obj(detection)
                                                 : nlohmann::json(nullptr)}};
    return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
    try {
        const nlohmann::json j = nlohmann::json::parse(text);
        EvalReport rep;
        rep.corpus_id = j.at("corpus_id").get<std::string>();
        rep.checkpoint = j.at("checkpoint").get<std::string>();
        rep.pair_count = j.at("pair_count").get<int>();
        for (const auto& sj : j.at("metrics")) rep.metrics.push_back(metrics_from_json_obj(sj));
        rep.flops = flops_from_json_obj(j.at("flops"));
        rep.model_mb = j.at("model_mb").get<double>();
        if (!j.at("latency").is_null()) {
            rep.latency = latency_from_json_obj(j.at("latency"));
            rep.has_latency = true;
        }
        if (!j.at("detection").is_null()) {
            rep.detection = detection_from_json_obj(j.at("detection"));
            rep.has_detection = true;
        }
        return rep;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("unreadable evaluation report: ") + e.what());
    }
}

EvalReport evaluate_corpus(Generator& gen, const std::filesystem::path& corpus_root,
                           const std::filesystem::path& work_dir, const EvalOptions& opts) {
    std::vector<CorpusPair> pairs = load_corpus_pairs(corpus_root, opts.split);
    if (opts.max_pairs > 0 && static_cast<int>(pairs.size()) > opts.max_pairs)
        pairs.resize(static_cast<std::size_t>(opts.max_pairs));

    const std::filesystem::path deblur_dir = work_dir / "deblurred";
    std::filesystem::create_directories(deblur_dir);

    EvalReport rep;
    rep.corpus_id = (corpus_root.filename().empty() ? corpus_root.string()
                                                    : corpus_root.filename().string()) +
                    ":" + opts.split;
    rep.checkpoint = opts.checkpoint_note.empty() ? "in-memory generator" : opts.checkpoint_note;
    rep.pair_count = static_cast<int>(pairs.size());

    MetricsSection blurred;
    blurred.set_name = "blurred";
    MetricsSection deblurred;
    deblurred.set_name = "deblurred";
    std::vector<std::filesystem::path> sharp_paths, blur_paths, deblur_paths;

    {
        NoGradGuard guard;
        for (const CorpusPair& pair : pairs) {
            const Tensor x = image_to_tensor(pair.blurred);
            const Tensor y = gen.forward(x);
            const Image out = tensor_to_image(y);
            const std::string name =
                pair.record.scene + "_" + six_digits(pair.record.index) + ".png";
            const std::filesystem::path out_path = deblur_dir / name;
            write_png(out_path, out);

            const PsnrResult pb = psnr(pair.blurred, pair.sharp);
            blurred.rows.push_back(
                {pair.record.blur_path, pb.db, pb.exact, ssim(pair.blurred, pair.sharp)});
            const PsnrResult pd = psnr(out, pair.sharp);
            deblurred.rows.push_back(
                {"deblurred/" + name, pd.db, pd.exact, ssim(out, pair.sharp)});

            sharp_paths.push_back(corpus_root / pair.record.sharp_path);
            blur_paths.push_back(corpus_root / pair.record.blur_path);
            deblur_paths.push_back(out_path);
        }
    }

    auto fill_aggregates = [](MetricsSection& s) {
        std::vector<double> psnrs, ssims;
        psnrs.reserve(s.rows.size());
        ssims.reserve(s.rows.size());
        for (const ImageMetrics& r : s.rows) {
            psnrs.push_back(r.psnr_db);
            ssims.push_back(r.ssim);
        }
        s.psnr = aggregate(psnrs);
        s.ssim = aggregate(ssims);
    };
    fill_aggregates(blurred);
    fill_aggregates(deblurred);
    rep.metrics = {std::move(blurred), std::move(deblurred)};

    rep.flops = count_flops(gen, opts.flops_height, opts.flops_width);
    rep.model_mb = static_cast<double>(checkpoint_byte_size(gen)) / 1e6;

    if (opts.measure_latency) {
        rep.latency = benchmark_inference(gen, pairs.front().sharp.height,
                                          pairs.front().sharp.width, opts.latency_warmup,
                                          opts.latency_repeats);
        rep.has_latency = true;
    }

    if (opts.run_detector) {
        if (opts.detector_command.empty())
            throw DependencyError(std::string("no detector command configured; ") +
                                  kWireContract);
        const DetectorAdapter adapter(opts.detector_command, opts.detector_name);
        rep.detection = marker_detection_rates({{"sharp", sharp_paths},
                                                {"blurred", blur_paths},
                                                {"deblurred", deblur_paths}},
                                               "sharp", adapter);
        rep.has_detection = true;
    }
    return rep;
}

} // namespace dbk
