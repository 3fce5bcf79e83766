// Stand-in marker detector speaking the evaluation wire protocol: it reads
// JSON lines {"image_path": ..., "detector": ...} from the request file and
// writes one {"image_path": ..., "markers": [...]} line per image.
//
// Two modes:
//   default   finds the square dark-ring markers of the procedural scenes
//             (threshold, connected components, ring/shape checks, 4x4 cell
//             decode). Sensitive to blur, so detection counts drop on
//             smeared inputs just like a real detector's.
//   --fixed N emits N synthetic markers per image without reading pixels,
//             for rate-arithmetic checks.
//
// An image that cannot be read gets no response line (the caller flags it);
// other images are still processed.

#include "deblurkit/errors.hpp"
#include "deblurkit/image.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace {

struct Marker {
    int id = 0;
    double x0, y0, x1, y1; // axis-aligned corner box
};

constexpr double kDarkThreshold = 0.16; // ring is 0.05, background >= 0.27

std::vector<double> mean_luma(const dbk::Image& img) {
    const std::size_t hw = static_cast<std::size_t>(img.height) * img.width;
    std::vector<double> luma(hw, 0.0);
    for (int c = 0; c < img.channels; ++c) {
        const float* plane = img.data.data() + static_cast<std::size_t>(c) * hw;
        for (std::size_t i = 0; i < hw; ++i) luma[i] += plane[i];
    }
    for (double& v : luma) v /= img.channels;
    return luma;
}

std::vector<Marker> detect_markers(const dbk::Image& img) {
    const int h = img.height;
    const int w = img.width;
    const std::vector<double> luma = mean_luma(img);
    std::vector<int> label(static_cast<std::size_t>(h) * w, -1);
    std::vector<Marker> found;

    int next_label = 0;
    for (int sy = 0; sy < h; ++sy) {
        for (int sx = 0; sx < w; ++sx) {
            const std::size_t start = static_cast<std::size_t>(sy) * w + sx;
            if (label[start] != -1 || luma[start] >= kDarkThreshold) continue;

            // Flood-fill one dark component, tracking its bounding box.
            const int comp = next_label++;
            int x_lo = sx, x_hi = sx, y_lo = sy, y_hi = sy;
            std::int64_t count = 0;
            std::deque<std::pair<int, int>> queue{{sx, sy}};
            label[start] = comp;
            while (!queue.empty()) {
                const auto [x, y] = queue.front();
                queue.pop_front();
                ++count;
                x_lo = std::min(x_lo, x);
                x_hi = std::max(x_hi, x);
                y_lo = std::min(y_lo, y);
                y_hi = std::max(y_hi, y);
                const int nx[4] = {x - 1, x + 1, x, x};
                const int ny[4] = {y, y, y - 1, y + 1};
                for (int k = 0; k < 4; ++k) {
                    if (nx[k] < 0 || nx[k] >= w || ny[k] < 0 || ny[k] >= h) continue;
                    const std::size_t idx = static_cast<std::size_t>(ny[k]) * w + nx[k];
                    if (label[idx] != -1 || luma[idx] >= kDarkThreshold) continue;
                    label[idx] = comp;
                    queue.emplace_back(nx[k], ny[k]);
                }
            }

            // Shape gate: near-square, large enough, mostly-covered outer ring.
            const int bw = x_hi - x_lo + 1;
            const int bh = y_hi - y_lo + 1;
            const int size = std::max(bw, bh);
            if (std::min(bw, bh) < 12) continue;
            if (std::abs(bw - bh) > std::max(2, size / 8)) continue;
            int perimeter = 0, covered = 0;
            for (int x = x_lo; x <= x_hi; ++x) {
                for (int y : {y_lo, y_hi}) {
                    ++perimeter;
                    if (label[static_cast<std::size_t>(y) * w + x] == comp) ++covered;
                }
            }
            for (int y = y_lo + 1; y < y_hi; ++y) {
                for (int x : {x_lo, x_hi}) {
                    ++perimeter;
                    if (label[static_cast<std::size_t>(y) * w + x] == comp) ++covered;
                }
            }
            if (covered < 9 * perimeter / 10) continue;
            if (count < static_cast<std::int64_t>(size) * size * 2 / 5) continue;

            // Decode the 4x4 interior cells into an id (light cell = 1).
            const int cell = size / 6;
            if (cell < 1) continue;
            int id = 0;
            for (int cy = 1; cy <= 4; ++cy)
                for (int cx = 1; cx <= 4; ++cx) {
                    const int px = std::min(w - 1, x_lo + cx * cell + cell / 2);
                    const int py = std::min(h - 1, y_lo + cy * cell + cell / 2);
                    if (luma[static_cast<std::size_t>(py) * w + px] > 0.5)
                        id |= 1 << ((cy - 1) * 4 + (cx - 1));
                }
            found.push_back({id, static_cast<double>(x_lo), static_cast<double>(y_lo),
                             static_cast<double>(x_hi), static_cast<double>(y_hi)});
        }
    }
    return found;
}

nlohmann::json marker_json(const Marker& m) {
    return nlohmann::json{
        {"id", m.id},
        {"corners",
         {{m.x0, m.y0}, {m.x1, m.y0}, {m.x1, m.y1}, {m.x0, m.y1}}}};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"stand-in fiducial-marker detector (JSONL request/response)"};
    std::string request_path, response_path;
    int fixed = -1;
    app.add_option("request", request_path, "request .jsonl file")->required();
    app.add_option("response", response_path, "response .jsonl file to write")->required();
    app.add_option("--fixed", fixed,
                   "emit this many synthetic markers per image instead of reading pixels");
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    std::ifstream in(request_path);
    if (!in) {
        std::cerr << "error: cannot read " << request_path << "\n";
        return 3;
    }
    std::ofstream out(response_path);
    if (!out) {
        std::cerr << "error: cannot write " << response_path << "\n";
        return 3;
    }

    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::string image_path;
        try {
            image_path = nlohmann::json::parse(line).at("image_path").get<std::string>();
        } catch (const std::exception& e) {
            std::cerr << "skipping malformed request line: " << e.what() << "\n";
            continue;
        }

        nlohmann::json markers = nlohmann::json::array();
        if (fixed >= 0) {
            for (int i = 0; i < fixed; ++i) {
                const double off = 10.0 * i;
                markers.push_back(marker_json({i, off, off, off + 8.0, off + 8.0}));
            }
        } else {
            try {
                const dbk::Image img = dbk::read_png(image_path);
                for (const Marker& m : detect_markers(img)) markers.push_back(marker_json(m));
            } catch (const std::exception& e) {
                // No response line: the caller records this image as errored.
                std::cerr << "failed on " << image_path << ": " << e.what() << "\n";
                continue;
            }
        }
        out << nlohmann::json{{"image_path", image_path}, {"markers", markers}}.dump()
            << '\n';
    }
    return 0;
}
