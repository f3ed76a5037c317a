#include "nighthaze/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "nighthaze/error.hpp"
#include "nighthaze/image.hpp"
#include "nighthaze/image_io.hpp"

namespace nighthaze {

std::vector<LogEntry> read_training_log(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw NotFoundError("training log not found: " + path.string());
    std::vector<LogEntry> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream fields(line);
        std::string field;
        LogEntry e;
        int column = 0;
        try {
            while (std::getline(fields, field, '\t')) {
                if (column == 0) e.step = std::stoull(field);
                else if (column == 1) e.lr = std::stod(field);
                else {
                    const auto eq = field.find('=');
                    if (eq == std::string::npos) throw FormatError("bad log field '" + field + "'");
                    e.values[field.substr(0, eq)] = std::stod(field.substr(eq + 1));
                }
                ++column;
            }
        } catch (const std::invalid_argument&) {
            throw FormatError("malformed training log line in " + path.string() + ": " + line);
        }
        if (column < 2) throw FormatError("malformed training log line in " + path.string() + ": " + line);
        out.push_back(std::move(e));
    }
    return out;
}

namespace {

void put(ImageRGB& img, int x, int y, const Rgb& c) {
    if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) return;
    for (int k = 0; k < 3; ++k) img.at(y, x, k) = c[k];
}

void line(ImageRGB& img, int x0, int y0, int x1, int y1, const Rgb& c) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        put(img, x0, y0, c);
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) { err += dy; x0 += sx; }
        if (e2 <= dx) { err += dx; y0 += sy; }
    }
}

}  // namespace

void plot_training_curve(const std::vector<LogEntry>& log, const std::filesystem::path& png, const std::string& term,
                         int width, int height) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& e : log) {
        auto it = e.values.find(term);
        if (it != e.values.end() && std::isfinite(it->second)) pts.emplace_back(static_cast<double>(e.step), it->second);
    }
    if (pts.empty()) throw DataError("training log has no finite values for '" + term + "'");
    if (width < 64 || height < 64) throw ParameterError("plot must be at least 64x64");

    ImageRGB img(height, width, 1.0);
    const int left = 40, right = width - 12, top = 12, bottom = height - 28;
    const Rgb axis{0.1, 0.1, 0.1}, grid{0.85, 0.85, 0.85}, curve{0.12, 0.35, 0.75};
    for (int i = 1; i < 5; ++i) {
        const int y = top + (bottom - top) * i / 5;
        line(img, left, y, right, y, grid);
        const int x = left + (right - left) * i / 5;
        line(img, x, top, x, bottom, grid);
    }
    line(img, left, top, left, bottom, axis);
    line(img, left, bottom, right, bottom, axis);
    line(img, left, top, right, top, axis);
    line(img, right, top, right, bottom, axis);

    double x0 = pts.front().first, x1 = pts.back().first;
    double y0 = pts.front().second, y1 = y0;
    for (const auto& [x, y] : pts) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
    }
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) { y1 += 0.5; y0 -= 0.5; }
    auto px = [&](double x) { return left + static_cast<int>(std::lround((x - x0) / (x1 - x0) * (right - left))); };
    auto py = [&](double y) { return bottom - static_cast<int>(std::lround((y - y0) / (y1 - y0) * (bottom - top))); };
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (i == 0) put(img, px(pts[0].first), py(pts[0].second), curve);
        else line(img, px(pts[i - 1].first), py(pts[i - 1].second), px(pts[i].first), py(pts[i].second), curve);
    }
    if (png.has_parent_path()) std::filesystem::create_directories(png.parent_path());
    save_image(img, png);
}

}  // namespace nighthaze
