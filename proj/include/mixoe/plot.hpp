#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mixoe/errors.hpp"

namespace mixoe {

struct Color {
    std::uint8_t r = 0, g = 0, b = 0;

    std::string hex() const {
        char buf[8];
        std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
        return buf;
    }
};

// Lightness shading: confidence 0 maps to the lightest end of the ramp,
// confidence 1 to the full base color.
inline Color shaded(Color base, double confidence) {
    const double kMin = 0.15;
    double t = kMin + (1.0 - kMin) * confidence;
    if (t < 0.0) t = 0.0;
    if (t > 1.0) t = 1.0;
    const auto mix = [&](std::uint8_t c) {
        return static_cast<std::uint8_t>(std::lround(255.0 + (static_cast<double>(c) - 255.0) * t));
    };
    return Color{mix(base.r), mix(base.g), mix(base.b)};
}

namespace palette {
inline constexpr Color id{31, 119, 180};       // blue
inline constexpr Color coarse{44, 160, 44};    // green
inline constexpr Color fine{214, 39, 40};      // red
inline constexpr Color outlier{255, 127, 14};  // orange
inline constexpr Color mixed{148, 103, 189};   // purple
inline constexpr Color gray{127, 127, 127};
inline constexpr Color black{0, 0, 0};
} // namespace palette

// Figure drawing surface recording a primitive display list, rendered to SVG
// (canonical, byte-deterministic) and to a coarse PPM raster. Text appears in
// the SVG only.
class Canvas {
public:
    Canvas(double width, double height) : width_(width), height_(height) {}

    double width() const { return width_; }
    double height() const { return height_; }

    void comment(const std::string& text) {
        Prim p;
        p.kind = Prim::Kind::comment;
        p.text = text;
        prims_.push_back(std::move(p));
    }

    void rect(double x, double y, double w, double h, Color fill, bool outline = false) {
        Prim p;
        p.kind = Prim::Kind::rect;
        p.xs = {x, x + w};
        p.ys = {y, y + h};
        p.color = fill;
        p.outline = outline;
        prims_.push_back(std::move(p));
    }

    void circle(double cx, double cy, double radius, Color fill) {
        Prim p;
        p.kind = Prim::Kind::circle;
        p.xs = {cx};
        p.ys = {cy};
        p.radius = radius;
        p.color = fill;
        prims_.push_back(std::move(p));
    }

    void line(double x1, double y1, double x2, double y2, Color stroke,
              double stroke_width = 1.0, bool dashed = false) {
        Prim p;
        p.kind = Prim::Kind::line;
        p.xs = {x1, x2};
        p.ys = {y1, y2};
        p.color = stroke;
        p.stroke_width = stroke_width;
        p.dashed = dashed;
        prims_.push_back(std::move(p));
    }

    void polyline(const std::vector<double>& xs, const std::vector<double>& ys, Color stroke,
                  double stroke_width = 1.0) {
        if (xs.size() != ys.size() || xs.empty())
            throw std::invalid_argument("polyline: bad point list");
        Prim p;
        p.kind = Prim::Kind::polyline;
        p.xs = xs;
        p.ys = ys;
        p.color = stroke;
        p.stroke_width = stroke_width;
        prims_.push_back(std::move(p));
    }

    void text(double x, double y, const std::string& s, double size = 11.0,
              Color fill = palette::black, bool centered = false) {
        Prim p;
        p.kind = Prim::Kind::text;
        p.xs = {x};
        p.ys = {y};
        p.text = s;
        p.font_size = size;
        p.color = fill;
        p.outline = centered;
        prims_.push_back(std::move(p));
    }

    std::string to_svg() const {
        std::ostringstream out;
        out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
        out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width_)
            << "\" height=\"" << fmt(height_) << "\" viewBox=\"0 0 " << fmt(width_) << " "
            << fmt(height_) << "\">\n";
        out << "<rect x=\"0\" y=\"0\" width=\"" << fmt(width_) << "\" height=\""
            << fmt(height_) << "\" fill=\"#ffffff\"/>\n";
        for (const Prim& p : prims_) render_svg(out, p);
        out << "</svg>\n";
        return out.str();
    }

    void write_svg(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write figure: " + path);
        out << to_svg();
        if (!out) throw IoError("failed writing figure: " + path);
    }

    void write_ppm(const std::string& path) const {
        const int W = static_cast<int>(std::lround(width_));
        const int H = static_cast<int>(std::lround(height_));
        std::vector<std::uint8_t> px(static_cast<std::size_t>(W) * H * 3, 255);
        for (const Prim& p : prims_) render_ppm(px, W, H, p);
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write figure: " + path);
        out << "P6\n" << W << " " << H << "\n255\n";
        out.write(reinterpret_cast<const char*>(px.data()),
                  static_cast<std::streamsize>(px.size()));
        if (!out) throw IoError("failed writing figure: " + path);
    }

private:
    struct Prim {
        enum class Kind { rect, circle, line, polyline, text, comment } kind = Kind::rect;
        std::vector<double> xs, ys;
        double radius = 0.0;
        double stroke_width = 1.0;
        double font_size = 11.0;
        bool dashed = false;
        bool outline = false;
        Color color;
        std::string text;
    };

    static std::string fmt(double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", v);
        return buf;
    }

    static std::string escape(const std::string& s) {
        std::string out;
        for (char c : s) {
            if (c == '&') out += "&amp;";
            else if (c == '<') out += "&lt;";
            else if (c == '>') out += "&gt;";
            else out += c;
        }
        return out;
    }

    static void render_svg(std::ostringstream& out, const Prim& p) {
        switch (p.kind) {
            case Prim::Kind::comment:
                out << "<!-- " << escape(p.text) << " -->\n";
                break;
            case Prim::Kind::rect:
                out << "<rect x=\"" << fmt(p.xs[0]) << "\" y=\"" << fmt(p.ys[0])
                    << "\" width=\"" << fmt(p.xs[1] - p.xs[0]) << "\" height=\""
                    << fmt(p.ys[1] - p.ys[0]) << "\" fill=\"" << p.color.hex() << "\"";
                if (p.outline) out << " stroke=\"#000000\" stroke-width=\"0.75\"";
                out << "/>\n";
                break;
            case Prim::Kind::circle:
                out << "<circle cx=\"" << fmt(p.xs[0]) << "\" cy=\"" << fmt(p.ys[0])
                    << "\" r=\"" << fmt(p.radius) << "\" fill=\"" << p.color.hex() << "\"/>\n";
                break;
            case Prim::Kind::line:
                out << "<line x1=\"" << fmt(p.xs[0]) << "\" y1=\"" << fmt(p.ys[0])
                    << "\" x2=\"" << fmt(p.xs[1]) << "\" y2=\"" << fmt(p.ys[1])
                    << "\" stroke=\"" << p.color.hex() << "\" stroke-width=\""
                    << fmt(p.stroke_width) << "\"";
                if (p.dashed) out << " stroke-dasharray=\"4 3\"";
                out << "/>\n";
                break;
            case Prim::Kind::polyline: {
                out << "<polyline points=\"";
                for (std::size_t i = 0; i < p.xs.size(); ++i) {
                    if (i) out << " ";
                    out << fmt(p.xs[i]) << "," << fmt(p.ys[i]);
                }
                out << "\" fill=\"none\" stroke=\"" << p.color.hex() << "\" stroke-width=\""
                    << fmt(p.stroke_width) << "\"/>\n";
                break;
            }
            case Prim::Kind::text:
                out << "<text x=\"" << fmt(p.xs[0]) << "\" y=\"" << fmt(p.ys[0])
                    << "\" font-family=\"sans-serif\" font-size=\"" << fmt(p.font_size)
                    << "\" fill=\"" << p.color.hex() << "\"";
                if (p.outline) out << " text-anchor=\"middle\"";
                out << ">" << escape(p.text) << "</text>\n";
                break;
        }
    }

    static void put_px(std::vector<std::uint8_t>& px, int W, int H, int x, int y, Color c) {
        if (x < 0 || y < 0 || x >= W || y >= H) return;
        const std::size_t i = (static_cast<std::size_t>(y) * W + x) * 3;
        px[i] = c.r;
        px[i + 1] = c.g;
        px[i + 2] = c.b;
    }

    static void render_ppm(std::vector<std::uint8_t>& px, int W, int H, const Prim& p) {
        switch (p.kind) {
            case Prim::Kind::comment:
            case Prim::Kind::text:
                break;
            case Prim::Kind::rect: {
                const int x0 = static_cast<int>(std::floor(p.xs[0]));
                const int x1 = static_cast<int>(std::ceil(p.xs[1]));
                const int y0 = static_cast<int>(std::floor(p.ys[0]));
                const int y1 = static_cast<int>(std::ceil(p.ys[1]));
                for (int y = y0; y < y1; ++y)
                    for (int x = x0; x < x1; ++x) put_px(px, W, H, x, y, p.color);
                break;
            }
            case Prim::Kind::circle: {
                const int x0 = static_cast<int>(std::floor(p.xs[0] - p.radius));
                const int x1 = static_cast<int>(std::ceil(p.xs[0] + p.radius));
                const int y0 = static_cast<int>(std::floor(p.ys[0] - p.radius));
                const int y1 = static_cast<int>(std::ceil(p.ys[0] + p.radius));
                for (int y = y0; y <= y1; ++y)
                    for (int x = x0; x <= x1; ++x) {
                        const double dx = x + 0.5 - p.xs[0], dy = y + 0.5 - p.ys[0];
                        if (dx * dx + dy * dy <= p.radius * p.radius)
                            put_px(px, W, H, x, y, p.color);
                    }
                break;
            }
            case Prim::Kind::line:
                draw_segment(px, W, H, p.xs[0], p.ys[0], p.xs[1], p.ys[1], p.color);
                break;
            case Prim::Kind::polyline:
                for (std::size_t i = 0; i + 1 < p.xs.size(); ++i)
                    draw_segment(px, W, H, p.xs[i], p.ys[i], p.xs[i + 1], p.ys[i + 1],
                                 p.color);
                break;
        }
    }

    static void draw_segment(std::vector<std::uint8_t>& px, int W, int H, double x1,
                             double y1, double x2, double y2, Color c) {
        const double len = std::max(std::abs(x2 - x1), std::abs(y2 - y1));
        const int n = std::max(1, static_cast<int>(std::ceil(len)));
        for (int i = 0; i <= n; ++i) {
            const double t = static_cast<double>(i) / static_cast<double>(n);
            put_px(px, W, H, static_cast<int>(std::lround(x1 + t * (x2 - x1))),
                   static_cast<int>(std::lround(y1 + t * (y2 - y1))), c);
        }
    }

    double width_, height_;
    std::vector<Prim> prims_;
};

} // namespace mixoe
