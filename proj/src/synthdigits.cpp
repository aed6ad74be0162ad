#include "specreg/synthdigits.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "specreg/rng.hpp"

namespace specreg {

namespace {

struct Pt { double x, y; };
using Stroke = std::vector<Pt>;

void arc(Stroke& s, double cx, double cy, double rx, double ry, double a0, double a1, int steps = 14) {
    for (int i = 0; i <= steps; ++i) {
        double a = a0 + (a1 - a0) * static_cast<double>(i) / steps;
        s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
    }
}

// glyphs in a unit box, x right, y down; two handwriting variants per class
std::vector<std::vector<std::vector<Stroke>>> make_glyphs() {
    constexpr double pi = 3.14159265358979323846;
    std::vector<std::vector<std::vector<Stroke>>> g(10);

    {
        Stroke a;
        arc(a, 0.50, 0.50, 0.26, 0.36, 0, 2 * pi, 26);
        Stroke b;   // narrow oval with a slight slant
        arc(b, 0.50, 0.50, 0.18, 0.37, 0, 2 * pi, 26);
        for (Pt& p : b) p.x += 0.12 * (0.5 - p.y);
        g[0] = {{a}, {b}};
    }
    {
        Stroke plain{{0.38, 0.26}, {0.52, 0.12}, {0.52, 0.88}};
        Stroke serif{{0.40, 0.24}, {0.54, 0.12}, {0.54, 0.86}};
        Stroke base{{0.38, 0.87}, {0.68, 0.87}};
        g[1] = {{plain}, {serif, base}};
    }
    {
        Stroke a;
        arc(a, 0.48, 0.34, 0.24, 0.22, -pi, -0.15 * pi);
        a.push_back({0.27, 0.85});
        a.push_back({0.76, 0.85});
        Stroke b;   // curly foot
        arc(b, 0.48, 0.32, 0.22, 0.20, -0.9 * pi, -0.1 * pi);
        b.push_back({0.60, 0.55});
        b.push_back({0.30, 0.82});
        arc(b, 0.52, 0.82, 0.22, 0.07, -pi, -0.15 * pi);
        g[2] = {{a}, {b}};
    }
    {
        Stroke a;
        arc(a, 0.45, 0.32, 0.22, 0.20, -0.85 * pi, 0.45 * pi);
        arc(a, 0.45, 0.68, 0.25, 0.22, -0.45 * pi, 0.85 * pi);
        Stroke top{{0.28, 0.14}, {0.68, 0.14}, {0.44, 0.42}};  // flat-top style
        Stroke belly;
        arc(belly, 0.45, 0.65, 0.25, 0.24, -0.5 * pi, 0.8 * pi);
        g[3] = {{a}, {top, belly}};
    }
    {
        Stroke diag{{0.60, 0.12}, {0.24, 0.62}, {0.80, 0.62}};
        Stroke stem{{0.62, 0.40}, {0.62, 0.90}};
        Stroke open_l{{0.32, 0.14}, {0.28, 0.56}, {0.76, 0.56}};  // open top
        Stroke open_s{{0.64, 0.12}, {0.64, 0.88}};
        g[4] = {{diag, stem}, {open_l, open_s}};
    }
    {
        Stroke a;
        a.push_back({0.72, 0.14});
        a.push_back({0.32, 0.14});
        a.push_back({0.29, 0.46});
        arc(a, 0.47, 0.64, 0.23, 0.21, -0.35 * pi, 0.75 * pi);
        Stroke bar{{0.74, 0.13}, {0.34, 0.13}};
        Stroke body;
        body.push_back({0.34, 0.13});
        body.push_back({0.32, 0.42});
        arc(body, 0.48, 0.63, 0.25, 0.23, -0.4 * pi, 0.7 * pi);
        g[5] = {{a}, {bar, body}};
    }
    {
        Stroke a;
        a.push_back({0.66, 0.12});
        a.push_back({0.38, 0.50});
        arc(a, 0.50, 0.66, 0.20, 0.19, -pi, pi, 20);
        Stroke b;   // straighter descender, smaller loop
        b.push_back({0.60, 0.10});
        b.push_back({0.42, 0.42});
        b.push_back({0.38, 0.62});
        arc(b, 0.50, 0.70, 0.17, 0.16, -pi, pi, 20);
        g[6] = {{a}, {b}};
    }
    {
        Stroke a{{0.25, 0.15}, {0.76, 0.15}, {0.42, 0.88}};
        Stroke b{{0.26, 0.16}, {0.74, 0.16}, {0.44, 0.86}};
        Stroke cross{{0.34, 0.52}, {0.62, 0.52}};   // crossbar style
        g[7] = {{a}, {b, cross}};
    }
    {
        Stroke a1, a2;
        arc(a1, 0.50, 0.32, 0.17, 0.16, 0, 2 * pi, 20);
        arc(a2, 0.50, 0.67, 0.21, 0.19, 0, 2 * pi, 20);
        Stroke b;   // single-stroke figure eight
        arc(b, 0.50, 0.33, 0.16, 0.17, -0.5 * pi, 1.5 * pi, 18);
        arc(b, 0.50, 0.68, 0.20, 0.18, 0.5 * pi, -1.5 * pi, 18);
        g[8] = {{a1, a2}, {b}};
    }
    {
        Stroke a;
        arc(a, 0.52, 0.34, 0.19, 0.18, 0, 2 * pi, 20);
        Stroke tail{{0.71, 0.36}, {0.58, 0.88}};
        Stroke b;
        arc(b, 0.50, 0.33, 0.18, 0.17, 0, 2 * pi, 20);
        Stroke hook{{0.68, 0.35}, {0.66, 0.70}};   // hooked tail
        Stroke hook2;
        arc(hook2, 0.52, 0.70, 0.14, 0.12, 0, 0.8 * pi);
        g[9] = {{a, tail}, {b, hook, hook2}};
    }
    return g;
}

const std::vector<std::vector<std::vector<Stroke>>>& glyphs() {
    static const std::vector<std::vector<std::vector<Stroke>>> g = make_glyphs();
    return g;
}

double seg_dist2(double px, double py, Pt a, Pt b) {
    double dx = b.x - a.x, dy = b.y - a.y;
    double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((px - a.x) * dx + (py - a.y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    double ex = px - (a.x + t * dx), ey = py - (a.y + t * dy);
    return ex * ex + ey * ey;
}

void render_digit(int label, Rng& rng, uint8_t* out, int64_t side) {
    double theta = rng.uniform(-0.26, 0.26);
    double sx = rng.uniform(0.78, 1.18), sy = rng.uniform(0.78, 1.18);
    double shear = rng.uniform(-0.22, 0.22);
    double tx = rng.uniform(-0.09, 0.09), ty = rng.uniform(-0.09, 0.09);
    double soft = 0.75;       // edge softness, pixels
    double peak = 1.0;      // pen pressure

    double ct = std::cos(theta), st = std::sin(theta);
    auto map = [&](Pt p) {
        double x = (p.x - 0.5) * sx, y = (p.y - 0.5) * sy;
        x += shear * y;
        double rx = ct * x - st * y, ry = st * x + ct * y;
        return Pt{(rx + 0.5 + tx) * static_cast<double>(side), (ry + 0.5 + ty) * static_cast<double>(side)};
    };

    std::vector<double> img(static_cast<size_t>(side * side), 0.0);
    double width = rng.uniform(1.5, 2.5);  // pen width
    double half = 0.5 * width, reach = half + soft;
    const auto& variants = glyphs()[static_cast<size_t>(label)];
    const auto& shape = variants[static_cast<size_t>(rng.uniform_int(variants.size()))];
    for (const Stroke& stroke : shape) {
        const Stroke& pts = stroke;
        for (size_t i = 0; i + 1 < pts.size(); ++i) {
            Pt a = map(pts[i]), b = map(pts[i + 1]);
            int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - reach)));
            int x1 = std::min(static_cast<int>(side) - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + reach)));
            int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - reach)));
            int y1 = std::min(static_cast<int>(side) - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + reach)));
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    double d = std::sqrt(seg_dist2(x + 0.5, y + 0.5, a, b));
                    double v = std::clamp((half + soft - d) / soft, 0.0, 1.0);
                    double& px = img[static_cast<size_t>(y * side + x)];
                    px = std::max(px, v);
                }
        }
    }
    for (int64_t i = 0; i < side * side; ++i)
        out[i] = static_cast<uint8_t>(std::lround(255.0 * peak * img[static_cast<size_t>(i)]));
}

}  // namespace

DatasetHandle make_synthetic_digits(int64_t count, uint64_t seed) {
    DatasetHandle h;
    h.count = count;
    h.rows = 28;
    h.cols = 28;
    h.images.resize(static_cast<size_t>(count * 28 * 28));
    h.labels.resize(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
        int label = static_cast<int>(i % 10);
        Rng rng(Rng::mix(seed, static_cast<uint64_t>(i)));
        render_digit(label, rng, h.images.data() + i * 28 * 28, 28);
        h.labels[static_cast<size_t>(i)] = static_cast<uint8_t>(label);
    }
    h.fingerprint = dataset_fingerprint(h.images, h.labels);
    h.lineage = "synthetic(" + std::to_string(count) + "," + std::to_string(seed) + ")";
    return h;
}

void write_synthetic_idx(int64_t count, uint64_t seed, const std::string& images_path,
                         const std::string& labels_path) {
    save_idx(make_synthetic_digits(count, seed), images_path, labels_path);
}

}  // namespace specreg
