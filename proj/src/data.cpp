#include "fewseg/data.hpp"

#include "fewseg/common.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace fewseg {

namespace {

const char* family_names[] = {"disk", "square", "triangle", "ring", "cross", "bar"};
const char* texture_names[] = {"flat", "stripes", "noise"};

} // namespace

std::string ShapeClass::name() const {
    return std::string(family_names[static_cast<int>(family)]) + ":" +
           texture_names[static_cast<int>(texture)];
}

ShapeClass ShapeClass::from_id(int id) {
    if (id < 0 || id >= kNumClasses) throw InputError("unknown class id");
    ShapeClass c;
    c.family = static_cast<ShapeFamily>(id / kNumTextures);
    c.texture = static_cast<ShapeTexture>(id % kNumTextures);
    return c;
}

ShapeClass ShapeClass::from_name(const std::string& name) {
    const auto pos = name.find(':');
    if (pos == std::string::npos) throw InputError("malformed class name: " + name);
    const std::string fam = name.substr(0, pos);
    const std::string tex = name.substr(pos + 1);
    ShapeClass c;
    bool found = false;
    for (int i = 0; i < kNumFamilies; ++i)
        if (fam == family_names[i]) {
            c.family = static_cast<ShapeFamily>(i);
            found = true;
        }
    if (!found) throw InputError("unknown shape family: " + fam);
    found = false;
    for (int i = 0; i < kNumTextures; ++i)
        if (tex == texture_names[i]) {
            c.texture = static_cast<ShapeTexture>(i);
            found = true;
        }
    if (!found) throw InputError("unknown texture: " + tex);
    return c;
}

std::vector<FoldSpec> make_folds(int num_folds) {
    if (num_folds < 2 || num_folds > kNumClasses)
        throw ConfigError("fold count must be in [2, 18]");
    std::vector<FoldSpec> folds(static_cast<std::size_t>(num_folds));
    for (int f = 0; f < num_folds; ++f) folds[static_cast<std::size_t>(f)].fold_id = f;
    // fold by family: a fold's test split holds whole families, so unseen
    // classes include same-hue siblings that only texture can tell apart
    for (int id = 0; id < kNumClasses; ++id) {
        const auto c = ShapeClass::from_id(id);
        const int f = static_cast<int>(c.family) % num_folds;
        for (int g = 0; g < num_folds; ++g) {
            auto& fold = folds[static_cast<std::size_t>(g)];
            if (g == f) fold.test_classes.push_back(id);
            else fold.train_classes.push_back(id);
        }
    }
    return folds;
}

bool shape_contains(const ShapePose& pose, double px, double py) {
    const double dx = px - pose.cx;
    const double dy = py - pose.cy;
    const double c = std::cos(-pose.rotation), s = std::sin(-pose.rotation);
    const double x = (c * dx - s * dy) / pose.scale;
    const double y = (s * dx + c * dy) / pose.scale;
    switch (pose.family) {
        case ShapeFamily::disk:
            return x * x + y * y <= 1.0;
        case ShapeFamily::square:
            return std::abs(x) <= 0.75 && std::abs(y) <= 0.75;
        case ShapeFamily::triangle: {
            // vertices (0,-1), (0.9,0.8), (-0.9,0.8)
            auto side = [](double ax, double ay, double bx, double by, double qx,
                           double qy) {
                return (bx - ax) * (qy - ay) - (by - ay) * (qx - ax);
            };
            const double s0 = side(0.0, -1.0, 0.9, 0.8, x, y);
            const double s1 = side(0.9, 0.8, -0.9, 0.8, x, y);
            const double s2 = side(-0.9, 0.8, 0.0, -1.0, x, y);
            return (s0 >= 0 && s1 >= 0 && s2 >= 0) || (s0 <= 0 && s1 <= 0 && s2 <= 0);
        }
        case ShapeFamily::ring: {
            const double r2 = x * x + y * y;
            return r2 >= 0.55 * 0.55 && r2 <= 1.0;
        }
        case ShapeFamily::cross:
            return (std::abs(x) <= 0.35 && std::abs(y) <= 1.0) ||
                   (std::abs(y) <= 0.35 && std::abs(x) <= 1.0);
        case ShapeFamily::bar:
            return std::abs(x) <= 1.0 && std::abs(y) <= 0.3;
    }
    return false;
}

namespace {

double hash01(std::uint64_t v) {
    Rng r(v);
    return r.next_double();
}

struct Rgb {
    double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
    h = h - std::floor(h);
    const double i = std::floor(h * 6.0);
    const double f = h * 6.0 - i;
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - f * s);
    const double t = v * (1.0 - (1.0 - f) * s);
    switch (static_cast<int>(i) % 6) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

// per-class hue with per-instance jitter; texture decides the fill pattern
struct InstanceStyle {
    ShapeClass cls;
    Rgb base;
    Rgb alt;
    double stripe_period = 4.0;
    std::uint64_t noise_seed = 0;
};

InstanceStyle make_style(const ShapeClass& cls, Rng& rng) {
    InstanceStyle st;
    st.cls = cls;
    // hue is keyed on the family only, so classes sharing a family must be
    // told apart by texture
    const double hue =
        std::fmod(0.618033988749895 * (static_cast<int>(cls.family) + 1), 1.0) +
        rng.uniform(-0.05, 0.05);
    const double sat = rng.uniform(0.6, 0.9);
    const double val = rng.uniform(0.65, 0.95);
    st.base = hsv_to_rgb(hue, sat, val);
    st.alt = {st.base.r * 0.35, st.base.g * 0.35, st.base.b * 0.35};
    st.stripe_period = rng.uniform(1.8, 2.8);
    st.noise_seed = rng.next_u64();
    return st;
}

Rgb style_color(const InstanceStyle& st, const ShapePose& pose, double px, double py) {
    switch (st.cls.texture) {
        case ShapeTexture::flat:
            return st.base;
        case ShapeTexture::stripes: {
            const double dx = px - pose.cx, dy = py - pose.cy;
            const double c = std::cos(-pose.rotation), s = std::sin(-pose.rotation);
            const double u = c * dx - s * dy;
            const long band = static_cast<long>(std::floor(u / st.stripe_period));
            return (band & 1) ? st.alt : st.base;
        }
        case ShapeTexture::noise: {
            const std::uint64_t key =
                st.noise_seed ^ (static_cast<std::uint64_t>(py) * 73856093ULL) ^
                (static_cast<std::uint64_t>(px) * 19349663ULL);
            Rng r(key);
            const double a = 0.28;
            return {st.base.r + r.uniform(-a, a), st.base.g + r.uniform(-a, a),
                    st.base.b + r.uniform(-a, a)};
        }
    }
    return st.base;
}

ShapePose sample_pose(ShapeFamily family, Rng& rng, int res, double scale_lo,
                      double scale_hi) {
    ShapePose p;
    p.family = family;
    p.cx = rng.uniform(0.32, 0.68) * res;
    p.cy = rng.uniform(0.32, 0.68) * res;
    p.scale = rng.uniform(scale_lo, scale_hi) * res;
    p.rotation = rng.uniform(0.0, 2.0 * M_PI);
    return p;
}

void paint_shape(Image& img, const ShapePose& pose, const InstanceStyle& st) {
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            if (!shape_contains(pose, x + 0.5, y + 0.5)) continue;
            const Rgb c = style_color(st, pose, x + 0.5, y + 0.5);
            img.at(y, x, 0) = c.r;
            img.at(y, x, 1) = c.g;
            img.at(y, x, 2) = c.b;
        }
}

} // namespace

ShapePose target_pose_for_sample(const ShapeClass& class_id, std::uint64_t seed,
                                 int sample_index, int resolution) {
    Rng rng(derive_seed(seed, 0xA05Eu + static_cast<std::uint64_t>(sample_index)));
    return sample_pose(class_id.family, rng, resolution, 0.18, 0.30);
}

Episode generate_episode(const ShapeClass& class_id, int n_samples,
                         std::uint64_t seed, bool distractors, int resolution) {
    if (n_samples <= 0) throw InputError("n_samples must be positive");
    if (resolution <= 0 || resolution % 4 != 0)
        throw InputError("resolution must be a positive multiple of 4");
    Episode ep;
    ep.class_id = class_id;
    ep.seed = seed;
    ep.resolution = resolution;
    for (int i = 0; i < n_samples; ++i) {
        EpisodeSample sm;
        sm.image = Image(resolution, resolution);
        sm.mask = Mask(resolution, resolution);

        // background
        Rng brng(derive_seed(seed, 0xB0 + static_cast<std::uint64_t>(i)));
        const double bg = brng.uniform(0.10, 0.22);
        for (int y = 0; y < resolution; ++y)
            for (int x = 0; x < resolution; ++x) {
                const double n =
                    0.03 * (hash01(derive_seed(seed, 0xBB ^ (static_cast<std::uint64_t>(i) << 20 |
                                                             static_cast<std::uint64_t>(y) << 8 |
                                                             static_cast<std::uint64_t>(x)))) -
                            0.5);
                for (int c = 0; c < 3; ++c) sm.image.at(y, x, c) = bg + n;
            }

        // distractor shapes first (target is drawn on top)
        if (distractors) {
            Rng drng(derive_seed(seed, 0xD0 + static_cast<std::uint64_t>(i)));
            const int count = static_cast<int>(drng.next_below(3)); // 0..2
            for (int k = 0; k < count; ++k) {
                int other = static_cast<int>(drng.next_below(kNumClasses - 1));
                if (other >= class_id.id()) ++other;
                const auto ocls = ShapeClass::from_id(other);
                auto pose = sample_pose(ocls.family, drng, resolution, 0.10, 0.20);
                auto style = make_style(ocls, drng);
                paint_shape(sm.image, pose, style);
            }
        }

        // target shape; pose comes from its own stream so tests can re-derive it
        auto pose = target_pose_for_sample(class_id, seed, i, resolution);
        Rng srng(derive_seed(seed, 0x57 + static_cast<std::uint64_t>(i)));
        auto style = make_style(class_id, srng);
        paint_shape(sm.image, pose, style);
        for (int y = 0; y < resolution; ++y)
            for (int x = 0; x < resolution; ++x)
                sm.mask.at(y, x) = shape_contains(pose, x + 0.5, y + 0.5) ? 1 : 0;

        quantize_image(sm.image);
        ep.samples.push_back(std::move(sm));
    }
    return ep;
}

Prompt synthesize_prompt(const Mask& mask, PromptKind kind, std::uint64_t seed) {
    if (kind == PromptKind::mask) return Prompt::make_mask(mask);
    std::vector<std::pair<int, int>> fg; // (x, y)
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x)
            if (mask.at(y, x)) fg.emplace_back(x, y);
    if (fg.empty()) throw InputError("cannot synthesize a geometric prompt from an empty mask");
    Rng rng(derive_seed(seed, 0x9007));
    switch (kind) {
        case PromptKind::point: {
            const auto& p = fg[rng.next_below(fg.size())];
            return Prompt::make_point(p.first, p.second, true);
        }
        case PromptKind::box: {
            int x0 = mask.w, y0 = mask.h, x1 = -1, y1 = -1;
            for (const auto& [x, y] : fg) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
            return Prompt::make_box(x0, y0, x1, y1);
        }
        case PromptKind::scribble: {
            const auto& start = fg[rng.next_below(fg.size())];
            std::vector<std::pair<int, int>> walk = {start};
            auto contains = [&](int x, int y) {
                return x >= 0 && y >= 0 && x < mask.w && y < mask.h && mask.at(y, x);
            };
            int cx = start.first, cy = start.second;
            const int dirs[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
            for (int step = 0; step < 64 && walk.size() < 16; ++step) {
                int order[4] = {0, 1, 2, 3};
                for (int k = 3; k > 0; --k)
                    std::swap(order[k], order[static_cast<int>(rng.next_below(
                                            static_cast<std::uint64_t>(k) + 1))]);
                bool moved = false;
                for (int k = 0; k < 4 && !moved; ++k) {
                    const int nx = cx + dirs[order[k]][0];
                    const int ny = cy + dirs[order[k]][1];
                    if (contains(nx, ny)) {
                        cx = nx;
                        cy = ny;
                        moved = true;
                    }
                }
                if (!moved) break;
                if (std::find(walk.begin(), walk.end(), std::make_pair(cx, cy)) ==
                    walk.end())
                    walk.emplace_back(cx, cy);
            }
            return Prompt::make_scribble(std::move(walk));
        }
        default:
            throw InputError("invalid prompt kind");
    }
}

namespace {

std::string manifest_get(const std::string& text, const std::string& key) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        if (trim(line.substr(0, eq)) == key) return trim(line.substr(eq + 1));
    }
    throw FormatError("manifest missing key: " + key);
}

} // namespace

void write_episode(const Episode& episode, const std::string& dir) {
    fs::create_directories(dir);
    std::ofstream mf(fs::path(dir) / "manifest");
    if (!mf) throw IoError("cannot write manifest in " + dir);
    mf << "class_id = " << episode.class_id.name() << "\n";
    mf << "n_samples = " << episode.samples.size() << "\n";
    mf << "seed = " << episode.seed << "\n";
    mf << "resolution = " << episode.resolution << "\n";
    mf.close();
    for (std::size_t i = 0; i < episode.samples.size(); ++i) {
        const auto& s = episode.samples[i];
        write_png_rgb((fs::path(dir) / ("sample_" + std::to_string(i) + ".png")).string(),
                      s.image);
        write_mask_png(
            (fs::path(dir) / ("sample_" + std::to_string(i) + "_mask.png")).string(),
            s.mask);
    }
}

Episode read_episode(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "manifest");
    if (!mf) throw FormatError("missing manifest in " + dir);
    std::stringstream buf;
    buf << mf.rdbuf();
    const std::string text = buf.str();
    Episode ep;
    ep.class_id = ShapeClass::from_name(manifest_get(text, "class_id"));
    int n_samples = 0;
    try {
        n_samples = std::stoi(manifest_get(text, "n_samples"));
        ep.seed = std::stoull(manifest_get(text, "seed"));
        ep.resolution = std::stoi(manifest_get(text, "resolution"));
    } catch (const std::invalid_argument&) {
        throw FormatError("malformed manifest value in " + dir);
    } catch (const std::out_of_range&) {
        throw FormatError("malformed manifest value in " + dir);
    }
    for (int i = 0; i < n_samples; ++i) {
        const auto img_path = fs::path(dir) / ("sample_" + std::to_string(i) + ".png");
        const auto msk_path = fs::path(dir) / ("sample_" + std::to_string(i) + "_mask.png");
        if (!fs::exists(img_path)) throw FormatError("missing file: " + img_path.string());
        if (!fs::exists(msk_path)) throw FormatError("missing file: " + msk_path.string());
        EpisodeSample s;
        s.image = read_png_rgb(img_path.string());
        s.mask = read_mask_png(msk_path.string());
        ep.samples.push_back(std::move(s));
    }
    return ep;
}

namespace {

std::string join_class_names(const std::vector<int>& ids) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ",";
        out += ShapeClass::from_id(ids[i]).name();
    }
    return out;
}

std::vector<int> parse_class_names(const std::string& csv) {
    std::vector<int> out;
    std::istringstream in(csv);
    std::string item;
    while (std::getline(in, item, ','))
        if (!item.empty()) out.push_back(ShapeClass::from_name(item).id());
    return out;
}

} // namespace

void write_fold_manifest(const FoldSpec& fold, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write fold manifest: " + path);
    f << "fold_id = " << fold.fold_id << "\n";
    f << "train_classes = " << join_class_names(fold.train_classes) << "\n";
    f << "test_classes = " << join_class_names(fold.test_classes) << "\n";
}

FoldSpec read_fold_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("missing fold manifest: " + path);
    std::stringstream buf;
    buf << f.rdbuf();
    const std::string text = buf.str();
    FoldSpec fold;
    try {
        fold.fold_id = std::stoi(manifest_get(text, "fold_id"));
    } catch (const std::exception&) {
        throw FormatError("malformed fold manifest: " + path);
    }
    fold.train_classes = parse_class_names(manifest_get(text, "train_classes"));
    fold.test_classes = parse_class_names(manifest_get(text, "test_classes"));
    if (fold.train_classes.empty() || fold.test_classes.empty())
        throw FormatError("fold manifest must list train and test classes: " + path);
    return fold;
}

} // namespace fewseg
