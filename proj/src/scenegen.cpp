#include "maod/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace maod {

using nlohmann::json;

namespace {

constexpr double kObjectColors[3][3] = {
    {1.0, 1.0, 1.0},  // white
    {0.9, 0.1, 0.1},  // red
    {0.1, 0.2, 0.9},  // blue
};

constexpr double kAspectLo = 0.6;
constexpr double kAspectHi = 1.6;
constexpr double kPlacementMargin = 0.02;

}  // namespace

const char* background_name(BackgroundKind k) {
    switch (k) {
        case BackgroundKind::Plain: return "plain";
        case BackgroundKind::Checker: return "checker";
        case BackgroundKind::Stripes: return "stripes";
        case BackgroundKind::Dots: return "dots";
        case BackgroundKind::Gradient: return "gradient";
    }
    throw InternalError("unhandled background kind");
}

void GenConfig::validate() const {
    require(image_size >= 8, strfmt("image size %d too small", image_size));
    require(far_area_min > 0.0 && far_area_min < far_area_max, "far area range is empty");
    require(far_area_max < close_area_min,
            strfmt("far_area_max %g must stay below close_area_min %g (situations must be "
                   "separable by construction)",
                   far_area_max, close_area_min));
    require(close_area_min < close_area_max && close_area_max <= 0.5,
            "close area range must be non-empty and at most 0.5");
    require(far_area_max <= border_lo && border_lo < border_mid && border_mid < border_hi &&
                border_hi <= close_area_min,
            "border band must lie between the far and close area ranges");
    require(border_fraction >= 0.0 && border_fraction < 1.0,
            strfmt("border fraction must be in [0,1), got %g", border_fraction));
    require(noise_sigma >= 0.0, "noise sigma must be non-negative");
    require(search_blur_radius >= 0, "blur radius must be non-negative");
    require(!far_count_weights.empty() && far_count_weights.size() <= 4,
            "far count weights must cover 1..4 objects");
    double sum = 0.0;
    for (double w : far_count_weights) {
        require(w >= 0.0, "far count weights must be non-negative");
        sum += w;
    }
    require(sum > 0.0, "far count weights must not all be zero");
}

std::string GenConfig::describe() const {
    std::string s = strfmt(
        "size=%d|far=[%g,%g]|close=[%g,%g]|border=[%g,%g,%g]@%g|noise=%g|blur=%d|counts=",
        image_size, far_area_min, far_area_max, close_area_min, close_area_max, border_lo,
        border_mid, border_hi, border_fraction, noise_sigma, search_blur_radius);
    for (std::size_t i = 0; i < far_count_weights.size(); ++i)
        s += strfmt(i ? ",%g" : "%g", far_count_weights[i]);
    return s;
}

std::string GenConfig::hash() const { return sha256_hex(describe()); }

void SceneSpec::validate(const GenConfig& cfg) const {
    cfg.validate();
    require(base_level >= 0.0 && base_level <= 1.0 && alt_level >= 0.0 && alt_level <= 1.0,
            "background levels must lie in [0,1]");
    require(texture_period >= 2, "texture period must be at least 2");
    require(orientation >= 0 && orientation <= 2, "orientation must be 0, 1 or 2");
    require(blur_radius >= 0 && noise_sigma >= 0.0, "blur and noise must be non-negative");

    const double eps = 1e-12;
    for (const auto& o : objects) {
        require(o.color >= 0 && o.color <= 2, "object color index outside 0..2");
        require(o.w > 0.0 && o.w < 1.0 && o.h > 0.0 && o.h < 1.0, "object size outside (0,1)");
        require(o.cx - o.w / 2 >= -eps && o.cx + o.w / 2 <= 1.0 + eps &&
                    o.cy - o.h / 2 >= -eps && o.cy + o.h / 2 <= 1.0 + eps,
                strfmt("object at (%g, %g) extends outside the unit image", o.cx, o.cy));
    }

    switch (situation) {
        case Situation::NoObject:
            require(objects.empty(), "no-object scenes must not contain objects");
            break;
        case Situation::FarObjects: {
            require(objects.size() >= 1 && objects.size() <= 4,
                    "far scenes need 1 to 4 objects");
            for (const auto& o : objects) {
                const double area = o.w * o.h;
                require(area <= cfg.far_area_max + eps ||
                            (area >= cfg.border_lo - eps && area <= cfg.border_mid + eps),
                        strfmt("far object area %g outside the far range and border band", area));
            }
            break;
        }
        case Situation::CloseObject: {
            require(objects.size() == 1, "close scenes need exactly one object");
            const double area = objects[0].w * objects[0].h;
            require(area >= cfg.close_area_min - eps ||
                        (area >= cfg.border_mid - eps && area <= cfg.border_hi + eps),
                    strfmt("close object area %g outside the close range and border band", area));
            break;
        }
    }
}

namespace {

double background_level(const SceneSpec& spec, int x, int y, int size) {
    const int p = spec.texture_period;
    switch (spec.background) {
        case BackgroundKind::Plain:
            return spec.base_level;
        case BackgroundKind::Checker:
            return ((x / p + y / p) % 2 == 0) ? spec.base_level : spec.alt_level;
        case BackgroundKind::Stripes: {
            const int k = spec.orientation == 0 ? y : spec.orientation == 1 ? x : x + y;
            return (k / p) % 2 == 0 ? spec.base_level : spec.alt_level;
        }
        case BackgroundKind::Dots: {
            const double dx = x % p - p / 2.0;
            const double dy = y % p - p / 2.0;
            const double r = p / 3.0;
            return dx * dx + dy * dy <= r * r ? spec.alt_level : spec.base_level;
        }
        case BackgroundKind::Gradient: {
            const double t = spec.orientation == 0
                                 ? static_cast<double>(y) / (size - 1)
                                 : spec.orientation == 1
                                       ? static_cast<double>(x) / (size - 1)
                                       : static_cast<double>(x + y) / (2.0 * (size - 1));
            return spec.base_level + (spec.alt_level - spec.base_level) * t;
        }
    }
    throw InternalError("unhandled background kind");
}

int pixel_of(double coord, int size) {
    const long p = std::lround(coord * size);
    return static_cast<int>(std::clamp(p, 0L, static_cast<long>(size)));
}

Tensor box_blur(const Tensor& img, int radius) {
    const int h = img.dim(1), w = img.dim(2);
    Tensor out(img.shape());
    const double inv = 1.0 / ((2 * radius + 1) * (2 * radius + 1));
    for (int c = 0; c < img.dim(0); ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int dy = -radius; dy <= radius; ++dy)
                    for (int dx = -radius; dx <= radius; ++dx)
                        acc += img.at3(c, std::clamp(y + dy, 0, h - 1),
                                       std::clamp(x + dx, 0, w - 1));
                out.at3(c, y, x) = acc * inv;
            }
    return out;
}

}  // namespace

Tensor render(const SceneSpec& spec, Rng& rng, int image_size) {
    require(image_size >= 8, "image size too small to render");
    const int S = image_size;
    Tensor img({3, S, S});
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            const double level = background_level(spec, x, y, S);
            for (int c = 0; c < 3; ++c) img.at3(c, y, x) = level;
        }

    for (const auto& o : spec.objects) {
        require(o.cx - o.w / 2 >= -1e-12 && o.cx + o.w / 2 <= 1.0 + 1e-12 &&
                    o.cy - o.h / 2 >= -1e-12 && o.cy + o.h / 2 <= 1.0 + 1e-12,
                "object extends outside the unit image");
        require(o.color >= 0 && o.color <= 2, "object color index outside 0..2");
        const int x0 = pixel_of(o.cx - o.w / 2, S), x1 = pixel_of(o.cx + o.w / 2, S);
        const int y0 = pixel_of(o.cy - o.h / 2, S), y1 = pixel_of(o.cy + o.h / 2, S);
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x)
                for (int c = 0; c < 3; ++c) img.at3(c, y, x) = kObjectColors[o.color][c];
    }

    if (spec.blur_radius > 0) img = box_blur(img, spec.blur_radius);

    if (spec.noise_sigma > 0.0)
        for (std::size_t i = 0; i < img.numel(); ++i)
            img[i] = std::clamp(img[i] + rng.normal(0.0, spec.noise_sigma), 0.0, 1.0);

    return img;
}

namespace {

void draw_background(SceneSpec& spec, Rng& rng, bool texture_only) {
    const int kinds = texture_only ? kTextureClasses : kBackgroundKinds;
    const int offset = texture_only ? 1 : 0;
    spec.background = static_cast<BackgroundKind>(offset + static_cast<int>(rng.uniform_int(kinds)));
    spec.base_level = rng.uniform(0.15, 0.45);
    spec.alt_level = spec.base_level + rng.uniform(0.08, 0.20);
    spec.texture_period = 4 + static_cast<int>(rng.uniform_int(9));
    spec.orientation = static_cast<int>(rng.uniform_int(3));
}

SceneObject draw_object(double area, Rng& rng) {
    SceneObject o;
    const double ratio = rng.uniform(kAspectLo, kAspectHi);
    o.w = std::sqrt(area * ratio);
    o.h = std::sqrt(area / ratio);
    o.color = static_cast<int>(rng.uniform_int(3));
    const double mx = o.w / 2 + kPlacementMargin;
    const double my = o.h / 2 + kPlacementMargin;
    require_internal(mx < 1.0 - mx && my < 1.0 - my, "object too large to place");
    o.cx = rng.uniform(mx, 1.0 - mx);
    o.cy = rng.uniform(my, 1.0 - my);
    return o;
}

std::size_t draw_far_count(const std::vector<double>& weights, Rng& rng) {
    double sum = 0.0;
    for (double w : weights) sum += w;
    const double r = rng.uniform() * sum;
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        acc += weights[i];
        if (r < acc) return i + 1;
    }
    return weights.size();
}

}  // namespace

SceneSample gen_sample(Situation situation, Rng& rng, const GenConfig& config) {
    config.validate();
    SceneSpec spec;
    spec.situation = situation;
    spec.noise_sigma = config.noise_sigma;
    draw_background(spec, rng, false);

    switch (situation) {
        case Situation::NoObject:
            if (rng.bernoulli(0.5)) spec.blur_radius = config.search_blur_radius;
            break;
        case Situation::FarObjects: {
            const bool border = rng.bernoulli(config.border_fraction);
            const std::size_t count = border ? 1 : draw_far_count(config.far_count_weights, rng);
            for (std::size_t i = 0; i < count; ++i) {
                const double area = border
                                        ? rng.uniform(config.border_lo, config.border_mid)
                                        : rng.uniform(config.far_area_min, config.far_area_max);
                spec.objects.push_back(draw_object(area, rng));
            }
            break;
        }
        case Situation::CloseObject: {
            const bool border = rng.bernoulli(config.border_fraction);
            const double area = border ? rng.uniform(config.border_mid, config.border_hi)
                                       : rng.uniform(config.close_area_min, config.close_area_max);
            spec.objects.push_back(draw_object(area, rng));
            break;
        }
    }

    spec.validate(config);
    SceneSample sample;
    sample.spec = spec;
    sample.image = render(spec, rng, config.image_size);
    sample.situation = situation;
    for (const auto& o : spec.objects) sample.boxes.push_back(o.box());
    return sample;
}

std::vector<std::pair<double, double>> box_centers(const std::vector<BoxTarget>& boxes) {
    std::vector<std::pair<double, double>> centers;
    centers.reserve(boxes.size());
    for (const auto& b : boxes) centers.emplace_back(b.x, b.y);
    return centers;
}

Tensor grid_target(const std::vector<BoxTarget>& boxes, const GridSpec& grid) {
    return rough_targets(box_centers(boxes), grid);
}

std::vector<std::size_t> Dataset::class_counts() const {
    std::vector<std::size_t> counts(kSituationCount, 0);
    for (const auto& s : samples) ++counts[static_cast<std::size_t>(s.situation)];
    return counts;
}

std::vector<std::size_t> Dataset::train_class_counts() const {
    std::vector<std::size_t> counts(kSituationCount, 0);
    for (const auto& s : samples)
        if (!s.is_test) ++counts[static_cast<std::size_t>(s.situation)];
    return counts;
}

Dataset gen_dataset(const std::vector<std::size_t>& counts, std::uint64_t seed,
                    const GenConfig& config) {
    config.validate();
    require(counts.size() == kSituationCount,
            strfmt("expected %d class counts, got %zu", kSituationCount, counts.size()));
    require(counts[0] + counts[1] + counts[2] > 0, "all class counts are zero");

    Dataset ds;
    ds.seed = seed;
    ds.config_hash = config.hash();
    std::uint64_t index = 0;
    for (int cls = 0; cls < kSituationCount; ++cls) {
        const Situation situation = situation_from_index(cls);
        for (std::size_t i = 0; i < counts[static_cast<std::size_t>(cls)]; ++i, ++index) {
            Rng rng(derive_seed(seed, index));
            SceneSample s = gen_sample(situation, rng, config);
            ds.samples.push_back(
                {std::move(s.image), s.situation, std::move(s.boxes), split_is_test(i, 0.2)});
        }
    }
    return ds;
}

std::vector<LabelledImage> gen_proxy_dataset(int per_class, std::uint64_t seed,
                                             const GenConfig& config) {
    config.validate();
    require(per_class >= 1, "proxy dataset needs at least one sample per class");
    std::vector<LabelledImage> out;
    out.reserve(static_cast<std::size_t>(per_class) * kTextureClasses);
    std::uint64_t index = 0;
    for (int label = 0; label < kTextureClasses; ++label)
        for (int i = 0; i < per_class; ++i, ++index) {
            Rng rng(derive_seed(seed, index));
            SceneSpec spec;
            spec.noise_sigma = config.noise_sigma;
            draw_background(spec, rng, true);
            spec.background = static_cast<BackgroundKind>(1 + label);
            out.push_back({render(spec, rng, config.image_size), label});
        }
    return out;
}

void write_ppm(const std::string& path, const Tensor& image) {
    require(image.rank() == 3 && image.dim(0) == 3, "ppm output expects a 3xHxW image");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), "cannot open '" + path + "' for writing");
    const int h = image.dim(1), w = image.dim(2);
    f << "P6\n" << w << " " << h << "\n255\n";
    std::string bytes;
    bytes.reserve(static_cast<std::size_t>(3 * h * w));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const long v = std::lround(std::clamp(image.at3(c, y, x), 0.0, 1.0) * 255.0);
                bytes.push_back(static_cast<char>(v));
            }
    f.write(bytes.data(), static_cast<long>(bytes.size()));
    f.flush();
    require(f.good(), "write to '" + path + "' failed");
}

namespace {

int ppm_int(std::istream& in, const std::string& path) {
    int c = in.peek();
    while (c == '#' || std::isspace(c)) {
        if (c == '#')
            while (in.good() && in.get() != '\n') {}
        else
            in.get();
        c = in.peek();
    }
    int v = -1;
    in >> v;
    require(in.good() && v >= 0, "malformed ppm header in '" + path + "'");
    return v;
}

}  // namespace

Tensor read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "cannot open ppm '" + path + "'");
    std::string magic(2, '\0');
    f.read(magic.data(), 2);
    require(f.good() && magic == "P6", "'" + path + "' is not a binary ppm");
    const int w = ppm_int(f, path);
    const int h = ppm_int(f, path);
    const int maxval = ppm_int(f, path);
    require(maxval == 255, strfmt("unsupported ppm maxval %d", maxval));
    f.get();  // single whitespace after maxval
    std::string bytes(static_cast<std::size_t>(3 * w * h), '\0');
    f.read(bytes.data(), static_cast<long>(bytes.size()));
    require(f.gcount() == static_cast<long>(bytes.size()), "truncated ppm '" + path + "'");
    Tensor img({3, h, w});
    std::size_t k = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c, ++k)
                img.at3(c, y, x) = static_cast<unsigned char>(bytes[k]) / 255.0;
    return img;
}

namespace {

json box_json(const BoxTarget& b) {
    return json{{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}};
}

BoxTarget box_from_json(const json& j) {
    BoxTarget b{j.at("x").get<double>(), j.at("y").get<double>(), j.at("w").get<double>(),
                j.at("h").get<double>()};
    b.validate();
    return b;
}

}  // namespace

void write_dataset(const Dataset& dataset, const std::string& dir) {
    require(!dataset.samples.empty(), "refusing to write an empty dataset");
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");

    std::ofstream manifest(fs::path(dir) / "manifest.jsonl", std::ios::trunc);
    require(manifest.good(), "cannot open manifest in '" + dir + "'");

    const auto counts = dataset.class_counts();
    json header{{"type", "dataset"},
                {"seed", dataset.seed},
                {"config_hash", dataset.config_hash},
                {"counts", counts}};
    manifest << header.dump() << "\n";

    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const auto& s = dataset.samples[i];
        const std::string file = strfmt("images/img_%05zu.ppm", i);
        write_ppm((fs::path(dir) / file).string(), s.image);
        json boxes = json::array();
        for (const auto& b : s.boxes) boxes.push_back(box_json(b));
        json rec{{"type", "sample"},
                 {"file", file},
                 {"situation", static_cast<int>(s.situation)},
                 {"boxes", boxes},
                 {"split", s.is_test ? "test" : "train"},
                 {"seed", dataset.seed},
                 {"config_hash", dataset.config_hash}};
        manifest << rec.dump() << "\n";
    }
    manifest.flush();
    require(manifest.good(), "write to manifest in '" + dir + "' failed");
}

Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const auto manifest_path = (fs::path(dir) / "manifest.jsonl").string();
    std::ifstream manifest(manifest_path);
    require(manifest.good(), "cannot open '" + manifest_path + "'");

    Dataset ds;
    std::string line;
    bool saw_header = false;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw ValidationError("malformed manifest line: " + std::string(e.what()));
        }
        const std::string type = rec.at("type").get<std::string>();
        if (type == "dataset") {
            require(!saw_header, "duplicate dataset header in manifest");
            saw_header = true;
            ds.seed = rec.at("seed").get<std::uint64_t>();
            ds.config_hash = rec.at("config_hash").get<std::string>();
            continue;
        }
        require(type == "sample", "unknown manifest record type '" + type + "'");
        require(saw_header, "manifest sample record before dataset header");
        DatasetSample s;
        s.situation = situation_from_index(rec.at("situation").get<int>());
        for (const auto& bj : rec.at("boxes")) s.boxes.push_back(box_from_json(bj));
        const std::string split = rec.at("split").get<std::string>();
        require(split == "train" || split == "test", "sample split must be train or test");
        s.is_test = split == "test";
        s.image = read_ppm((fs::path(dir) / rec.at("file").get<std::string>()).string());
        ds.samples.push_back(std::move(s));
    }
    require(saw_header, "manifest has no dataset header");
    require(!ds.samples.empty(), "dataset in '" + dir + "' has no samples");
    return ds;
}

}  // namespace maod
