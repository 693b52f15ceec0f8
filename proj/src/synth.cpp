#include "mic/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace mic::synth {

namespace fs = std::filesystem;

std::string profile_name(Profile p) { return p == Profile::ramp ? "ramp" : "peak"; }

Profile profile_from_name(const std::string& name) {
    if (name == "ramp") return Profile::ramp;
    if (name == "peak") return Profile::peak;
    throw SynthError("unknown profile: " + name);
}

double intensity_at(Profile p, std::size_t t, std::size_t length) {
    const double x = static_cast<double>(t) / static_cast<double>(length - 1);
    if (p == Profile::ramp) return x;
    return 1.0 - std::abs(2.0 * x - 1.0);
}

namespace {

struct Blob {
    double cy, cx, sigma, amp;
};

std::vector<Blob> subject_blobs(const SubjectSpec& s, std::size_t h, std::size_t w) {
    Rng rng(s.base_pattern_seed * 0x9e3779b9ull + static_cast<std::uint64_t>(s.identity_id) * 0x85ebca6bull + 1);
    std::vector<Blob> blobs(s.blobs);
    for (auto& b : blobs) {
        b.cy = rng.uniform(4.0, static_cast<double>(h) - 4.0);
        b.cx = rng.uniform(4.0, static_cast<double>(w) - 4.0);
        b.sigma = rng.uniform(2.0, 5.0);
        b.amp = rng.uniform(0.5, 1.0);
    }
    return blobs;
}

double blob_field(const std::vector<Blob>& blobs, double y, double x) {
    double v = 0.0;
    for (const auto& b : blobs) {
        const double dy = y - b.cy, dx = x - b.cx;
        v += b.amp * std::exp(-(dy * dy + dx * dx) / (2.0 * b.sigma * b.sigma));
    }
    return v;
}

// base image as doubles normalized to [32, 223]
std::vector<double> base_field(const SubjectSpec& s, std::size_t h, std::size_t w) {
    const auto blobs = subject_blobs(s, h, w);
    std::vector<double> img(h * w);
    double lo = 1e300, hi = -1e300;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double v = blob_field(blobs, static_cast<double>(y), static_cast<double>(x));
            img[y * w + x] = v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    const double span = hi > lo ? hi - lo : 1.0;
    for (auto& v : img) v = 32.0 + 191.0 * (v - lo) / span;
    return img;
}

double sample_bilinear(const std::vector<double>& img, std::size_t h, std::size_t w,
                       double y, double x) {
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    const std::size_t y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
    const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
    const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
    return (1 - fy) * ((1 - fx) * img[y0 * w + x0] + fx * img[y0 * w + x1]) +
           fy * ((1 - fx) * img[y1 * w + x0] + fx * img[y1 * w + x1]);
}

}  // namespace

gop::RawFrame render_base_image(const SubjectSpec& subject, std::size_t h, std::size_t w,
                                std::size_t c) {
    const auto img = base_field(subject, h, w);
    gop::RawFrame f;
    f.h = h;
    f.w = w;
    f.c = c;
    f.pixels.resize(h * w * c);
    for (std::size_t i = 0; i < h * w; ++i) {
        const auto v = static_cast<std::uint8_t>(std::lround(img[i]));
        for (std::size_t ch = 0; ch < c; ++ch) f.pixels[i * c + ch] = v;
    }
    return f;
}

SequenceSample render_sequence(const SubjectSpec& subject, const ExpressionTemplate& tmpl,
                               Profile profile, std::size_t length, std::uint64_t noise_seed,
                               std::size_t h, std::size_t w, std::size_t c) {
    if (length < 2) throw SynthError("render_sequence: length must be >= 2");
    if (tmpl.class_id < 0 || tmpl.class_id >= tmpl.n_classes)
        throw SynthError("render_sequence: class_id out of range");
    const auto base = base_field(subject, h, w);

    // class-specific warp: bump centered on a ring position, pushing along
    // the class direction
    const double angle = 2.0 * M_PI * tmpl.class_id / tmpl.n_classes;
    const double ring_r = 0.3 * std::min(h, w);
    const double by = h / 2.0 + ring_r * std::sin(angle);
    const double bx = w / 2.0 + ring_r * std::cos(angle);
    const double uy = std::sin(angle), ux = std::cos(angle);
    const double s2 = 2.0 * tmpl.region_sigma * tmpl.region_sigma;

    SequenceSample seq;
    seq.expression_label = tmpl.class_id;
    seq.identity_label = subject.identity_id;
    seq.profile = profile;
    seq.apex_idx = profile == Profile::ramp ? length - 1 : length / 2;

    Rng noise_rng(noise_seed);
    for (std::size_t t = 0; t < length; ++t) {
        const double s = intensity_at(profile, t, length);
        gop::RawFrame f;
        f.h = h;
        f.w = w;
        f.c = c;
        f.pixels.resize(h * w * c);
        Rng frame_noise = noise_rng.fork(t);
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const double dy = static_cast<double>(y) - by;
                const double dx = static_cast<double>(x) - bx;
                const double bump = std::exp(-(dy * dy + dx * dx) / s2);
                const double shift = s * tmpl.max_shift * bump;
                const double v = sample_bilinear(base, h, w,
                                                 static_cast<double>(y) - shift * uy,
                                                 static_cast<double>(x) - shift * ux);
                const int noise = static_cast<int>(frame_noise.uniform_index(5)) - 2;
                const int pix = std::clamp(static_cast<int>(std::lround(v)) + noise, 0, 255);
                for (std::size_t ch = 0; ch < c; ++ch)
                    f.pixels[(y * w + x) * c + ch] = static_cast<std::uint8_t>(pix);
            }
        }
        seq.frames.push_back(std::move(f));
    }
    return seq;
}

DatasetManifest generate_dataset(const DatasetConfig& cfg, const std::string& out_dir) {
    if (cfg.n_identities < 2) throw SynthError("generate_dataset: need >= 2 identities");
    fs::create_directories(fs::path(out_dir) / "gops");

    Rng split_rng(cfg.split_seed);
    auto order = split_rng.permutation(static_cast<std::size_t>(cfg.n_identities));
    const auto n_train = static_cast<std::size_t>(
        std::lround(cfg.train_fraction * cfg.n_identities));
    std::vector<bool> is_train(cfg.n_identities, false);
    for (std::size_t i = 0; i < n_train; ++i) is_train[order[i]] = true;

    DatasetManifest manifest;
    for (int id = 0; id < cfg.n_identities; ++id) {
        SubjectSpec subject;
        subject.identity_id = id;
        subject.base_pattern_seed = cfg.split_seed;
        for (int cls = 0; cls < cfg.n_classes; ++cls) {
            ExpressionTemplate tmpl;
            tmpl.class_id = cls;
            tmpl.n_classes = cfg.n_classes;
            for (int rep = 0; rep < cfg.sequences_per_cell; ++rep) {
                const std::uint64_t noise_seed =
                    cfg.split_seed ^ (static_cast<std::uint64_t>(id) << 24) ^
                    (static_cast<std::uint64_t>(cls) << 12) ^
                    (static_cast<std::uint64_t>(rep) + 1);
                auto seq = render_sequence(subject, tmpl, cfg.profile, cfg.length,
                                           noise_seed, cfg.h, cfg.w, cfg.c);
                auto g = gop::encode_gop(seq.frames, cfg.codec);
                std::ostringstream name;
                name << "gops/id" << id << "_cls" << cls << "_rep" << rep << ".rgop";
                try {
                    gop::write_gop_file(g, (fs::path(out_dir) / name.str()).string());
                } catch (const gop::CodecError& e) {
                    throw SynthError(std::string("generate_dataset: ") + e.what());
                }
                ManifestEntry entry;
                entry.path = name.str();
                entry.expression_label = cls;
                entry.identity_label = id;
                entry.apex_idx = seq.apex_idx;
                entry.profile = profile_name(cfg.profile);
                (is_train[id] ? manifest.train : manifest.test).push_back(entry);
            }
        }
    }
    write_manifest(manifest.train, (fs::path(out_dir) / "train.csv").string());
    write_manifest(manifest.test, (fs::path(out_dir) / "test.csv").string());
    return manifest;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw SynthError("cannot open manifest for writing: " + path);
    out << "path,expression_label,identity_label,apex_idx,profile\n";
    for (const auto& e : entries)
        out << e.path << ',' << e.expression_label << ',' << e.identity_label << ','
            << e.apex_idx << ',' << e.profile << '\n';
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SynthError("cannot open manifest: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "path,expression_label,identity_label,apex_idx,profile")
        throw SynthError("bad manifest header in " + path);
    std::vector<ManifestEntry> entries;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        ManifestEntry e;
        std::string field;
        auto next = [&](const char* what) {
            if (!std::getline(row, field, ','))
                throw SynthError(std::string("manifest row missing ") + what + ": " + line);
            return field;
        };
        e.path = next("path");
        e.expression_label = std::stoi(next("expression_label"));
        e.identity_label = std::stoi(next("identity_label"));
        e.apex_idx = static_cast<std::size_t>(std::stoul(next("apex_idx")));
        e.profile = next("profile");
        entries.push_back(std::move(e));
    }
    return entries;
}

}  // namespace mic::synth
