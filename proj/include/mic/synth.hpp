#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mic/gop.hpp"
#include "mic/rng.hpp"

namespace mic::synth {

struct SynthError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Profile { ramp, peak };  // apex at the end vs mid-sequence
std::string profile_name(Profile p);
Profile profile_from_name(const std::string& name);

// Identity = a fixed arrangement of Gaussian blobs; same (id, seed) renders a
// bit-identical base image.
struct SubjectSpec {
    int identity_id = 0;
    std::uint64_t base_pattern_seed = 0;
    std::size_t blobs = 6;
};

// Expression class = an analytic displacement field: a localized bump on a
// class-specific ring position, pushing pixels along direction 2*pi*k/C.
struct ExpressionTemplate {
    int class_id = 0;
    int n_classes = 7;
    double max_shift = 5.0;    // pixels at full intensity
    double region_sigma = 7.0;
};

struct SequenceSample {
    std::vector<gop::RawFrame> frames;
    int expression_label = 0;
    int identity_label = 0;
    std::size_t apex_idx = 0;
    Profile profile = Profile::ramp;
};

// intensity schedule s(t)
double intensity_at(Profile p, std::size_t t, std::size_t length);

gop::RawFrame render_base_image(const SubjectSpec& subject, std::size_t h, std::size_t w,
                                std::size_t c);

// frame t = base image warped by the class field at intensity s(t), plus
// seeded pixel noise of amplitude <= 2 gray levels
SequenceSample render_sequence(const SubjectSpec& subject, const ExpressionTemplate& tmpl,
                               Profile profile, std::size_t length, std::uint64_t noise_seed,
                               std::size_t h = 32, std::size_t w = 32, std::size_t c = 1);

struct DatasetConfig {
    int n_identities = 20;
    int n_classes = 7;
    int sequences_per_cell = 4;
    Profile profile = Profile::ramp;
    std::uint64_t split_seed = 0;
    std::size_t length = 16;
    std::size_t h = 32, w = 32, c = 1;
    double train_fraction = 0.8;  // by identity
    gop::CodecConfig codec;
};

struct ManifestEntry {
    std::string path;  // relative to the manifest's directory
    int expression_label = 0;
    int identity_label = 0;
    std::size_t apex_idx = 0;
    std::string profile;
};

struct DatasetManifest {
    std::vector<ManifestEntry> train, test;
};

// Renders and encodes every (identity, class) cell, writes RGOP files under
// out_dir/gops and identity-disjoint train.csv / test.csv manifests.
DatasetManifest generate_dataset(const DatasetConfig& config, const std::string& out_dir);

void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path);
std::vector<ManifestEntry> load_manifest(const std::string& path);

}  // namespace mic::synth
