#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "mic/tensor.hpp"

namespace mic::gop {

struct CodecError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RawFrame {
    std::size_t h = 0, w = 0, c = 1;
    std::vector<std::uint8_t> pixels;  // row-major, channel-interleaved

    std::size_t size() const { return h * w * c; }
    std::uint8_t at(std::size_t y, std::size_t x, std::size_t ch) const {
        return pixels[(y * w + x) * c + ch];
    }
    bool operator==(const RawFrame&) const = default;
};

struct CodecConfig {
    std::size_t mb = 8;
    int search_range = 4;
};

// one (dy, dx) per macroblock, row-major block order
struct MotionField {
    std::vector<std::int8_t> dy, dx;
    bool operator==(const MotionField&) const = default;
};

struct ResidualPlane {
    std::vector<std::int16_t> values;  // current - prediction, in [-255, 255]
    bool operator==(const ResidualPlane&) const = default;
};

struct PFrame {
    MotionField motion;
    ResidualPlane residual;
    bool operator==(const PFrame&) const = default;
};

struct Gop {
    RawFrame i_frame;
    std::vector<PFrame> p_frames;
    CodecConfig config;

    std::size_t frame_count() const { return 1 + p_frames.size(); }
    bool operator==(const Gop&) const = default;
};

// Lossless encode: frame 0 becomes the I frame; each later frame is stored as
// exhaustive-SAD motion vectors against the reconstructed previous frame plus
// an exact integer residual.
Gop encode_gop(const std::vector<RawFrame>& frames, const CodecConfig& config = {});

// Reconstructs frame t (0 = I frame) by iterated motion compensation.
RawFrame decode_frame(const Gop& gop, std::size_t t);

// Reconstruction target for the apex frame; alias of decode_frame by contract.
RawFrame accumulate_to_apex(const Gop& gop, std::size_t apex_idx);

// Residual plane of P frame t scaled into [-1, 1], shape (c, h, w); with
// with_motion, the per-macroblock vectors are nearest-neighbor upsampled to
// pixel resolution and appended as two channels scaled by 1/search_range.
Tensor residual_input(const Gop& gop, std::size_t t, bool with_motion = false);

// RGOP container (little-endian, bit-exact round trip)
void write_gop(const Gop& gop, std::ostream& sink);
Gop parse_gop(std::istream& source);
void write_gop_file(const Gop& gop, const std::string& path);
Gop parse_gop_file(const std::string& path);

// RRAW raw sequence container for the encoder CLI
void write_rraw(const std::vector<RawFrame>& frames, std::ostream& sink);
std::vector<RawFrame> parse_rraw(std::istream& source);
void write_rraw_file(const std::vector<RawFrame>& frames, const std::string& path);
std::vector<RawFrame> parse_rraw_file(const std::string& path);

}  // namespace mic::gop
