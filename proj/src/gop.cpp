#include "mic/gop.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>

#include "mic/kernels.hpp"

namespace mic::gop {

namespace {

std::size_t clampi(std::ptrdiff_t v, std::size_t hi) {
    if (v < 0) return 0;
    if (v >= static_cast<std::ptrdiff_t>(hi)) return hi - 1;
    return static_cast<std::size_t>(v);
}

// prediction of frame t from the reconstructed previous frame
std::vector<std::uint8_t> predict(const RawFrame& prev, const MotionField& mv,
                                  const CodecConfig& cfg) {
    const std::size_t h = prev.h, w = prev.w, c = prev.c, mb = cfg.mb;
    const std::size_t bw = w / mb;
    std::vector<std::uint8_t> out(h * w * c);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t b = (y / mb) * bw + (x / mb);
            const std::size_t ry = clampi(static_cast<std::ptrdiff_t>(y) - mv.dy[b], h);
            const std::size_t rx = clampi(static_cast<std::ptrdiff_t>(x) - mv.dx[b], w);
            for (std::size_t ch = 0; ch < c; ++ch)
                out[(y * w + x) * c + ch] = prev.pixels[(ry * w + rx) * c + ch];
        }
    }
    return out;
}

}  // namespace

Gop encode_gop(const std::vector<RawFrame>& frames, const CodecConfig& config) {
    if (frames.empty()) throw CodecError("encode_gop: empty sequence");
    const RawFrame& f0 = frames[0];
    if (f0.h % config.mb != 0 || f0.w % config.mb != 0)
        throw CodecError("encode_gop: frame " + std::to_string(f0.h) + "x" +
                         std::to_string(f0.w) + " not divisible by mb=" +
                         std::to_string(config.mb));
    for (const auto& f : frames)
        if (f.h != f0.h || f.w != f0.w || f.c != f0.c)
            throw CodecError("encode_gop: frame dimensions differ across sequence");

    Gop gop;
    gop.i_frame = f0;
    gop.config = config;
    RawFrame recon = f0;
    for (std::size_t t = 1; t < frames.size(); ++t) {
        const RawFrame& cur = frames[t];
        std::vector<int> dy, dx;
        kernels::motion_search_frame(cur.pixels.data(), recon.pixels.data(), f0.h, f0.w,
                                     f0.c, config.mb, config.search_range, dy, dx);
        PFrame pf;
        pf.motion.dy.assign(dy.begin(), dy.end());
        pf.motion.dx.assign(dx.begin(), dx.end());
        const auto pred = predict(recon, pf.motion, config);
        pf.residual.values.resize(cur.size());
        for (std::size_t i = 0; i < cur.size(); ++i)
            pf.residual.values[i] = static_cast<std::int16_t>(
                static_cast<int>(cur.pixels[i]) - static_cast<int>(pred[i]));
        // reconstruction is exact, so recon can track cur directly
        recon.pixels = cur.pixels;
        gop.p_frames.push_back(std::move(pf));
    }
    return gop;
}

RawFrame decode_frame(const Gop& gop, std::size_t t) {
    if (t >= gop.frame_count())
        throw CodecError("decode_frame: index " + std::to_string(t) + " out of range (" +
                         std::to_string(gop.frame_count()) + " frames)");
    RawFrame recon = gop.i_frame;
    for (std::size_t s = 1; s <= t; ++s) {
        const PFrame& pf = gop.p_frames[s - 1];
        const auto pred = predict(recon, pf.motion, gop.config);
        for (std::size_t i = 0; i < recon.pixels.size(); ++i) {
            const int v = static_cast<int>(pred[i]) + pf.residual.values[i];
            if (v < 0 || v > 255)
                throw CodecError("decode_frame: pixel out of range at frame " +
                                 std::to_string(s));
            recon.pixels[i] = static_cast<std::uint8_t>(v);
        }
    }
    return recon;
}

RawFrame accumulate_to_apex(const Gop& gop, std::size_t apex_idx) {
    if (apex_idx >= gop.frame_count())
        throw CodecError("accumulate_to_apex: index " + std::to_string(apex_idx) +
                         " out of range");
    return decode_frame(gop, apex_idx);
}

Tensor residual_input(const Gop& gop, std::size_t t, bool with_motion) {
    if (t == 0) throw CodecError("residual_input: frame 0 is the I frame, no residual");
    if (t >= gop.frame_count())
        throw CodecError("residual_input: index " + std::to_string(t) + " out of range");
    const PFrame& pf = gop.p_frames[t - 1];
    const std::size_t h = gop.i_frame.h, w = gop.i_frame.w, c = gop.i_frame.c;
    const std::size_t mb = gop.config.mb, bw = w / mb;
    const std::size_t channels = c + (with_motion ? 2 : 0);
    Tensor out = Tensor::zeros({channels, h, w});
    auto& d = *out.data;
    // residual planes first, channel-planar
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t ch = 0; ch < c; ++ch)
                d[ch * h * w + y * w + x] =
                    static_cast<double>(pf.residual.values[(y * w + x) * c + ch]) / 255.0;
    if (with_motion) {
        const double inv = 1.0 / static_cast<double>(gop.config.search_range);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const std::size_t b = (y / mb) * bw + (x / mb);
                d[c * h * w + y * w + x] = pf.motion.dy[b] * inv;
                d[(c + 1) * h * w + y * w + x] = pf.motion.dx[b] * inv;
            }
    }
    return out;
}

// ---- binary containers ----

namespace {

void put_u8(std::ostream& o, std::uint8_t v) { o.put(static_cast<char>(v)); }
void put_u16(std::ostream& o, std::uint16_t v) {
    o.put(static_cast<char>(v & 0xff));
    o.put(static_cast<char>(v >> 8));
}
void put_i16(std::ostream& o, std::int16_t v) { put_u16(o, static_cast<std::uint16_t>(v)); }

struct Reader {
    std::istream& in;
    std::size_t offset = 0;

    std::uint8_t u8(const char* what) {
        const int ch = in.get();
        if (ch == EOF)
            throw CodecError(std::string("truncated stream reading ") + what +
                             " at byte offset " + std::to_string(offset));
        ++offset;
        return static_cast<std::uint8_t>(ch);
    }
    std::uint16_t u16(const char* what) {
        const std::uint16_t lo = u8(what), hi = u8(what);
        return static_cast<std::uint16_t>(lo | (hi << 8));
    }
    std::int16_t i16(const char* what) { return static_cast<std::int16_t>(u16(what)); }
    void bytes(std::uint8_t* dst, std::size_t n, const char* what) {
        in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n)
            throw CodecError(std::string("truncated stream reading ") + what +
                             " at byte offset " +
                             std::to_string(offset + static_cast<std::size_t>(in.gcount())));
        offset += n;
    }
    void magic(const char* expect) {
        std::uint8_t got[4];
        bytes(got, 4, "magic");
        for (int i = 0; i < 4; ++i)
            if (got[i] != static_cast<std::uint8_t>(expect[i]))
                throw CodecError(std::string("bad magic (expected ") + expect +
                                 ") at byte offset 0");
    }
};

}  // namespace

void write_gop(const Gop& gop, std::ostream& sink) {
    const auto& f = gop.i_frame;
    sink.write("RGOP", 4);
    put_u8(sink, 1);
    put_u16(sink, static_cast<std::uint16_t>(f.h));
    put_u16(sink, static_cast<std::uint16_t>(f.w));
    put_u8(sink, static_cast<std::uint8_t>(f.c));
    put_u16(sink, static_cast<std::uint16_t>(gop.frame_count()));
    put_u8(sink, static_cast<std::uint8_t>(gop.config.mb));
    put_u8(sink, static_cast<std::uint8_t>(gop.config.search_range));
    sink.write(reinterpret_cast<const char*>(f.pixels.data()),
               static_cast<std::streamsize>(f.pixels.size()));
    for (const auto& pf : gop.p_frames) {
        for (std::size_t b = 0; b < pf.motion.dy.size(); ++b) {
            put_u8(sink, static_cast<std::uint8_t>(pf.motion.dy[b]));
            put_u8(sink, static_cast<std::uint8_t>(pf.motion.dx[b]));
        }
        for (std::int16_t v : pf.residual.values) put_i16(sink, v);
    }
    if (!sink) throw CodecError("write_gop: sink write failed");
}

Gop parse_gop(std::istream& source) {
    Reader r{source};
    r.magic("RGOP");
    const std::uint8_t version = r.u8("version");
    if (version != 1)
        throw CodecError("unsupported RGOP version " + std::to_string(version) +
                         " at byte offset 4");
    Gop gop;
    gop.i_frame.h = r.u16("height");
    gop.i_frame.w = r.u16("width");
    gop.i_frame.c = r.u8("channels");
    const std::uint16_t frames = r.u16("frame_count");
    gop.config.mb = r.u8("mb");
    gop.config.search_range = r.u8("search_range");
    if (gop.i_frame.h == 0 || gop.i_frame.w == 0 ||
        (gop.i_frame.c != 1 && gop.i_frame.c != 3))
        throw CodecError("invalid header dimensions at byte offset 5");
    if (gop.config.mb == 0 || gop.i_frame.h % gop.config.mb != 0 ||
        gop.i_frame.w % gop.config.mb != 0)
        throw CodecError("header mb does not divide frame size at byte offset 12");
    if (frames == 0) throw CodecError("frame_count must be >= 1 at byte offset 10");
    const std::size_t npix = gop.i_frame.h * gop.i_frame.w * gop.i_frame.c;
    gop.i_frame.pixels.resize(npix);
    r.bytes(gop.i_frame.pixels.data(), npix, "I frame");
    const std::size_t nblocks = (gop.i_frame.h / gop.config.mb) * (gop.i_frame.w / gop.config.mb);
    for (std::uint16_t t = 1; t < frames; ++t) {
        PFrame pf;
        pf.motion.dy.resize(nblocks);
        pf.motion.dx.resize(nblocks);
        for (std::size_t b = 0; b < nblocks; ++b) {
            const std::size_t at = r.offset;
            pf.motion.dy[b] = static_cast<std::int8_t>(r.u8("motion vector"));
            pf.motion.dx[b] = static_cast<std::int8_t>(r.u8("motion vector"));
            if (std::abs(pf.motion.dy[b]) > gop.config.search_range ||
                std::abs(pf.motion.dx[b]) > gop.config.search_range)
                throw CodecError("motion vector exceeds search_range at byte offset " +
                                 std::to_string(at));
        }
        pf.residual.values.resize(npix);
        for (std::size_t i = 0; i < npix; ++i) {
            const std::size_t at = r.offset;
            pf.residual.values[i] = r.i16("residual");
            if (pf.residual.values[i] < -255 || pf.residual.values[i] > 255)
                throw CodecError("residual out of range at byte offset " + std::to_string(at));
        }
        gop.p_frames.push_back(std::move(pf));
    }
    return gop;
}

void write_rraw(const std::vector<RawFrame>& frames, std::ostream& sink) {
    if (frames.empty()) throw CodecError("write_rraw: empty sequence");
    const auto& f = frames[0];
    sink.write("RRAW", 4);
    put_u8(sink, 1);
    put_u16(sink, static_cast<std::uint16_t>(f.h));
    put_u16(sink, static_cast<std::uint16_t>(f.w));
    put_u8(sink, static_cast<std::uint8_t>(f.c));
    put_u16(sink, static_cast<std::uint16_t>(frames.size()));
    for (const auto& fr : frames) {
        if (fr.h != f.h || fr.w != f.w || fr.c != f.c)
            throw CodecError("write_rraw: frame dimensions differ");
        sink.write(reinterpret_cast<const char*>(fr.pixels.data()),
                   static_cast<std::streamsize>(fr.pixels.size()));
    }
    if (!sink) throw CodecError("write_rraw: sink write failed");
}

std::vector<RawFrame> parse_rraw(std::istream& source) {
    Reader r{source};
    r.magic("RRAW");
    const std::uint8_t version = r.u8("version");
    if (version != 1)
        throw CodecError("unsupported RRAW version " + std::to_string(version) +
                         " at byte offset 4");
    RawFrame proto;
    proto.h = r.u16("height");
    proto.w = r.u16("width");
    proto.c = r.u8("channels");
    const std::uint16_t n = r.u16("frame_count");
    if (proto.h == 0 || proto.w == 0 || (proto.c != 1 && proto.c != 3) || n == 0)
        throw CodecError("invalid RRAW header at byte offset 5");
    std::vector<RawFrame> frames;
    for (std::uint16_t t = 0; t < n; ++t) {
        RawFrame f = proto;
        f.pixels.resize(f.size());
        r.bytes(f.pixels.data(), f.size(), "frame pixels");
        frames.push_back(std::move(f));
    }
    return frames;
}

namespace {
template <class WriteFn>
void to_file(const std::string& path, WriteFn fn) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CodecError("cannot open for writing: " + path);
    fn(out);
}
template <class ParseFn>
auto from_file(const std::string& path, ParseFn fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CodecError("cannot open for reading: " + path);
    return fn(in);
}
}  // namespace

void write_gop_file(const Gop& gop, const std::string& path) {
    to_file(path, [&](std::ostream& o) { write_gop(gop, o); });
}
Gop parse_gop_file(const std::string& path) {
    return from_file(path, [](std::istream& i) { return parse_gop(i); });
}
void write_rraw_file(const std::vector<RawFrame>& frames, const std::string& path) {
    to_file(path, [&](std::ostream& o) { write_rraw(frames, o); });
}
std::vector<RawFrame> parse_rraw_file(const std::string& path) {
    return from_file(path, [](std::istream& i) { return parse_rraw(i); });
}

}  // namespace mic::gop
