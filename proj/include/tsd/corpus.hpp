#pragma once

// Procedural talking-face corpus. Faces are flat-shaded region sprites
// (background / face ellipse / eyes / mouth) rendered at integer head
// offsets, which makes the ground-truth motion fields exact under bilinear
// warping: every pixel of frame t+1 can name a source pixel of frame t with
// identical color.

#include <array>
#include <filesystem>
#include <optional>

#include <json.hpp>

#include "tsd/rng.hpp"
#include "tsd/tensor.hpp"

namespace tsd {

constexpr int kVisemeCount = 8;  // silence, A, E, I, O, U, M/closed, F/teeth

struct IdentitySpec {
    uint64_t seed = 0;
    double hue = 0.0;           // [0,1)
    double skin_tone = 0.0;     // [0.45,0.9]
    double eye_spacing = 0.0;   // [0.25,0.45] fraction of width
    double face_rx = 0.0;       // [0.28,0.38] fraction of width
    double face_ry = 0.0;       // [0.34,0.46] fraction of height
    double mouth_y = 0.0;       // [0.62,0.72] fraction of height
    double motion_phase = 0.0;  // [0,2pi)
    double motion_period = 0.0; // [10,20] frames

    bool operator==(const IdentitySpec&) const = default;
};

inline IdentitySpec generate_identity(uint64_t seed) {
    Rng r(seed ^ 0x1D2E3F4A5B6C7D8Eull);
    r.next_u64();
    IdentitySpec id;
    id.seed = seed;
    id.hue = r.uniform();
    id.skin_tone = r.uniform(0.45, 0.9);
    id.eye_spacing = r.uniform(0.25, 0.45);
    id.face_rx = r.uniform(0.28, 0.38);
    id.face_ry = r.uniform(0.34, 0.46);
    id.mouth_y = r.uniform(0.62, 0.72);
    id.motion_phase = r.uniform(0.0, 2.0 * 3.14159265358979323846);
    id.motion_period = r.uniform(10.0, 20.0);
    return id;
}

struct VisemeTrack {
    std::vector<int> tokens;  // one per frame, in [0, kVisemeCount)
    bool operator==(const VisemeTrack&) const = default;
};

inline VisemeTrack random_viseme_track(uint64_t viseme_seed, int T) {
    Rng r(viseme_seed ^ 0x5A5A5A5A12345678ull);
    r.next_u64();
    VisemeTrack track;
    while (static_cast<int>(track.tokens.size()) < T) {
        int dur = 2 + r.uniform_int(4);
        int tok = r.uniform_int(kVisemeCount);
        for (int d = 0; d < dur && static_cast<int>(track.tokens.size()) < T; ++d)
            track.tokens.push_back(tok);
    }
    return track;
}

// Mouth half extents in pixels at 64x64, scaled linearly with resolution.
inline void mouth_extents(int viseme, double scale, double& hw, double& hh) {
    static const double table[kVisemeCount][2] = {
        {6, 1},  // silence / closed
        {5, 5},  // A
        {7, 3},  // E
        {3, 2},  // I
        {4, 4},  // O
        {3, 3},  // U
        {5, 1},  // M
        {7, 2},  // F
    };
    hw = std::max(1.0, table[viseme][0] * scale);
    hh = std::max(1.0, table[viseme][1] * scale);
}

enum Region : uint8_t { kBg = 0, kFace = 1, kEye = 2, kMouth = 3 };

struct RegionColors {
    double bg[3], face[3], eye[3], mouth[3];
};

inline RegionColors identity_colors(const IdentitySpec& id) {
    auto clamp01d = [](double v) { return std::min(1.0, std::max(0.0, v)); };
    RegionColors c{};
    c.bg[0] = 0.85; c.bg[1] = 0.87; c.bg[2] = 0.90;
    double two_pi_h = 2.0 * 3.14159265358979323846 * id.hue;
    c.face[0] = clamp01d(id.skin_tone * (0.78 + 0.22 * std::cos(two_pi_h)));
    c.face[1] = clamp01d(id.skin_tone * (0.58 + 0.18 * std::cos(two_pi_h + 2.0)));
    c.face[2] = clamp01d(id.skin_tone * (0.46 + 0.18 * std::cos(two_pi_h + 4.0)));
    c.eye[0] = 0.08; c.eye[1] = 0.08; c.eye[2] = 0.10;
    c.mouth[0] = clamp01d(0.42 + 0.12 * std::cos(two_pi_h + 1.0));
    c.mouth[1] = 0.10;
    c.mouth[2] = 0.12;
    return c;
}

struct Clip {
    IdentitySpec identity;
    std::vector<Tensor> frames;           // T x {3,H,W}, values in [0,1]
    VisemeTrack visemes;
    std::vector<Tensor> flows;            // (T-1) x {2,H,W}; ch0 dx, ch1 dy
    int fps = 25;
    int H = 0, W = 0;

    // renderer side-channels used by tests and training
    std::vector<std::vector<uint8_t>> regions;    // per frame, H*W labels
    std::vector<std::array<int, 4>> mouth_bbox;   // per frame {x0,y0,x1,y1} inclusive
    std::vector<std::array<int, 2>> offsets;      // per frame integer head offset

    int T() const { return static_cast<int>(frames.size()); }
    double duration_s() const { return static_cast<double>(T()) / fps; }
};

struct RenderOptions {
    double motion_amplitude = 2.0;       // pixels, <= 2
    std::optional<VisemeTrack> track{};  // overrides the seeded random track
};

namespace detail {

struct FrameGeom {
    int H, W, ox, oy;
    const IdentitySpec* id;
    double mhw, mhh;  // mouth half extents for this frame's viseme

    Region region_at(int y, int x) const {
        double cx = x - ox, cy = y - oy;
        double fx = W * 0.5, fy = H * 0.48;
        double rx = id->face_rx * W, ry = id->face_ry * H;
        double dx = (cx - fx) / rx, dy = (cy - fy) / ry;
        if (dx * dx + dy * dy > 1.0) return kBg;
        double my = id->mouth_y * H;
        double mdx = (cx - fx) / mhw, mdy = (cy - my) / mhh;
        if (mdx * mdx + mdy * mdy <= 1.0) return kMouth;
        double er = std::max(2.0, H / 16.0);
        double ey = H * 0.38;
        double exl = fx - id->eye_spacing * W * 0.5;
        double exr = fx + id->eye_spacing * W * 0.5;
        double dl = (cx - exl) * (cx - exl) + (cy - ey) * (cy - ey);
        double dr = (cx - exr) * (cx - exr) + (cy - ey) * (cy - ey);
        if (dl <= er * er || dr <= er * er) return kEye;
        return kFace;
    }

    // A guaranteed-interior pixel of each region (frame coordinates).
    std::array<int, 2> anchor(Region r) const {
        switch (r) {
            case kBg: return {0, 0};                                             // {y,x}
            case kFace: return {static_cast<int>(H * 0.52) + oy, W / 2 + ox};
            case kEye:
                return {static_cast<int>(H * 0.38) + oy,
                        static_cast<int>(W * 0.5 - id->eye_spacing * W * 0.5) + ox};
            case kMouth: return {static_cast<int>(id->mouth_y * H) + oy, W / 2 + ox};
        }
        return {0, 0};
    }
};

}  // namespace detail

// Deterministic renderer. Mouth openness/shape per frame is a function of the
// viseme token; the head follows a slow sinusoidal translation rounded to
// integer pixels so ground-truth flows reproduce frames exactly.
inline Clip render_clip(const IdentitySpec& id, uint64_t viseme_seed, int T, int H, int W,
                        const RenderOptions& opts = {}) {
    check(T >= 2, "render_clip: T must be >= 2, got " + std::to_string(T));
    check((H == 64 || H == 128) && (W == 64 || W == 128) && H == W,
          "render_clip: unsupported resolution " + std::to_string(H) + "x" + std::to_string(W));

    Clip clip;
    clip.identity = id;
    clip.H = H;
    clip.W = W;
    if (opts.track.has_value()) {
        check(static_cast<int>(opts.track->tokens.size()) == T,
              "render_clip: forced viseme track length does not match T");
        clip.visemes = *opts.track;
    } else {
        clip.visemes = random_viseme_track(viseme_seed, T);
    }
    RegionColors colors = identity_colors(id);
    const double* palette[4] = {colors.bg, colors.face, colors.eye, colors.mouth};
    double scale = H / 64.0;

    std::vector<detail::FrameGeom> geoms(T);
    for (int t = 0; t < T; ++t) {
        double w = 2.0 * 3.14159265358979323846 * t / id.motion_period;
        int ox = static_cast<int>(std::lround(opts.motion_amplitude * std::sin(w + id.motion_phase)));
        int oy = static_cast<int>(
            std::lround(0.6 * opts.motion_amplitude * std::cos(w + 1.7 * id.motion_phase)));
        detail::FrameGeom g{H, W, ox, oy, &id, 0.0, 0.0};
        mouth_extents(clip.visemes.tokens[t], scale, g.mhw, g.mhh);
        geoms[t] = g;
        clip.offsets.push_back({oy, ox});

        std::vector<uint8_t> region(static_cast<size_t>(H) * W);
        Tensor frame({3, H, W});
        int mx0 = W, my0 = H, mx1 = -1, my1 = -1;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                Region r = g.region_at(y, x);
                region[static_cast<size_t>(y) * W + x] = r;
                for (int c = 0; c < 3; ++c)
                    frame.data()[static_cast<size_t>(c) * H * W + static_cast<size_t>(y) * W + x] =
                        palette[r][c];
                if (r == kMouth) {
                    mx0 = std::min(mx0, x);
                    my0 = std::min(my0, y);
                    mx1 = std::max(mx1, x);
                    my1 = std::max(my1, y);
                }
            }
        clip.frames.push_back(std::move(frame));
        clip.regions.push_back(std::move(region));
        clip.mouth_bbox.push_back({mx0, my0, mx1, my1});
    }

    // Exact backward flows: each pixel of frame t+1 points at a pixel of
    // frame t carrying the same region color.
    for (int t = 0; t + 1 < T; ++t) {
        const auto& gt = geoms[t];
        const auto& gn = geoms[t + 1];
        int dx = gt.ox - gn.ox;
        int dy = gt.oy - gn.oy;
        Tensor flow({2, H, W});
        const auto& reg_t = clip.regions[static_cast<size_t>(t)];
        const auto& reg_n = clip.regions[static_cast<size_t>(t) + 1];
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                size_t i = static_cast<size_t>(y) * W + x;
                Region r = static_cast<Region>(reg_n[i]);
                int sx = x + dx, sy = y + dy;
                double fdx, fdy;
                if (sx >= 0 && sx < W && sy >= 0 && sy < H &&
                    reg_t[static_cast<size_t>(sy) * W + sx] == r) {
                    fdx = dx;
                    fdy = dy;
                } else {
                    auto a = gt.anchor(r);
                    fdx = a[1] - x;
                    fdy = a[0] - y;
                }
                flow.data()[i] = fdx;
                flow.data()[static_cast<size_t>(H) * W + i] = fdy;
            }
        clip.flows.push_back(std::move(flow));
    }
    return clip;
}

// ------------------------------------------------------------- clip files

// Clip file: magic "TSDC", u32 version, u32 T/H/W/C, then T*H*W*C f32 frames
// (HWC interleaved per frame), then (T-1)*H*W*2 f32 flows.
inline void write_clip(const Clip& clip, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    check(os.good(), "write_clip: cannot open " + path);
    os.write("TSDC", 4);
    write_u32(os, 1);
    write_u32(os, static_cast<uint32_t>(clip.T()));
    write_u32(os, static_cast<uint32_t>(clip.H));
    write_u32(os, static_cast<uint32_t>(clip.W));
    write_u32(os, 3);
    int H = clip.H, W = clip.W;
    std::vector<double> hwc(static_cast<size_t>(H) * W * 3);
    for (const Tensor& f : clip.frames) {
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < 3; ++c)
                    hwc[(static_cast<size_t>(y) * W + x) * 3 + c] =
                        f.data()[static_cast<size_t>(c) * H * W + static_cast<size_t>(y) * W + x];
        write_f32_block(os, hwc);
    }
    std::vector<double> hw2(static_cast<size_t>(H) * W * 2);
    for (const Tensor& fl : clip.flows) {
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < 2; ++c)
                    hw2[(static_cast<size_t>(y) * W + x) * 2 + c] =
                        fl.data()[static_cast<size_t>(c) * H * W + static_cast<size_t>(y) * W + x];
        write_f32_block(os, hw2);
    }
    check(os.good(), "write_clip: write failed: " + path);
}

// Reads frames and flows; renderer side-channels are not serialized.
inline Clip read_clip(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), "read_clip: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    check(is.good() && std::memcmp(magic, "TSDC", 4) == 0, "read_clip: bad magic in " + path);
    uint32_t version = read_u32(is, "version");
    check(version == 1, "read_clip: unsupported version " + std::to_string(version));
    int T = static_cast<int>(read_u32(is, "T"));
    int H = static_cast<int>(read_u32(is, "H"));
    int W = static_cast<int>(read_u32(is, "W"));
    int C = static_cast<int>(read_u32(is, "C"));
    check(C == 3, "read_clip: expected 3 channels, got " + std::to_string(C));
    Clip clip;
    clip.H = H;
    clip.W = W;
    std::vector<double> hwc;
    for (int t = 0; t < T; ++t) {
        read_f32_block(is, hwc, static_cast<size_t>(H) * W * 3, "frame " + std::to_string(t));
        Tensor f({3, H, W});
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < 3; ++c)
                    f.data()[static_cast<size_t>(c) * H * W + static_cast<size_t>(y) * W + x] =
                        hwc[(static_cast<size_t>(y) * W + x) * 3 + c];
        clip.frames.push_back(std::move(f));
    }
    for (int t = 0; t + 1 < T; ++t) {
        read_f32_block(is, hwc, static_cast<size_t>(H) * W * 2, "flow " + std::to_string(t));
        Tensor fl({2, H, W});
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < 2; ++c)
                    fl.data()[static_cast<size_t>(c) * H * W + static_cast<size_t>(y) * W + x] =
                        hwc[(static_cast<size_t>(y) * W + x) * 2 + c];
        clip.flows.push_back(std::move(fl));
    }
    return clip;
}

// Viseme file: one integer token per line, T lines.
inline void write_visemes(const VisemeTrack& track, const std::string& path) {
    std::ofstream os(path);
    check(os.good(), "write_visemes: cannot open " + path);
    for (int tok : track.tokens) os << tok << "\n";
}

inline VisemeTrack read_visemes(const std::string& path) {
    std::ifstream is(path);
    check(is.good(), "read_visemes: cannot open " + path);
    VisemeTrack track;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            int tok = std::stoi(line);
            check(tok >= 0 && tok < kVisemeCount,
                  "viseme token out of range at line " + std::to_string(line_no));
            track.tokens.push_back(tok);
        } catch (const std::invalid_argument&) {
            fail("read_visemes: malformed token at line " + std::to_string(line_no) + " of " + path);
        }
    }
    return track;
}

// -------------------------------------------------------------- manifest

// One JSON object per line: clip_path, viseme_path, identity_seed, T, H, W.
struct ManifestRecord {
    std::string clip_path;
    std::string viseme_path;
    uint64_t identity_seed = 0;
    int T = 0, H = 0, W = 0;
    bool operator==(const ManifestRecord&) const = default;
};

struct Manifest {
    std::vector<ManifestRecord> records;
    bool operator==(const Manifest&) const = default;
};

inline void write_manifest(const Manifest& m, const std::string& path) {
    std::ofstream os(path);
    check(os.good(), "write_manifest: cannot open " + path);
    for (const auto& r : m.records) {
        nlohmann::json j{{"clip_path", r.clip_path}, {"viseme_path", r.viseme_path},
                         {"identity_seed", r.identity_seed}, {"T", r.T}, {"H", r.H}, {"W", r.W}};
        os << j.dump() << "\n";
    }
    check(os.good(), "write_manifest: write failed: " + path);
}

inline Manifest read_manifest(const std::string& path) {
    std::ifstream is(path);
    check(is.good(), "read_manifest: cannot open " + path);
    Manifest m;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded())
            fail("read_manifest: malformed record at line " + std::to_string(line_no) + " of " + path);
        ManifestRecord r;
        try {
            r.clip_path = j.at("clip_path").get<std::string>();
            r.viseme_path = j.at("viseme_path").get<std::string>();
            r.identity_seed = j.at("identity_seed").get<uint64_t>();
            r.T = j.at("T").get<int>();
            r.H = j.at("H").get<int>();
            r.W = j.at("W").get<int>();
        } catch (const nlohmann::json::exception&) {
            fail("read_manifest: malformed record at line " + std::to_string(line_no) + " of " + path);
        }
        for (const std::string& p : {r.clip_path, r.viseme_path})
            check(std::filesystem::exists(p), "read_manifest: missing referenced file: " + p);
        m.records.push_back(std::move(r));
    }
    return m;
}

// Generates clips under dir and writes dir/manifest.jsonl. Identity and
// viseme seeds are derived from the corpus seed per clip index.
inline Manifest gen_corpus(const std::string& dir, int num_clips, uint64_t seed, int T, int H,
                           int W, const RenderOptions& opts = {}) {
    std::filesystem::create_directories(dir);
    Manifest m;
    for (int i = 0; i < num_clips; ++i) {
        uint64_t id_seed = seed * 1000003ull + static_cast<uint64_t>(i);
        IdentitySpec id = generate_identity(id_seed);
        Clip clip = render_clip(id, id_seed ^ 0xABCDEF1234567890ull, T, H, W, opts);
        char name[64];
        std::snprintf(name, sizeof(name), "clip_%04d", i);
        std::string clip_path = dir + "/" + name + ".tsdc";
        std::string vis_path = dir + "/" + name + ".visemes";
        write_clip(clip, clip_path);
        write_visemes(clip.visemes, vis_path);
        m.records.push_back({clip_path, vis_path, id_seed, T, H, W});
    }
    write_manifest(m, dir + "/manifest.jsonl");
    return m;
}

// Loads a full clip (frames + flows + visemes) from a manifest record.
inline Clip load_clip(const ManifestRecord& rec) {
    Clip clip = read_clip(rec.clip_path);
    clip.visemes = read_visemes(rec.viseme_path);
    clip.identity = generate_identity(rec.identity_seed);
    check(static_cast<int>(clip.visemes.tokens.size()) == clip.T(),
          "load_clip: viseme track length does not match clip " + rec.clip_path);
    return clip;
}

}  // namespace tsd
