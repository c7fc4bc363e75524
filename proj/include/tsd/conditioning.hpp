#pragma once

// Conditioning pair construction: per-frame viseme tokens (with the all-zero
// fallback), the frozen identity embedder, injection-ready channel maps, and
// reference selection with cross-identity mismatch.

#include <optional>

#include "tsd/corpus.hpp"
#include "tsd/rng.hpp"

namespace tsd {

constexpr int kIdentityEmbedDim = 32;
constexpr int kVisemeEmbedDim = 8;
constexpr int kConditioningChannels = kIdentityEmbedDim + kVisemeEmbedDim + 1;  // 41

// ------------------------------------------------------- viseme tokenizer

constexpr int kPhonemeCount = 40;  // ARPAbet-style inventory

// Fixed phoneme -> viseme class map. Order: vowels first, then consonant
// groups; users can ship their own table file with the same one-pair-per-line
// layout.
inline std::vector<int> default_phoneme_table() {
    // 0 silence, 1 A, 2 E, 3 I, 4 O, 5 U, 6 M/closed, 7 F/teeth
    return {
        0,              // 0  SIL
        1, 1, 1,        // 1-3   AA AE AH
        4, 4,           // 4-5   AO AW
        1, 2, 2,        // 6-8   AY EH ER
        2, 3, 3,        // 9-11  EY IH IY
        4, 4, 5, 5,     // 12-15 OW OY UH UW
        6, 6, 6,        // 16-18 B M P
        7, 7,           // 19-20 F V
        2, 2,           // 21-22 D T
        3, 3,           // 23-24 S Z
        2, 2,           // 25-26 N L
        3, 3,           // 27-28 SH ZH
        2, 2,           // 29-30 CH JH
        3,              // 31    TH
        3,              // 32    DH
        2, 2,           // 33-34 G K
        2,              // 35    NG
        2, 3, 5, 2,     // 36-39 R Y W HH
    };
}

class PhonemeVisemeTable {
public:
    PhonemeVisemeTable() : map_(default_phoneme_table()) {}

    static PhonemeVisemeTable from_file(const std::string& path) {
        std::ifstream is(path);
        check(is.good(), "phoneme table: cannot open " + path);
        PhonemeVisemeTable t;
        t.map_.assign(kPhonemeCount, 0);
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty() || line[0] == '#') continue;
            std::istringstream ls(line);
            int ph, vi;
            check(static_cast<bool>(ls >> ph >> vi), "phoneme table: malformed line: " + line);
            check(ph >= 0 && ph < kPhonemeCount, "phoneme table: phoneme id out of range");
            check(vi >= 0 && vi < kVisemeCount, "phoneme table: viseme id out of range");
            t.map_[static_cast<size_t>(ph)] = vi;
        }
        return t;
    }

    void save(const std::string& path) const {
        std::ofstream os(path);
        check(os.good(), "phoneme table: cannot open for writing " + path);
        os << "# phoneme_id viseme_id\n";
        for (int ph = 0; ph < kPhonemeCount; ++ph) os << ph << " " << map_[static_cast<size_t>(ph)] << "\n";
    }

    int viseme_for(int phoneme) const {
        check(phoneme >= 0 && phoneme < kPhonemeCount,
              "phoneme id " + std::to_string(phoneme) + " out of range [0," +
                  std::to_string(kPhonemeCount) + ")");
        return map_[static_cast<size_t>(phoneme)];
    }

    // Absent phoneme input yields the all-zero (silence) track.
    VisemeTrack tokenize(const std::optional<std::vector<int>>& phonemes, int T) const {
        VisemeTrack track;
        if (!phonemes.has_value()) {
            track.tokens.assign(static_cast<size_t>(T), 0);
            return track;
        }
        check(static_cast<int>(phonemes->size()) == T,
              "tokenize: phoneme sequence length " + std::to_string(phonemes->size()) +
                  " does not match frame count " + std::to_string(T));
        for (int ph : *phonemes) track.tokens.push_back(viseme_for(ph));
        return track;
    }

private:
    std::vector<int> map_;
};

// ------------------------------------------------------- identity embedder

// Frozen seeded random-projection conv stack over a heavily average-pooled
// image, centered by the mean feature of a fixed probe set of rendered faces,
// then L2 normalized. The pooling front end makes the features robust to the
// few-pixel head motion (strided convs alone are phase sensitive); centering
// strips the common "average face" component so the cosine spreads out across
// identities. Differentiable with respect to the image; never trained.
class IdentityEmbedder {
public:
    explicit IdentityEmbedder(uint64_t seed = 0xFACE42ull) {
        Rng r(seed);
        auto init = [&](const Shape& s) {
            double std = std::sqrt(2.0 / (s[1] * s[2] * s[3]));
            Tensor t = sample_normal(r, s);
            for (double& v : t.data()) v *= std;
            return t;  // requires_grad stays false: frozen
        };
        w1_ = init({16, 5, 3, 3});  // RGB + two coordinate channels
        w2_ = init({kIdentityEmbedDim, 16, 3, 3});

        NoGradGuard ng;
        const int probes = 32;
        mu_ = Tensor({kIdentityEmbedDim}, 0.0);
        for (int i = 0; i < probes; ++i) {
            Clip probe = render_clip(generate_identity(seed * 131 + i), seed + i, 2, 64, 64);
            Tensor f = features(probe.frames[0]);
            for (size_t j = 0; j < mu_.data().size(); ++j) mu_.data()[j] += f.data()[j] / probes;
        }
    }

    Tensor embed(const Tensor& image) const {
        return l2_normalize(sub(features(image), mu_));
    }

    uint64_t params_hash() const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (const Tensor* t : {&w1_, &w2_, &mu_})
            h = fnv1a(t->data().data(), t->data().size() * sizeof(double), h);
        return h;
    }

private:
    // Constant x/y coordinate planes in [-1,1]; lets the frozen convs respond
    // to where facial features sit, not just how much area they cover.
    static Tensor coord_planes(int H, int W) {
        Tensor c({2, H, W});
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                c.data()[static_cast<size_t>(y) * W + x] = 2.0 * x / (W - 1) - 1.0;
                c.data()[static_cast<size_t>(H) * W + static_cast<size_t>(y) * W + x] =
                    2.0 * y / (H - 1) - 1.0;
            }
        return c;
    }

    Tensor features(const Tensor& image) const {
        check(image.shape().size() == 3 && image.shape()[0] == 3,
              "identity_embed: expected {3,H,W} image, got " + shape_str(image.shape()));
        // pool down to a 16x16 color layout before any phase-sensitive op
        Tensor h = image;
        while (h.shape()[1] > 16) h = avg_pool2x(h);
        h = concat_ch(h, coord_planes(h.shape()[1], h.shape()[2]));
        h = relu(conv2d(h, w1_, Tensor{}, 1));
        h = relu(conv2d(h, w2_, Tensor{}, 1));
        return mean_pool_hw(h);
    }

    Tensor w1_, w2_, mu_;
};

// ------------------------------------------------------- conditioning maps

// Frozen one-hot -> dense viseme embedding table (8x8).
inline const std::vector<std::vector<double>>& viseme_embedding_table() {
    static const std::vector<std::vector<double>> table = [] {
        Rng r(0xBEEF5EEDull);
        std::vector<std::vector<double>> t(kVisemeCount, std::vector<double>(kVisemeEmbedDim));
        for (auto& row : t)
            for (double& v : row) v = r.normal() * 0.5;
        return t;
    }();
    return table;
}

struct Conditioning {
    Tensor identity_embedding;  // {32}, unit norm
    int viseme_token = 0;
    double noise_strength = 0.0;
    Tensor encoded;  // {41,h,w}: identity channels + viseme channels + s channel
};

// Builds the channel maps at the latent's spatial dims from a precomputed
// identity embedding.
inline Conditioning make_conditioning(const Tensor& identity_embedding, int viseme_token,
                                      double noise_strength, int h, int w) {
    check(identity_embedding.shape() == Shape{kIdentityEmbedDim},
          "make_conditioning: identity embedding must be {32}, got " +
              shape_str(identity_embedding.shape()));
    check(viseme_token >= 0 && viseme_token < kVisemeCount,
          "make_conditioning: viseme token " + std::to_string(viseme_token) + " out of range");
    Conditioning cond;
    cond.identity_embedding = identity_embedding;
    cond.viseme_token = viseme_token;
    cond.noise_strength = noise_strength;
    Tensor enc({kConditioningChannels, h, w});
    size_t plane = static_cast<size_t>(h) * w;
    for (int c = 0; c < kIdentityEmbedDim; ++c) {
        double v = identity_embedding.data()[static_cast<size_t>(c)];
        std::fill_n(enc.data().begin() + static_cast<long>(c * plane), plane, v);
    }
    const auto& vrow = viseme_embedding_table()[static_cast<size_t>(viseme_token)];
    for (int c = 0; c < kVisemeEmbedDim; ++c)
        std::fill_n(enc.data().begin() + static_cast<long>((kIdentityEmbedDim + c) * plane), plane,
                    vrow[static_cast<size_t>(c)]);
    std::fill_n(enc.data().begin() + static_cast<long>((kConditioningChannels - 1) * plane), plane,
                noise_strength);
    cond.encoded = std::move(enc);
    return cond;
}

inline Conditioning make_conditioning(const IdentityEmbedder& embedder, const Tensor& ref_image,
                                      int viseme_token, double noise_strength, int h, int w) {
    NoGradGuard ng;
    return make_conditioning(embedder.embed(ref_image).detach(), viseme_token, noise_strength, h, w);
}

// ------------------------------------------------------ reference selection

struct MismatchPolicy {
    double p_mismatch = 0.5;
};

struct ReferenceChoice {
    Tensor frame;
    bool is_mismatched = false;
    int pool_index = -1;  // -1 when the reference comes from the clip itself
    int frame_index = 0;
};

// With probability p_mismatch the reference is a frame of a different
// identity's clip from the pool; otherwise a random frame of the clip itself.
inline ReferenceChoice select_reference(const Clip& clip, const std::vector<Clip>& pool,
                                        const MismatchPolicy& policy, Rng& rng) {
    check(policy.p_mismatch >= 0.0 && policy.p_mismatch <= 1.0,
          "select_reference: p_mismatch must be in [0,1]");
    std::vector<int> other;
    for (size_t i = 0; i < pool.size(); ++i)
        if (pool[i].identity.seed != clip.identity.seed) other.push_back(static_cast<int>(i));
    check(policy.p_mismatch == 0.0 || !other.empty(),
          "select_reference: pool has no other identity but p_mismatch > 0");
    ReferenceChoice choice;
    bool mismatch = rng.uniform() < policy.p_mismatch;
    if (mismatch) {
        int pi = other[static_cast<size_t>(rng.uniform_int(static_cast<int>(other.size())))];
        const Clip& src = pool[static_cast<size_t>(pi)];
        choice.pool_index = pi;
        choice.frame_index = rng.uniform_int(src.T());
        choice.frame = src.frames[static_cast<size_t>(choice.frame_index)];
        choice.is_mismatched = true;
    } else {
        choice.frame_index = rng.uniform_int(clip.T());
        choice.frame = clip.frames[static_cast<size_t>(choice.frame_index)];
    }
    return choice;
}

}  // namespace tsd
