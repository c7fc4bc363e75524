#pragma once

// Few-step inference: the geometric step-size schedule, the per-frame
// denoising loop, modes E1 (decode on device) and E2 (return latents for
// deferred decoding), and the latent stream file format.

#include <functional>
#include <optional>

#include "tsd/denoise.hpp"

namespace tsd {

// ------------------------------------------------------------- schedule

struct StepSchedule {
    int K = 0;
    std::vector<double> levels;  // s_0 > s_1 > ... > s_K = 0
    std::vector<double> etas;    // eta_k = s_{k-1} - s_k
};

// Geometric noise levels s_k = s_0 * r^k with the final level forced to zero,
// so a perfect noise predictor recovers the clean latent exactly (the step
// sizes telescope to s_0).
inline StepSchedule build_schedule(int K, double s0 = 1.0, double r = 0.4) {
    check(K >= 1, "schedule: K must be >= 1, got " + std::to_string(K));
    check(s0 > 0.0, "schedule: s0 must be positive");
    check(r > 0.0 && r < 1.0, "schedule: decay must be in (0,1)");
    StepSchedule sched;
    sched.K = K;
    for (int k = 0; k < K; ++k) sched.levels.push_back(s0 * std::pow(r, k));
    sched.levels.push_back(0.0);
    for (int k = 1; k <= K; ++k)
        sched.etas.push_back(sched.levels[static_cast<size_t>(k - 1)] -
                             sched.levels[static_cast<size_t>(k)]);
    return sched;
}

// ------------------------------------------------------------- predictor

// Pluggable noise predictor so the sampler can be exercised against oracles
// (e.g. one that returns the exact noise used for corruption).
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;
    virtual Tensor predict(const Tensor& z, const Conditioning& cond) const = 0;
};

class DenoiserPredictor : public NoisePredictor {
public:
    explicit DenoiserPredictor(const Denoiser& model) : model_(&model) {}
    Tensor predict(const Tensor& z, const Conditioning& cond) const override {
        return model_->predict(z, cond);
    }

private:
    const Denoiser* model_;
};

// K denoising updates z <- z - eta_k * eps_hat; the conditioning for step k
// carries the level the latent currently sits at (s_{k-1}).
inline Tensor run_schedule(Tensor z, const StepSchedule& sched, const NoisePredictor& pred,
                           const std::function<Conditioning(double)>& cond_at) {
    check(sched.K >= 1 && static_cast<int>(sched.etas.size()) == sched.K,
          "run_schedule: malformed schedule");
    NoGradGuard ng;
    for (int k = 1; k <= sched.K; ++k) {
        Conditioning cond = cond_at(sched.levels[static_cast<size_t>(k - 1)]);
        Tensor eps_hat = pred.predict(z, cond);
        z = sub(z, scale(eps_hat, sched.etas[static_cast<size_t>(k - 1)])).detach();
    }
    return z;
}

// ------------------------------------------------------------- inference

enum class InferMode { E1, E2 };
enum class InitSource { Encoder, PureNoise, Latents };

struct InferenceRequest {
    InferMode mode = InferMode::E1;
    Tensor ref_image;  // {3,H,W}
    std::optional<VisemeTrack> track;
    int frames = 0;  // frame count when the track is absent (all-zero tokens)
    StepSchedule schedule;
    InitSource init = InitSource::Encoder;
    std::vector<Tensor> init_latents;  // consumed when init == Latents
};

struct InferResult {
    std::vector<Tensor> frames;   // E1 only
    std::vector<Tensor> latents;  // final latents, f32-quantized, both modes
};

inline InferResult infer(const InferenceRequest& req, const Checkpoint& model_ckpt,
                         const Checkpoint& codec_ckpt, Rng& rng) {
    NoGradGuard ng;
    Autoencoder codec = codec_from_checkpoint(codec_ckpt);
    double latent_scale = latent_scale_of(codec_ckpt);
    Denoiser model = Denoiser::from_checkpoint(model_ckpt);
    IdentityEmbedder embedder;

    std::vector<int> tokens;
    if (req.track.has_value()) {
        tokens = req.track->tokens;
        for (int tok : tokens)
            check(tok >= 0 && tok < kVisemeCount, "infer: viseme token out of range");
    } else {
        check(req.frames >= 1, "infer: need a viseme track or a positive frame count");
        tokens.assign(static_cast<size_t>(req.frames), 0);
    }
    int T = static_cast<int>(tokens.size());
    check(req.schedule.K >= 1, "infer: schedule not built");

    Tensor ref_emb = embedder.embed(req.ref_image).detach();
    Tensor z_ref = scale(codec.encode(req.ref_image), latent_scale).detach();
    int h = z_ref.shape()[1], w = z_ref.shape()[2];
    double s0 = req.schedule.levels[0];

    if (req.init == InitSource::Latents)
        check(static_cast<int>(req.init_latents.size()) == T,
              "infer: cached latent count " + std::to_string(req.init_latents.size()) +
                  " does not match " + std::to_string(T) + " frames");

    InferResult out;
    for (int t = 0; t < T; ++t) {
        Tensor z0;
        switch (req.init) {
            case InitSource::Encoder:
                z0 = add(z_ref, scale(sample_normal(rng, z_ref.shape()), s0)).detach();
                break;
            case InitSource::PureNoise:
                z0 = scale(sample_normal(rng, z_ref.shape()), s0).detach();
                break;
            case InitSource::Latents: {
                const Tensor& given = req.init_latents[static_cast<size_t>(t)];
                check(given.shape() == z_ref.shape(),
                      "infer: cached latent shape " + shape_str(given.shape()) +
                          " does not match " + shape_str(z_ref.shape()));
                z0 = given.detach();
                break;
            }
        }
        DenoiserPredictor pred(model);
        int token = tokens[static_cast<size_t>(t)];
        Tensor z = run_schedule(std::move(z0), req.schedule, pred, [&](double s) {
            return make_conditioning(ref_emb, token, s, h, w);
        });
        quantize_f32(z.data());  // serialization boundary: E1 and E2 see identical latents
        if (req.mode == InferMode::E1)
            out.frames.push_back(codec.decode(scale(z, 1.0 / latent_scale)).detach());
        out.latents.push_back(std::move(z));
    }
    return out;
}

// ------------------------------------------------------------- latent stream

// Layout: magic "TSDL", u32 version, u32 T/h/w/c, then T*h*w*c f32.
inline void write_latent_stream(const std::vector<Tensor>& latents, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    check(os.good(), "latent stream: cannot open for writing: " + path);
    os.write("TSDL", 4);
    write_u32(os, 1);
    uint32_t T = static_cast<uint32_t>(latents.size());
    int c = 0, h = 0, w = 0;
    if (T > 0) {
        check(latents[0].shape().size() == 3, "latent stream: latents must be {c,h,w}");
        c = latents[0].shape()[0];
        h = latents[0].shape()[1];
        w = latents[0].shape()[2];
    }
    write_u32(os, T);
    write_u32(os, static_cast<uint32_t>(h));
    write_u32(os, static_cast<uint32_t>(w));
    write_u32(os, static_cast<uint32_t>(c));
    for (const Tensor& z : latents) {
        check(z.shape() == Shape{c, h, w}, "latent stream: inconsistent latent shapes");
        write_f32_block(os, z.data());
    }
    check(os.good(), "latent stream: write failed: " + path);
}

inline std::vector<Tensor> read_latent_stream(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), "latent stream: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    check(is.good() && std::memcmp(magic, "TSDL", 4) == 0,
          "latent stream: bad magic in " + path);
    uint32_t version = read_u32(is, "version");
    check(version == 1, "latent stream: unsupported version " + std::to_string(version));
    uint32_t T = read_u32(is, "frame count");
    int h = static_cast<int>(read_u32(is, "h"));
    int w = static_cast<int>(read_u32(is, "w"));
    int c = static_cast<int>(read_u32(is, "c"));
    std::vector<Tensor> latents;
    for (uint32_t t = 0; t < T; ++t) {
        std::vector<double> data;
        read_f32_block(is, data, static_cast<size_t>(c) * h * w,
                       "latent frame " + std::to_string(t));
        latents.emplace_back(Shape{c, h, w}, std::move(data));
    }
    return latents;
}

}  // namespace tsd
