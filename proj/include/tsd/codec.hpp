#pragma once

// Tiny convolutional autoencoder defining the latent space, plus the PSNR
// utility used throughout evaluation. Deterministic autoencoder (no
// variational term): the pipeline only ever uses it as a compressor.

#include <limits>

#include "tsd/checkpoint.hpp"
#include "tsd/corpus.hpp"
#include "tsd/optim.hpp"

namespace tsd {

struct CodecConfig {
    int H = 64, W = 64;
    std::vector<int> widths{16, 32, 64};  // stride-2 stage widths
    int latent_c = 4;
    int epochs = 40;
    int batch = 4;
    double lr = 5e-3;
    double val_fraction = 0.25;
    // Latents are rescaled so their per-element std hits this target before
    // diffusion sees them (the scale factor is stored in the checkpoint).
    double target_latent_std = 0.1;
    uint64_t seed = 1;

    void validate() const {
        check(H % 8 == 0 && W % 8 == 0, "codec: H and W must be divisible by 8");
        check(latent_c == 4, "codec: latent channel count is fixed at 4");
        check(widths.size() == 3, "codec: expected 3 stage widths");
    }
};

// 10*log10(MAX^2/MSE) with MAX = 1, MSE floored at 1e-12, capped at 99 dB.
inline double psnr(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "psnr: shape mismatch " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
    double se = 0.0;
    for (size_t i = 0; i < a.data().size(); ++i) {
        double d = a.data()[i] - b.data()[i];
        se += d * d;
    }
    double mse = std::max(se / static_cast<double>(a.numel()), 1e-12);
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

inline double psnr_from_mse(double mse) {
    return std::min(99.0, 10.0 * std::log10(1.0 / std::max(mse, 1e-12)));
}

// Constant {2,H,W} x/y coordinate planes in [-1,1]; region boundaries in the
// corpus are smooth functions of image coordinates, so giving every stage the
// coordinate grid makes sharp edges cheap to paint.
inline Tensor coord_planes(int H, int W) {
    Tensor p({2, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            size_t i = static_cast<size_t>(y) * W + x;
            p.data()[i] = W > 1 ? 2.0 * x / (W - 1) - 1.0 : 0.0;
            p.data()[static_cast<size_t>(H) * W + i] = H > 1 ? 2.0 * y / (H - 1) - 1.0 : 0.0;
        }
    return p;
}

class Autoencoder {
public:
    explicit Autoencoder(const CodecConfig& cfg = {}, uint64_t init_seed = 7)
        : cfg_(cfg) {
        cfg_.validate();
        Rng r(init_seed ^ 0xC0DECull);
        int w1 = cfg_.widths[0], w2 = cfg_.widths[1], w3 = cfg_.widths[2];
        add_conv(r, "enc.c1", w1, 3);
        add_conv(r, "enc.c2", w2, w1);
        add_conv(r, "enc.c3", w3, w2);
        add_conv(r, "enc.head", cfg_.latent_c, w3);
        // decoder stages get +2 coordinate planes
        add_conv(r, "dec.c1", w3, cfg_.latent_c + 2);
        add_conv(r, "dec.c2", w2, w3 + 2);
        add_conv(r, "dec.c3", w1, w2 + 2);
        add_conv(r, "dec.c4", w1, w1 + 2);
        add_conv(r, "dec.head", 3, w1);
    }

    const CodecConfig& config() const { return cfg_; }
    NamedParams& params() { return params_; }
    const NamedParams& params() const { return params_; }

    void set_trainable(bool trainable) {
        for (auto& [name, p] : params_) p.set_requires_grad(trainable);
    }

    // {3,H,W} image in [0,1] -> {4,H/8,W/8} latent
    Tensor encode(const Tensor& image) const {
        check(image.shape().size() == 3 && image.shape()[0] == 3,
              "encode: expected {3,H,W} image, got " + shape_str(image.shape()));
        check(image.shape()[1] % 8 == 0 && image.shape()[2] % 8 == 0,
              "encode: image dims must be divisible by 8, got " + shape_str(image.shape()));
        // center the [0,1] input so first-layer gradients decorrelate
        Tensor h = leaky_relu(conv(add(image, Tensor(image.shape(), -0.5)), "enc.c1", 2));
        h = leaky_relu(conv(h, "enc.c2", 2));
        h = leaky_relu(conv(h, "enc.c3", 2));
        return conv(h, "enc.head", 1);
    }

    // {4,h,w} latent -> {3,8h,8w} image, clamped to [0,1]
    Tensor decode(const Tensor& latent) const { return clamp01(decode_raw(latent)); }

    // Unclamped decoder output; training optimizes this so the clamp cannot
    // zero gradients for pixels that start outside [0,1].
    Tensor decode_raw(const Tensor& latent) const {
        check(latent.shape().size() == 3 && latent.shape()[0] == cfg_.latent_c,
              "decode: expected {4,h,w} latent, got " + shape_str(latent.shape()));
        Tensor h = leaky_relu(conv(with_coords(latent), "dec.c1", 1));
        h = leaky_relu(conv(with_coords(upsample2x(h)), "dec.c2", 1));
        h = leaky_relu(conv(with_coords(upsample2x(h)), "dec.c3", 1));
        h = leaky_relu(conv(with_coords(upsample2x(h)), "dec.c4", 1));
        h = conv(h, "dec.head", 1);
        return add(h, Tensor(h.shape(), 0.5));
    }

    Checkpoint to_checkpoint() const { return snapshot_params(params_); }
    void load(const Checkpoint& ckpt) { load_params(ckpt, params_); }

private:
    void add_conv(Rng& r, const std::string& name, int out_ch, int in_ch) {
        double std = std::sqrt(2.0 / (in_ch * 9));
        Tensor w = sample_normal(r, {out_ch, in_ch, 3, 3});
        for (double& v : w.data()) v *= std;
        w.set_requires_grad(true);
        Tensor b({out_ch}, 0.0, true);
        params_.emplace_back(name + ".w", w);
        params_.emplace_back(name + ".b", b);
    }

    Tensor with_coords(const Tensor& x) const {
        return concat_ch(x, coord_planes(x.shape()[1], x.shape()[2]));
    }

    Tensor conv(const Tensor& x, const std::string& name, int stride) const {
        const Tensor *w = nullptr, *b = nullptr;
        for (const auto& [n, p] : params_) {
            if (n == name + ".w") w = &p;
            if (n == name + ".b") b = &p;
        }
        check(w && b, "codec: unknown layer " + name);
        return conv2d(x, *w, *b, stride);
    }

    CodecConfig cfg_;
    NamedParams params_;
};

// ------------------------------------------------------------- training

struct LossLogRow {
    int epoch;
    std::string split;
    double loss;
};

inline void write_codec_log(const std::vector<LossLogRow>& rows, const std::string& path) {
    std::ofstream os(path);
    check(os.good(), "cannot open loss log " + path);
    os << "epoch,split,loss\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%s,%.12g\n", r.epoch, r.split.c_str(), r.loss);
        os << buf;
    }
}

struct CodecTrainResult {
    Checkpoint checkpoint;
    std::vector<LossLogRow> log;
    double best_val_loss = 0.0;
};

// Rebuild an autoencoder whose stage widths match a checkpoint's arrays.
inline Autoencoder codec_from_checkpoint(const Checkpoint& ckpt) {
    CodecConfig cfg;
    cfg.widths = {ckpt.get("enc.c1.w").shape()[0], ckpt.get("enc.c2.w").shape()[0],
                  ckpt.get("enc.c3.w").shape()[0]};
    cfg.latent_c = ckpt.get("enc.head.w").shape()[0];
    Autoencoder codec(cfg);
    codec.load(ckpt);
    return codec;
}

// Scale factor stored by train_codec; 1.0 for checkpoints that predate it.
inline double latent_scale_of(const Checkpoint& ckpt) {
    if (!ckpt.has("latent_scale")) return 1.0;
    return ckpt.get("latent_scale").data()[0];
}

// Minimizes mean squared reconstruction error; keeps the best-validation
// snapshot. Fully deterministic for a fixed seed.
inline CodecTrainResult train_codec(const Manifest& manifest, const CodecConfig& cfg) {
    check(!manifest.records.empty(), "train_codec: empty manifest");
    cfg.validate();

    std::vector<Tensor> train_frames, val_frames;
    int n_clips = static_cast<int>(manifest.records.size());
    int n_val = n_clips >= 2 ? std::max(1, static_cast<int>(cfg.val_fraction * n_clips)) : 0;
    for (int i = 0; i < n_clips; ++i) {
        Clip clip = load_clip(manifest.records[static_cast<size_t>(i)]);
        auto& dst = (i >= n_clips - n_val) ? val_frames : train_frames;
        for (auto& f : clip.frames) dst.push_back(std::move(f));
    }
    if (val_frames.empty()) val_frames = train_frames;  // single-clip degenerate case

    Autoencoder codec(cfg, cfg.seed);
    Adam opt(codec.params(), cfg.lr);
    Rng rng(cfg.seed ^ 0xAE7123ull);

    auto eval_loss = [&](const std::vector<Tensor>& frames) {
        NoGradGuard ng;
        double total = 0.0;
        for (const auto& f : frames) total += mse(codec.decode(codec.encode(f)), f).item();
        return total / static_cast<double>(frames.size());
    };

    CodecTrainResult result;
    result.best_val_loss = std::numeric_limits<double>::infinity();
    int steps_per_epoch =
        std::max(1, static_cast<int>(train_frames.size()) / std::max(1, cfg.batch));
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        // cosine decay to a tenth of the base rate over the epoch budget
        double t = static_cast<double>(epoch - 1) / std::max(1, cfg.epochs - 1);
        opt.set_lr(cfg.lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(t * 3.14159265358979))));
        double train_total = 0.0;
        for (int s = 0; s < steps_per_epoch; ++s) {
            Tensor batch_loss({1}, 0.0);
            for (int b = 0; b < cfg.batch; ++b) {
                const Tensor& f =
                    train_frames[static_cast<size_t>(rng.uniform_int(static_cast<int>(train_frames.size())))];
                batch_loss = add(batch_loss, mse(codec.decode_raw(codec.encode(f)), f));
            }
            batch_loss = scale(batch_loss, 1.0 / cfg.batch);
            train_total += batch_loss.item();
            backward(batch_loss);
            opt.step();
        }
        double val_loss = eval_loss(val_frames);
        result.log.push_back({epoch, "train", train_total / steps_per_epoch});
        result.log.push_back({epoch, "val", val_loss});
        if (val_loss < result.best_val_loss) {
            result.best_val_loss = val_loss;
            result.checkpoint = codec.to_checkpoint();
        }
    }

    // measure the latent std of the best snapshot and store the rescale factor
    codec.load(result.checkpoint);
    {
        NoGradGuard ng;
        double sq = 0.0;
        size_t n = 0;
        for (const auto& f : train_frames) {
            Tensor z = codec.encode(f);
            for (double v : z.data()) sq += v * v;
            n += z.data().size();
        }
        double std = std::sqrt(std::max(sq / static_cast<double>(n), 1e-12));
        result.checkpoint.arrays.emplace_back(
            "latent_scale", Tensor({1}, to_f32(cfg.target_latent_std / std)));
    }
    return result;
}

}  // namespace tsd
