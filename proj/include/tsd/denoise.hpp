#pragma once

// Diffusion core: additive noise corruption, the teacher/student denoisers,
// the identity/temporal regularizers, and both training loops (noise-matching
// for the teacher, teacher-matching distillation for the student) with early
// stopping and best-validation checkpointing.

#include <limits>
#include <memory>

#include "tsd/codec.hpp"
#include "tsd/conditioning.hpp"

namespace tsd {

// ------------------------------------------------------------- denoiser

enum class Role { Teacher, Student };

struct DenoiserConfig {
    Role role = Role::Teacher;
    int width = 32;  // base channel width; student uses 16 so it is genuinely lighter
    int latent_c = 4;
    int cond_c = kConditioningChannels;
    // Fixed multipliers on the conv outputs, with the weight init divided by
    // the same factor so forward statistics are unchanged. Under Adam (which
    // moves every weight by about lr per step regardless of gradient scale) a
    // gain of G makes each step change the function G times more, which is
    // what makes the tiny 2e-5 learning rate workable at desk scale.
    double out_gain = 128.0;
    double hidden_gain = 8.0;

    static DenoiserConfig teacher() { return {}; }
    static DenoiserConfig student() {
        DenoiserConfig c;
        c.role = Role::Student;
        c.width = 16;
        c.hidden_gain = 16.0;  // narrower net: push harder to match the teacher in budget
        return c;
    }

    void validate() const {
        check(width >= 1 && latent_c >= 1 && cond_c >= 1, "denoiser: bad config dims");
        check(out_gain > 0.0 && hidden_gain > 0.0, "denoiser: gains must be positive");
    }
};

// Analytic parameter count for a config (weights + biases of the five convs).
inline long long denoiser_param_count(const DenoiserConfig& cfg) {
    long long w = cfg.width, lc = cfg.latent_c, cc = cfg.cond_c;
    long long n = 0;
    n += w * (lc + cc) * 9 + w;      // in
    n += 2 * w * w * 9 + 2 * w;      // down (stride 2)
    n += 2 * w * 2 * w * 9 + 2 * w;  // mid
    n += w * 2 * w * 9 + w;          // up
    n += lc * 2 * w * 9 + lc;        // out
    return n;
}

// 2-stage down/up conv net with a skip connection over the latent resolution;
// conditioning channels are concatenated at the input.
class Denoiser {
public:
    explicit Denoiser(const DenoiserConfig& cfg = {}, uint64_t seed = 21)
        : cfg_(cfg) {
        cfg_.validate();
        Rng r(seed ^ 0xDE401Eull);
        int w = cfg_.width;
        double hg = 1.0 / cfg_.hidden_gain;
        add_conv(r, "in", w, cfg_.latent_c + cfg_.cond_c, hg);
        add_conv(r, "down", 2 * w, w, hg);
        add_conv(r, "mid", 2 * w, 2 * w, hg);
        add_conv(r, "up", w, 2 * w, hg);
        add_conv(r, "out", cfg_.latent_c, 2 * w, 0.01);  // near-zero initial output
    }

    const DenoiserConfig& config() const { return cfg_; }
    NamedParams& params() { return params_; }
    const NamedParams& params() const { return params_; }

    void set_trainable(bool trainable) {
        for (auto& [name, p] : params_) p.set_requires_grad(trainable);
    }

    Tensor predict(const Tensor& z_noisy, const Conditioning& cond) const {
        check(z_noisy.shape().size() == 3 && z_noisy.shape()[0] == cfg_.latent_c,
              "predict_noise: latent must be {" + std::to_string(cfg_.latent_c) +
                  ",h,w}, got " + shape_str(z_noisy.shape()));
        check(cond.encoded.shape() ==
                  Shape{cfg_.cond_c, z_noisy.shape()[1], z_noisy.shape()[2]},
              "predict_noise: conditioning shape " + shape_str(cond.encoded.shape()) +
                  " does not match latent " + shape_str(z_noisy.shape()));
        check(z_noisy.shape()[1] % 2 == 0 && z_noisy.shape()[2] % 2 == 0,
              "predict_noise: latent dims must be even, got " + shape_str(z_noisy.shape()));
        double hg = cfg_.hidden_gain;
        Tensor x = concat_ch(z_noisy, cond.encoded);
        Tensor h0 = relu(scale(conv(x, "in", 1), hg));
        Tensor h = relu(scale(conv(h0, "down", 2), hg));
        h = relu(scale(conv(h, "mid", 1), hg));
        h = relu(scale(conv(upsample2x(h), "up", 1), hg));
        return scale(conv(concat_ch(h0, h), "out", 1), cfg_.out_gain);
    }

    Checkpoint to_checkpoint() const {
        Checkpoint c = snapshot_params(params_);
        c.arrays.emplace_back(
            "meta", Tensor({5}, {static_cast<double>(cfg_.role == Role::Student ? 1 : 0),
                                 static_cast<double>(cfg_.width),
                                 static_cast<double>(cfg_.latent_c), cfg_.out_gain,
                                 cfg_.hidden_gain}));
        return c;
    }

    void load(const Checkpoint& ckpt) { load_params(ckpt, params_); }

    static Denoiser from_checkpoint(const Checkpoint& ckpt, int cond_c = kConditioningChannels) {
        const Tensor& meta = ckpt.get("meta");
        check(meta.shape() == Shape{5}, "denoiser: bad meta array");
        DenoiserConfig cfg;
        cfg.role = meta.data()[0] != 0.0 ? Role::Student : Role::Teacher;
        cfg.width = static_cast<int>(meta.data()[1]);
        cfg.latent_c = static_cast<int>(meta.data()[2]);
        cfg.out_gain = meta.data()[3];
        cfg.hidden_gain = meta.data()[4];
        cfg.cond_c = cond_c;
        Denoiser d(cfg);
        d.load(ckpt);
        return d;
    }

    uint64_t params_hash() const { return hash_params(params_); }

private:
    void add_conv(Rng& r, const std::string& name, int out_ch, int in_ch, double gain) {
        double std = gain * std::sqrt(2.0 / (in_ch * 9));
        Tensor w = sample_normal(r, {out_ch, in_ch, 3, 3});
        for (double& v : w.data()) v *= std;
        w.set_requires_grad(true);
        Tensor b({out_ch}, 0.0, true);
        params_.emplace_back(name + ".w", w);
        params_.emplace_back(name + ".b", b);
    }

    Tensor conv(const Tensor& x, const std::string& name, int stride) const {
        const Tensor *w = nullptr, *b = nullptr;
        for (const auto& [n, p] : params_) {
            if (n == name + ".w") w = &p;
            if (n == name + ".b") b = &p;
        }
        check(w && b, "denoiser: unknown layer " + name);
        return conv2d(x, *w, *b, stride);
    }

    DenoiserConfig cfg_;
    NamedParams params_;
};

inline Tensor predict_noise(const Denoiser& model, const Tensor& z_noisy,
                            const Conditioning& cond) {
    return model.predict(z_noisy, cond);
}

// ------------------------------------------------------------- corruption

// z_noisy = z + s * eps with eps ~ N(0, I); returns both.
inline std::pair<Tensor, Tensor> corrupt(const Tensor& z, double s, Rng& rng) {
    check(s >= 0.0, "corrupt: noise strength must be >= 0, got " + std::to_string(s));
    Tensor eps = sample_normal(rng, z.shape());
    Tensor z_noisy = add(z, scale(eps, s));
    return {std::move(z_noisy), std::move(eps)};
}

// ------------------------------------------------------------- losses

inline Tensor loss_teach(const Tensor& eps, const Tensor& eps_hat) { return mse(eps_hat, eps); }

inline Tensor loss_dist(const Tensor& eps_hat_student, const Tensor& eps_hat_teacher) {
    return mse(eps_hat_student, eps_hat_teacher);
}

// A displacement field is a {2,H,W} tensor (channel 0 = dx, channel 1 = dy).
inline void check_warp_field(const Tensor& field, int H, int W) {
    check(field.shape() == Shape{2, H, W},
          "warp: field must be {2," + std::to_string(H) + "," + std::to_string(W) + "}, got " +
              shape_str(field.shape()));
    double bound = static_cast<double>(std::max(H, W));
    for (double v : field.data())
        check(std::isfinite(v) && std::fabs(v) <= bound,
              "warp: field entry " + std::to_string(v) + " outside sanity bound");
}

// Bilinear backward warp with border clamping.
inline Tensor warp(const Tensor& frame, const Tensor& field) {
    check(frame.shape().size() == 3, "warp: frame must be CHW, got " + shape_str(frame.shape()));
    check_warp_field(field, frame.shape()[1], frame.shape()[2]);
    return warp_bilinear(frame, field);
}

// Sum over frames of (1 - cos(f_id(frame), f_id(ref))). Implemented as half
// the squared distance of the unit embeddings — identical for unit vectors,
// and exactly zero when the embeddings coincide.
inline Tensor loss_id(const std::vector<Tensor>& frames, const Tensor& ref_embedding,
                      const IdentityEmbedder& embedder) {
    check(!frames.empty(), "loss_id: need at least one frame");
    check(ref_embedding.shape() == Shape{kIdentityEmbedDim},
          "loss_id: reference embedding must be {32}, got " + shape_str(ref_embedding.shape()));
    Tensor total({1}, 0.0);
    for (const Tensor& f : frames) {
        Tensor d = sub(embedder.embed(f), ref_embedding);
        total = add(total, scale(sum_all(mul(d, d)), 0.5));
    }
    return total;
}

inline Tensor loss_id_vs_image(const std::vector<Tensor>& frames, const Tensor& ref_image,
                               const IdentityEmbedder& embedder) {
    Tensor ref_emb;
    {
        NoGradGuard ng;
        ref_emb = embedder.embed(ref_image).detach();
    }
    return loss_id(frames, ref_emb, embedder);
}

// Sum over t>=2 of mean |frame_t - warp(frame_{t-1}, field_{t-1})|.
inline Tensor loss_temp(const std::vector<Tensor>& frames, const std::vector<Tensor>& fields) {
    check(frames.size() >= 2, "loss_temp: need at least 2 frames, got " +
                                  std::to_string(frames.size()));
    check(fields.size() == frames.size() - 1,
          "loss_temp: field count " + std::to_string(fields.size()) + " does not match " +
              std::to_string(frames.size()) + " frames");
    Tensor total({1}, 0.0);
    for (size_t t = 1; t < frames.size(); ++t)
        total = add(total, mean_abs_diff(frames[t], warp(frames[t - 1], fields[t - 1])));
    return total;
}

inline Tensor total_loss(const Tensor& core, const Tensor& id, const Tensor& temp,
                         double lambda_id, double lambda_temp) {
    check(lambda_id >= 0.0 && lambda_temp >= 0.0, "total_loss: lambdas must be >= 0");
    return add(core, add(scale(id, lambda_id), scale(temp, lambda_temp)));
}

// ------------------------------------------------------------- training

struct TrainConfig {
    int batch = 16;
    double lr = 2e-5;
    int patience = 8;
    double lambda_id = 0.1;
    double lambda_temp = 0.05;
    double s_min = 0.05, s_max = 1.0;  // log-uniform noise-strength range
    double p_mismatch = 0.5;
    int steps_per_epoch = 50;
    int max_epochs = 25;
    double val_fraction = 0.25;
    // The decoded-frame regularizers are evaluated on this many samples of
    // each batch (an unbiased subsample; decoding every sample would dominate
    // the step cost at desk scale).
    int reg_samples = 4;
    int val_samples = 32;
    uint64_t seed = 0;

    void validate() const {
        check(batch >= 1, "train: batch must be >= 1");
        check(patience >= 1, "train: patience must be >= 1");
        check(val_fraction > 0.0 && val_fraction < 1.0, "train: val fraction must be in (0,1)");
        check(lambda_id >= 0.0 && lambda_temp >= 0.0, "train: lambdas must be >= 0");
        check(s_min > 0.0 && s_min <= s_max, "train: bad noise-strength range");
        check(p_mismatch >= 0.0 && p_mismatch <= 1.0, "train: p_mismatch must be in [0,1]");
        check(steps_per_epoch >= 1 && max_epochs >= 1, "train: bad epoch config");
        check(reg_samples >= 1 && reg_samples <= batch, "train: reg_samples must be in [1,batch]");
        check(val_samples >= 1, "train: val_samples must be >= 1");
    }
};

// Stops when the watched value fails to improve for `patience` consecutive
// updates; on a flat plateau that is patience + 1 calls in total.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience) : patience_(patience) {
        check(patience >= 1, "early stop: patience must be >= 1");
    }
    bool update(double value) {
        if (value < best_) {
            best_ = value;
            since_ = 0;
            return false;
        }
        return ++since_ >= patience_;
    }
    double best() const { return best_; }

private:
    int patience_;
    double best_ = std::numeric_limits<double>::infinity();
    int since_ = 0;
};

struct TrainLogRow {
    int epoch;
    std::string split;
    double core, id, temp, total;
};

inline void write_train_log(const std::vector<TrainLogRow>& rows, const std::string& path) {
    std::ofstream os(path);
    check(os.good(), "cannot open loss log " + path);
    os << "epoch,split,core,id,temp,total\n";
    char buf[192];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%s,%.12g,%.12g,%.12g,%.12g\n", r.epoch,
                      r.split.c_str(), r.core, r.id, r.temp, r.total);
        os << buf;
    }
}

struct TrainResult {
    Checkpoint checkpoint;  // best-validation snapshot
    std::vector<TrainLogRow> log;
    int epochs_run = 0;
    double first_val_core = 0.0;
    double best_val_core = 0.0;
    double best_val_total = 0.0;
};

namespace detail {

struct TrainData {
    std::vector<Clip> clips;
    std::vector<std::vector<Tensor>> latents;  // pre-encoded, scaled, per clip per frame
    std::vector<std::vector<Tensor>> embeds;   // per clip per frame identity embeddings
};

inline TrainData prepare_split(const std::vector<Clip>& clips, const Autoencoder& codec,
                               double latent_scale, const IdentityEmbedder& embedder) {
    NoGradGuard ng;
    TrainData d;
    d.clips = clips;
    for (const Clip& c : d.clips) {
        std::vector<Tensor> zs, es;
        for (const Tensor& f : c.frames) {
            zs.push_back(scale(codec.encode(f), latent_scale).detach());
            es.push_back(embedder.embed(f).detach());
        }
        d.latents.push_back(std::move(zs));
        d.embeds.push_back(std::move(es));
    }
    return d;
}

// One training/validation sample drawn from a split.
struct SampleLosses {
    Tensor core, id, temp;
    bool has_reg = false;
};

inline SampleLosses draw_sample(const TrainData& data, const Denoiser& model,
                                const Denoiser* teacher, const Autoencoder& codec,
                                double latent_scale, const IdentityEmbedder& embedder,
                                const TrainConfig& cfg, bool with_reg, Rng& rng) {
    int ci = rng.uniform_int(static_cast<int>(data.clips.size()));
    const Clip& clip = data.clips[static_cast<size_t>(ci)];
    int t = 1 + rng.uniform_int(clip.T() - 1);
    double s = rng.log_uniform(cfg.s_min, cfg.s_max);
    ReferenceChoice ref = select_reference(clip, data.clips, {cfg.p_mismatch}, rng);
    const Tensor& ref_emb =
        data.embeds[static_cast<size_t>(ref.pool_index >= 0 ? ref.pool_index : ci)]
                   [static_cast<size_t>(ref.frame_index)];
    const Tensor& z_t = data.latents[static_cast<size_t>(ci)][static_cast<size_t>(t)];
    int h = z_t.shape()[1], w = z_t.shape()[2];

    auto predict_at = [&](const Tensor& z_clean, int token) {
        auto [z_noisy, eps] = corrupt(z_clean, s, rng);
        Conditioning cond = make_conditioning(ref_emb, token, s, h, w);
        Tensor eps_hat = model.predict(z_noisy, cond);
        Tensor target = eps;
        if (teacher) {
            NoGradGuard ng;
            target = teacher->predict(z_noisy, cond).detach();
        }
        return std::tuple<Tensor, Tensor, Tensor>{std::move(z_noisy), std::move(eps_hat),
                                                  std::move(target)};
    };

    SampleLosses out;
    auto [z_noisy_t, eps_hat_t, target_t] = predict_at(z_t, clip.visemes.tokens[static_cast<size_t>(t)]);
    out.core = mse(eps_hat_t, target_t);

    if (with_reg) {
        const Tensor& z_p = data.latents[static_cast<size_t>(ci)][static_cast<size_t>(t - 1)];
        auto [z_noisy_p, eps_hat_p, target_p] =
            predict_at(z_p, clip.visemes.tokens[static_cast<size_t>(t - 1)]);
        // one-step denoised estimate feeds the decoded-frame regularizers
        Tensor img_p = codec.decode(scale(sub(z_noisy_p, scale(eps_hat_p, s)), 1.0 / latent_scale));
        Tensor img_t = codec.decode(scale(sub(z_noisy_t, scale(eps_hat_t, s)), 1.0 / latent_scale));
        std::vector<Tensor> frames{img_p, img_t};
        out.id = loss_id(frames, ref_emb, embedder);
        out.temp = loss_temp(frames, {clip.flows[static_cast<size_t>(t - 1)]});
        out.has_reg = true;
    }
    return out;
}

inline TrainResult train_denoiser(const Manifest& manifest, const Checkpoint& codec_ckpt,
                                  const Checkpoint* teacher_ckpt, const TrainConfig& cfg) {
    cfg.validate();
    check(!manifest.records.empty(), "train: empty manifest");

    Autoencoder codec = codec_from_checkpoint(codec_ckpt);
    codec.set_trainable(false);
    double latent_scale = latent_scale_of(codec_ckpt);
    IdentityEmbedder embedder;

    // clip-level split, validation clips taken from the tail
    std::vector<Clip> train_clips, val_clips;
    int n = static_cast<int>(manifest.records.size());
    int n_val = std::max(1, static_cast<int>(cfg.val_fraction * n));
    check(n - n_val >= 1, "train: not enough clips for the validation split");
    for (int i = 0; i < n; ++i) {
        Clip c = load_clip(manifest.records[static_cast<size_t>(i)]);
        (i >= n - n_val ? val_clips : train_clips).push_back(std::move(c));
    }
    if (cfg.p_mismatch > 0.0)
        check(train_clips.size() >= 2 && val_clips.size() >= 2,
              "train: mismatched references need >= 2 clips in both splits");

    TrainData train_data = prepare_split(train_clips, codec, latent_scale, embedder);
    TrainData val_data = prepare_split(val_clips, codec, latent_scale, embedder);

    std::unique_ptr<Denoiser> teacher;
    if (teacher_ckpt) {
        teacher = std::make_unique<Denoiser>(Denoiser::from_checkpoint(*teacher_ckpt));
        teacher->set_trainable(false);
    }
    Denoiser model(teacher_ckpt ? DenoiserConfig::student() : DenoiserConfig::teacher(),
                   cfg.seed ^ 0x90DE1ull);
    Adam opt(model.params(), cfg.lr);
    Rng rng(cfg.seed ^ 0x7EA4C4ull);

    uint64_t teacher_hash_before = teacher ? teacher->params_hash() : 0;

    auto evaluate = [&](const TrainData& data) {
        NoGradGuard ng;
        Rng vrng(cfg.seed ^ 0x4A11DA7Eull);  // same draws every epoch: comparable evals
        double core = 0.0, id = 0.0, temp = 0.0;
        for (int i = 0; i < cfg.val_samples; ++i) {
            SampleLosses s = draw_sample(data, model, teacher.get(), codec, latent_scale,
                                         embedder, cfg, true, vrng);
            core += s.core.item();
            id += s.id.item();
            temp += s.temp.item();
        }
        double inv = 1.0 / cfg.val_samples;
        core *= inv;
        id *= inv;
        temp *= inv;
        return TrainLogRow{0, "val", core, id, temp,
                           core + cfg.lambda_id * id + cfg.lambda_temp * temp};
    };

    TrainResult result;
    result.best_val_total = std::numeric_limits<double>::infinity();
    EarlyStopper stopper(cfg.patience);
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        double tr_core = 0.0, tr_id = 0.0, tr_temp = 0.0;
        for (int step = 0; step < cfg.steps_per_epoch; ++step) {
            Tensor core_sum({1}, 0.0), id_sum({1}, 0.0), temp_sum({1}, 0.0);
            for (int b = 0; b < cfg.batch; ++b) {
                SampleLosses s = draw_sample(train_data, model, teacher.get(), codec,
                                             latent_scale, embedder, cfg, b < cfg.reg_samples,
                                             rng);
                core_sum = add(core_sum, s.core);
                if (s.has_reg) {
                    id_sum = add(id_sum, s.id);
                    temp_sum = add(temp_sum, s.temp);
                }
            }
            Tensor batch_loss = total_loss(scale(core_sum, 1.0 / cfg.batch),
                                           scale(id_sum, 1.0 / cfg.reg_samples),
                                           scale(temp_sum, 1.0 / cfg.reg_samples),
                                           cfg.lambda_id, cfg.lambda_temp);
            tr_core += core_sum.item() / cfg.batch;
            tr_id += id_sum.item() / cfg.reg_samples;
            tr_temp += temp_sum.item() / cfg.reg_samples;
            backward(batch_loss);
            opt.step();
        }
        double inv = 1.0 / cfg.steps_per_epoch;
        result.log.push_back({epoch, "train", tr_core * inv, tr_id * inv, tr_temp * inv,
                              tr_core * inv + cfg.lambda_id * tr_id * inv +
                                  cfg.lambda_temp * tr_temp * inv});

        TrainLogRow val = evaluate(val_data);
        val.epoch = epoch;
        result.log.push_back(val);
        result.epochs_run = epoch;
        if (epoch == 1) result.first_val_core = val.core;
        if (val.total < result.best_val_total) {
            result.best_val_total = val.total;
            result.best_val_core = val.core;
            result.checkpoint = model.to_checkpoint();
        }
        if (stopper.update(val.total)) break;
    }

    if (teacher)
        check(teacher->params_hash() == teacher_hash_before,
              "distill: teacher parameters were mutated during distillation");
    return result;
}

}  // namespace detail

inline TrainResult train_teacher(const Manifest& manifest, const Checkpoint& codec_ckpt,
                                 const TrainConfig& cfg) {
    return detail::train_denoiser(manifest, codec_ckpt, nullptr, cfg);
}

inline TrainResult distill_student(const Manifest& manifest, const Checkpoint& codec_ckpt,
                                   const Checkpoint& teacher_ckpt, const TrainConfig& cfg) {
    return detail::train_denoiser(manifest, codec_ckpt, &teacher_ckpt, cfg);
}

}  // namespace tsd
