#pragma once

// Quality metrics (PSNR vs the VAE reconstruction, temporal L1, flicker std),
// the single-threaded latency benchmark, and the quality–latency frontier.

#include <algorithm>
#include <chrono>

#include <json.hpp>

#include "tsd/sampler.hpp"

namespace tsd {

// ------------------------------------------------------------- metrics

// d_t = spatial mean of |frame_t - frame_{t-1}|; returns (mean of d_t,
// population std of d_t). Needs at least two frames.
inline std::pair<double, double> temporal_stats(const std::vector<Tensor>& frames) {
    check(frames.size() >= 2,
          "temporal metrics need >= 2 frames, got " + std::to_string(frames.size()));
    std::vector<double> d;
    for (size_t t = 1; t < frames.size(); ++t) {
        check(frames[t].shape() == frames[t - 1].shape(), "temporal metrics: shape mismatch");
        double m = 0.0;
        for (size_t i = 0; i < frames[t].data().size(); ++i)
            m += std::fabs(frames[t].data()[i] - frames[t - 1].data()[i]);
        d.push_back(m / static_cast<double>(frames[t].numel()));
    }
    double mean = 0.0;
    for (double v : d) mean += v;
    mean /= static_cast<double>(d.size());
    double var = 0.0;
    for (double v : d) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d.size());
    return {mean, std::sqrt(var)};
}

struct CaseMetrics {
    double psnr = 0.0;
    double temporal_l1 = 0.0;
    double flicker_std = 0.0;
};

struct MethodReport {
    std::string name;
    std::vector<CaseMetrics> cases;
    double psnr_mean = 0.0, psnr_std = 0.0;
    double temporal_l1_mean = 0.0;
    double flicker_mean = 0.0;

    void aggregate() {
        check(!cases.empty(), "quality report: no cases");
        double n = static_cast<double>(cases.size());
        psnr_mean = temporal_l1_mean = flicker_mean = 0.0;
        for (const auto& c : cases) {
            psnr_mean += c.psnr;
            temporal_l1_mean += c.temporal_l1;
            flicker_mean += c.flicker_std;
        }
        psnr_mean /= n;
        temporal_l1_mean /= n;
        flicker_mean /= n;
        double var = 0.0;
        for (const auto& c : cases) var += (c.psnr - psnr_mean) * (c.psnr - psnr_mean);
        psnr_std = std::sqrt(var / n);  // population std
    }
};

struct QualityReport {
    int K = 0;
    double s_eval = 0.5;
    int case_count = 0;
    MethodReport noisy, teacher, student;
};

// ------------------------------------------------------------- evaluation

struct EvalConfig {
    double s_eval = 0.5;  // corruption level for the noisy baseline and denoiser inputs
    int cases = 4;        // held-out clips, taken from the manifest tail
    uint64_t seed = 0;
};

inline QualityReport eval_quality(const Manifest& manifest, const Checkpoint& codec_ckpt,
                                  const Checkpoint& teacher_ckpt, const Checkpoint& student_ckpt,
                                  const StepSchedule& schedule, const EvalConfig& cfg = {}) {
    check(cfg.cases >= 1, "eval: need at least one case");
    check(static_cast<int>(manifest.records.size()) >= cfg.cases,
          "eval: manifest has " + std::to_string(manifest.records.size()) + " clips, need " +
              std::to_string(cfg.cases));
    check(schedule.K >= 1, "eval: schedule not built");
    check(std::fabs(schedule.levels[0] - cfg.s_eval) < 1e-12,
          "eval: schedule starts at " + std::to_string(schedule.levels[0]) +
              " but s_eval is " + std::to_string(cfg.s_eval));

    NoGradGuard ng;
    Autoencoder codec = codec_from_checkpoint(codec_ckpt);
    double ls = latent_scale_of(codec_ckpt);
    Denoiser teacher = Denoiser::from_checkpoint(teacher_ckpt);
    Denoiser student = Denoiser::from_checkpoint(student_ckpt);
    IdentityEmbedder embedder;

    QualityReport report;
    report.K = schedule.K;
    report.s_eval = cfg.s_eval;
    report.case_count = cfg.cases;
    report.noisy.name = "noisy";
    report.teacher.name = "teacher";
    report.student.name = "student";

    size_t first = manifest.records.size() - static_cast<size_t>(cfg.cases);
    for (int ci = 0; ci < cfg.cases; ++ci) {
        Clip clip = load_clip(manifest.records[first + static_cast<size_t>(ci)]);
        check(clip.T() >= 2, "eval: case clip needs >= 2 frames");
        Rng rng = Rng(cfg.seed ^ 0xE7A1B0B0ull).fork(static_cast<uint64_t>(ci));

        Tensor ref_emb = embedder.embed(clip.frames[0]).detach();
        std::vector<Tensor> recon, noisy_f, teacher_f, student_f;
        for (int t = 0; t < clip.T(); ++t) {
            Tensor z = scale(codec.encode(clip.frames[static_cast<size_t>(t)]), ls).detach();
            int h = z.shape()[1], w = z.shape()[2];
            recon.push_back(codec.decode(scale(z, 1.0 / ls)).detach());

            Tensor eps = sample_normal(rng, z.shape());
            Tensor z_noisy = add(z, scale(eps, cfg.s_eval)).detach();
            noisy_f.push_back(codec.decode(scale(z_noisy, 1.0 / ls)).detach());

            int token = clip.visemes.tokens[static_cast<size_t>(t)];
            auto cond_at = [&](double s) { return make_conditioning(ref_emb, token, s, h, w); };
            for (const Denoiser* model : {&teacher, &student}) {
                DenoiserPredictor pred(*model);
                Tensor zK = run_schedule(z_noisy.detach(), schedule, pred, cond_at);
                quantize_f32(zK.data());
                (model == &teacher ? teacher_f : student_f)
                    .push_back(codec.decode(scale(zK, 1.0 / ls)).detach());
            }
        }

        auto case_metrics = [&](const std::vector<Tensor>& frames) {
            CaseMetrics m;
            double p = 0.0;
            for (size_t t = 0; t < frames.size(); ++t) p += psnr(frames[t], recon[t]);
            m.psnr = p / static_cast<double>(frames.size());
            auto [l1, fl] = temporal_stats(frames);
            m.temporal_l1 = l1;
            m.flicker_std = fl;
            return m;
        };
        report.noisy.cases.push_back(case_metrics(noisy_f));
        report.teacher.cases.push_back(case_metrics(teacher_f));
        report.student.cases.push_back(case_metrics(student_f));
    }
    report.noisy.aggregate();
    report.teacher.aggregate();
    report.student.aggregate();
    return report;
}

// ------------------------------------------------------------- latency

struct LatencyStats {
    double mean_ms = 0.0;
    double p95_ms = 0.0;
    double fps = 0.0;
};

// Nearest-rank p95: value at index ceil(0.95*n) of the sorted sample.
inline LatencyStats latency_stats(std::vector<double> samples_ms) {
    check(!samples_ms.empty(), "latency stats: empty sample");
    LatencyStats s;
    for (double v : samples_ms) s.mean_ms += v;
    s.mean_ms /= static_cast<double>(samples_ms.size());
    std::sort(samples_ms.begin(), samples_ms.end());
    size_t rank = static_cast<size_t>(
        std::ceil(0.95 * static_cast<double>(samples_ms.size())));
    s.p95_ms = samples_ms[rank - 1];
    s.fps = 1000.0 / s.mean_ms;
    return s;
}

struct BenchReport {
    std::string model;  // "teacher" | "student"
    std::string mode;   // "e1" | "e2"
    int K = 0;
    int resolution = 0;
    int samples = 0;
    double mean_ms = 0.0, p95_ms = 0.0, fps = 0.0;
};

struct BenchConfig {
    std::vector<int> K_list{2, 4, 8};
    int repeats = 50;
    int warmup = 3;
};

// Wall-clock per full-frame inference (conditioning build + K denoiser steps
// + decode in E1), single-threaded on a monotonic clock; warmup excluded.
inline std::vector<BenchReport> bench_latency(const InferenceRequest& tmpl,
                                              const std::string& model_name,
                                              const Checkpoint& model_ckpt,
                                              const Checkpoint& codec_ckpt,
                                              const BenchConfig& cfg, Rng& rng) {
    check(cfg.repeats >= 1, "bench: repeats must be >= 1");
    check(cfg.warmup >= 0, "bench: warmup must be >= 0");
    check(!cfg.K_list.empty(), "bench: empty step list");

    NoGradGuard ng;
    Autoencoder codec = codec_from_checkpoint(codec_ckpt);
    double ls = latent_scale_of(codec_ckpt);
    Denoiser model = Denoiser::from_checkpoint(model_ckpt);
    IdentityEmbedder embedder;
    Tensor ref_emb = embedder.embed(tmpl.ref_image).detach();
    Tensor z_ref = scale(codec.encode(tmpl.ref_image), ls).detach();
    int h = z_ref.shape()[1], w = z_ref.shape()[2];
    DenoiserPredictor pred(model);

    std::vector<BenchReport> reports;
    for (int K : cfg.K_list) {
        StepSchedule sched = build_schedule(K, 1.0);
        Tensor z0 = add(z_ref, scale(sample_normal(rng, z_ref.shape()), sched.levels[0])).detach();
        std::vector<double> samples_ms;
        for (int i = 0; i < cfg.warmup + cfg.repeats; ++i) {
            auto start = std::chrono::steady_clock::now();
            Tensor z = run_schedule(z0.detach(), sched, pred, [&](double s) {
                return make_conditioning(ref_emb, 0, s, h, w);
            });
            if (tmpl.mode == InferMode::E1) {
                Tensor frame = codec.decode(scale(z, 1.0 / ls));
                (void)frame;
            }
            auto stop = std::chrono::steady_clock::now();
            if (i >= cfg.warmup)
                samples_ms.push_back(
                    std::chrono::duration<double, std::milli>(stop - start).count());
        }
        LatencyStats s = latency_stats(samples_ms);
        BenchReport r;
        r.model = model_name;
        r.mode = tmpl.mode == InferMode::E1 ? "e1" : "e2";
        r.K = K;
        r.resolution = tmpl.ref_image.shape()[1];
        r.samples = cfg.repeats;
        r.mean_ms = s.mean_ms;
        r.p95_ms = s.p95_ms;
        r.fps = s.fps;
        reports.push_back(std::move(r));
    }
    return reports;
}

// ------------------------------------------------------------- frontier

struct FrontierRow {
    std::string model;
    int K = 0;
    double psnr_mean = 0.0;
    double latency_mean_ms = 0.0;
    double latency_p95_ms = 0.0;
    double fps = 0.0;
};

// One row per (model, K); quality reports supply the PSNR at each K, bench
// reports the latency. The K sets must match.
inline std::vector<FrontierRow> frontier(const std::vector<QualityReport>& quality,
                                         const std::vector<BenchReport>& bench) {
    std::vector<FrontierRow> rows;
    for (const std::string& model : {std::string("teacher"), std::string("student")}) {
        for (const QualityReport& q : quality) {
            const BenchReport* b = nullptr;
            for (const BenchReport& cand : bench)
                if (cand.model == model && cand.K == q.K) b = &cand;
            check(b != nullptr, "frontier: no bench report for " + model + " at K=" +
                                    std::to_string(q.K));
            FrontierRow r;
            r.model = model;
            r.K = q.K;
            r.psnr_mean = (model == "teacher" ? q.teacher : q.student).psnr_mean;
            r.latency_mean_ms = b->mean_ms;
            r.latency_p95_ms = b->p95_ms;
            r.fps = b->fps;
            rows.push_back(std::move(r));
        }
    }
    for (const BenchReport& b : bench) {
        bool found = false;
        for (const QualityReport& q : quality) found = found || q.K == b.K;
        check(found, "frontier: no quality report for K=" + std::to_string(b.K));
    }
    std::sort(rows.begin(), rows.end(), [](const FrontierRow& a, const FrontierRow& b) {
        return a.model != b.model ? a.model < b.model : a.K < b.K;
    });
    return rows;
}

// ------------------------------------------------------------- report IO

inline void write_quality_csv(const std::vector<QualityReport>& reports,
                              const std::string& path) {
    std::ofstream os(path);
    check(os.good(), "cannot open " + path);
    os << "K,s_eval,method,psnr_mean,psnr_std,temporal_l1,flicker_std\n";
    char buf[256];
    for (const QualityReport& q : reports)
        for (const MethodReport* m : {&q.noisy, &q.teacher, &q.student}) {
            std::snprintf(buf, sizeof(buf), "%d,%.12g,%s,%.12g,%.12g,%.12g,%.12g\n", q.K,
                          q.s_eval, m->name.c_str(), m->psnr_mean, m->psnr_std,
                          m->temporal_l1_mean, m->flicker_mean);
            os << buf;
        }
}

inline void write_bench_csv(const std::vector<BenchReport>& reports, const std::string& path) {
    std::ofstream os(path);
    check(os.good(), "cannot open " + path);
    os << "model,mode,K,resolution,samples,mean_ms,p95_ms,fps\n";
    char buf[256];
    for (const BenchReport& r : reports) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%d,%d,%d,%.6g,%.6g,%.6g\n", r.model.c_str(),
                      r.mode.c_str(), r.K, r.resolution, r.samples, r.mean_ms, r.p95_ms, r.fps);
        os << buf;
    }
}

inline void write_frontier_csv(const std::vector<FrontierRow>& rows, const std::string& path) {
    std::ofstream os(path);
    check(os.good(), "cannot open " + path);
    os << "model,K,psnr_mean,latency_mean_ms,latency_p95_ms,fps\n";
    char buf[256];
    for (const FrontierRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%d,%.12g,%.6g,%.6g,%.6g\n", r.model.c_str(), r.K,
                      r.psnr_mean, r.latency_mean_ms, r.latency_p95_ms, r.fps);
        os << buf;
    }
}

inline void write_quality_json(const std::vector<QualityReport>& reports,
                               const std::string& path) {
    nlohmann::json j = nlohmann::json::array();
    for (const QualityReport& q : reports) {
        nlohmann::json methods;
        for (const MethodReport* m : {&q.noisy, &q.teacher, &q.student}) {
            nlohmann::json cases = nlohmann::json::array();
            for (const CaseMetrics& c : m->cases)
                cases.push_back({{"psnr", c.psnr},
                                 {"temporal_l1", c.temporal_l1},
                                 {"flicker_std", c.flicker_std}});
            methods[m->name] = {{"psnr_mean", m->psnr_mean},
                                {"psnr_std", m->psnr_std},
                                {"temporal_l1", m->temporal_l1_mean},
                                {"flicker_std", m->flicker_mean},
                                {"cases", cases}};
        }
        j.push_back({{"K", q.K},
                     {"s_eval", q.s_eval},
                     {"case_count", q.case_count},
                     {"methods", methods}});
    }
    std::ofstream os(path);
    check(os.good(), "cannot open " + path);
    os << j.dump(2) << "\n";
}

inline void write_bench_json(const std::vector<BenchReport>& reports, const std::string& path) {
    nlohmann::json j = nlohmann::json::array();
    for (const BenchReport& r : reports)
        j.push_back({{"model", r.model},
                     {"mode", r.mode},
                     {"K", r.K},
                     {"resolution", r.resolution},
                     {"samples", r.samples},
                     {"mean_ms", r.mean_ms},
                     {"p95_ms", r.p95_ms},
                     {"fps", r.fps}});
    std::ofstream os(path);
    check(os.good(), "cannot open " + path);
    os << j.dump(2) << "\n";
}

}  // namespace tsd
