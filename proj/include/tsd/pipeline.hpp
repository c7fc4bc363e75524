#pragma once

// Orchestration layer behind the command-line tool: one function per
// subcommand, each writing its artifacts plus a config snapshot under the
// output directory and indexing them in MANIFEST.json. The `reproduce`
// meta-command chains the full pipeline end to end.

#include "tsd/evalbench.hpp"

namespace tsd {

// ------------------------------------------------------------- run directory

inline void write_json_file(const nlohmann::json& j, const std::string& path) {
    std::ofstream os(path);
    check(os.good(), "cannot open " + path);
    os << j.dump(2) << "\n";
}

// Appends artifact entries to <dir>/MANIFEST.json (an array of
// {file, role, command} objects), creating it on first use.
inline void index_artifacts(const std::string& dir, const std::string& command,
                            const std::vector<std::pair<std::string, std::string>>& entries) {
    std::string path = dir + "/MANIFEST.json";
    nlohmann::json j = nlohmann::json::array();
    if (std::filesystem::exists(path)) {
        std::ifstream is(path);
        j = nlohmann::json::parse(is);
        check(j.is_array(), "run manifest: expected a JSON array in " + path);
    }
    for (const auto& [file, role] : entries)
        j.push_back({{"file", file}, {"role", role}, {"command", command}});
    write_json_file(j, path);
}

inline void write_snapshot(const std::string& dir, const std::string& command,
                           nlohmann::json flags) {
    std::filesystem::create_directories(dir);
    flags["command"] = command;
    std::string file = "config_" + command + ".json";
    write_json_file(flags, dir + "/" + file);
    index_artifacts(dir, command, {{file, "config snapshot"}});
}

// ------------------------------------------------------------- subcommands

struct GenDataOpts {
    std::string dir = "run";
    int clips = 12;
    uint64_t seed = 0;
    int T = 16, H = 64, W = 64;
};

inline Manifest cmd_gen_data(const GenDataOpts& o) {
    write_snapshot(o.dir, "gen-data",
                   {{"dir", o.dir}, {"clips", o.clips}, {"seed", o.seed},
                    {"T", o.T}, {"H", o.H}, {"W", o.W}});
    std::string corpus_dir = o.dir + "/corpus";
    Manifest m = gen_corpus(corpus_dir, o.clips, o.seed, o.T, o.H, o.W);
    index_artifacts(o.dir, "gen-data", {{"corpus/manifest.jsonl", "corpus manifest"}});
    return m;
}

struct TrainVaeOpts {
    std::string manifest;
    std::string dir = "run";
    CodecConfig cfg;
};

inline Checkpoint cmd_train_vae(const TrainVaeOpts& o) {
    write_snapshot(o.dir, "train-vae",
                   {{"manifest", o.manifest}, {"dir", o.dir}, {"H", o.cfg.H}, {"W", o.cfg.W},
                    {"epochs", o.cfg.epochs}, {"batch", o.cfg.batch}, {"lr", o.cfg.lr},
                    {"val_fraction", o.cfg.val_fraction},
                    {"target_latent_std", o.cfg.target_latent_std}, {"seed", o.cfg.seed}});
    CodecTrainResult r = train_codec(read_manifest(o.manifest), o.cfg);
    r.checkpoint.save(o.dir + "/codec.tsdf");
    write_codec_log(r.log, o.dir + "/codec_log.csv");
    index_artifacts(o.dir, "train-vae",
                    {{"codec.tsdf", "codec checkpoint"}, {"codec_log.csv", "loss log"}});
    return r.checkpoint;
}

struct TrainDenoiserOpts {
    std::string manifest;
    std::string codec;
    std::string teacher;  // set for distill, empty for train-teacher
    std::string dir = "run";
    TrainConfig cfg;
};

inline nlohmann::json train_cfg_json(const TrainConfig& c) {
    return {{"batch", c.batch}, {"lr", c.lr}, {"patience", c.patience},
            {"lambda_id", c.lambda_id}, {"lambda_temp", c.lambda_temp},
            {"s_min", c.s_min}, {"s_max", c.s_max}, {"p_mismatch", c.p_mismatch},
            {"steps_per_epoch", c.steps_per_epoch}, {"max_epochs", c.max_epochs},
            {"val_fraction", c.val_fraction}, {"reg_samples", c.reg_samples},
            {"val_samples", c.val_samples}, {"seed", c.seed}};
}

inline TrainResult cmd_train_denoiser(const TrainDenoiserOpts& o) {
    bool distill = !o.teacher.empty();
    std::string command = distill ? "distill" : "train-teacher";
    nlohmann::json snap = train_cfg_json(o.cfg);
    snap["manifest"] = o.manifest;
    snap["codec"] = o.codec;
    snap["dir"] = o.dir;
    if (distill) snap["teacher"] = o.teacher;
    write_snapshot(o.dir, command, snap);

    Manifest m = read_manifest(o.manifest);
    Checkpoint codec_ckpt = Checkpoint::load(o.codec);
    TrainResult r = distill
                        ? distill_student(m, codec_ckpt, Checkpoint::load(o.teacher), o.cfg)
                        : train_teacher(m, codec_ckpt, o.cfg);
    std::string stem = distill ? "student" : "teacher";
    r.checkpoint.save(o.dir + "/" + stem + ".tsdf");
    write_train_log(r.log, o.dir + "/" + stem + "_log.csv");
    index_artifacts(o.dir, command,
                    {{stem + ".tsdf", stem + " checkpoint"}, {stem + "_log.csv", "loss log"}});
    return r;
}

struct InferOpts {
    std::string model;
    std::string codec;
    std::string manifest;  // reference/track source
    int clip_index = 0;
    std::string dir = "run";
    std::string mode = "e1";  // "e1" | "e2"
    int steps = 4;
    double s0 = 1.0;
    uint64_t seed = 0;
};

// E1 writes decoded frames, E2 the final latents; both use the stream file
// format (a frame is just a {3,H,W} tensor).
inline void cmd_infer(const InferOpts& o) {
    check(o.mode == "e1" || o.mode == "e2", "infer: mode must be e1 or e2, got " + o.mode);
    write_snapshot(o.dir, "infer",
                   {{"model", o.model}, {"codec", o.codec}, {"manifest", o.manifest},
                    {"clip_index", o.clip_index}, {"dir", o.dir}, {"mode", o.mode},
                    {"steps", o.steps}, {"s0", o.s0}, {"seed", o.seed}});
    Manifest m = read_manifest(o.manifest);
    check(o.clip_index >= 0 && o.clip_index < static_cast<int>(m.records.size()),
          "infer: clip index " + std::to_string(o.clip_index) + " out of range");
    Clip clip = load_clip(m.records[static_cast<size_t>(o.clip_index)]);

    InferenceRequest req;
    req.mode = o.mode == "e1" ? InferMode::E1 : InferMode::E2;
    req.ref_image = clip.frames[0];
    req.track = clip.visemes;
    req.schedule = build_schedule(o.steps, o.s0);
    Rng rng(o.seed ^ 0x1FE4ull);
    InferResult result = infer(req, Checkpoint::load(o.model), Checkpoint::load(o.codec), rng);

    if (req.mode == InferMode::E1) {
        write_latent_stream(result.frames, o.dir + "/frames.tsdl");
        index_artifacts(o.dir, "infer", {{"frames.tsdl", "decoded frames"}});
    } else {
        write_latent_stream(result.latents, o.dir + "/latents.tsdl");
        index_artifacts(o.dir, "infer", {{"latents.tsdl", "final latents"}});
    }
}

struct DecodeOpts {
    std::string latents;
    std::string codec;
    std::string dir = "run";
};

// Deferred half of E2: decode a latent stream to frames.
inline void cmd_decode(const DecodeOpts& o) {
    write_snapshot(o.dir, "decode",
                   {{"latents", o.latents}, {"codec", o.codec}, {"dir", o.dir}});
    Checkpoint codec_ckpt = Checkpoint::load(o.codec);
    Autoencoder codec = codec_from_checkpoint(codec_ckpt);
    double ls = latent_scale_of(codec_ckpt);
    NoGradGuard ng;
    std::vector<Tensor> frames;
    for (const Tensor& z : read_latent_stream(o.latents))
        frames.push_back(codec.decode(scale(z, 1.0 / ls)).detach());
    write_latent_stream(frames, o.dir + "/frames.tsdl");
    index_artifacts(o.dir, "decode", {{"frames.tsdl", "decoded frames"}});
}

struct EvalOpts {
    std::string manifest;
    std::string codec, teacher, student;
    std::string dir = "run";
    int steps = 4;
    EvalConfig cfg;
};

inline QualityReport cmd_eval(const EvalOpts& o) {
    write_snapshot(o.dir, "eval",
                   {{"manifest", o.manifest}, {"codec", o.codec}, {"teacher", o.teacher},
                    {"student", o.student}, {"dir", o.dir}, {"steps", o.steps},
                    {"s_eval", o.cfg.s_eval}, {"cases", o.cfg.cases}, {"seed", o.cfg.seed}});
    QualityReport q = eval_quality(read_manifest(o.manifest), Checkpoint::load(o.codec),
                                   Checkpoint::load(o.teacher), Checkpoint::load(o.student),
                                   build_schedule(o.steps, o.cfg.s_eval), o.cfg);
    write_quality_csv({q}, o.dir + "/quality.csv");
    write_quality_json({q}, o.dir + "/quality.json");
    index_artifacts(o.dir, "eval",
                    {{"quality.csv", "quality report"}, {"quality.json", "quality report"}});
    return q;
}

struct BenchOpts {
    std::string model;
    std::string model_name = "student";
    std::string codec;
    std::string dir = "run";
    std::string mode = "e2";
    std::vector<int> K_list{2, 4, 8};
    int repeats = 50;
    int warmup = 3;
    int resolution = 64;
    uint64_t seed = 0;
};

inline std::vector<BenchReport> cmd_bench(const BenchOpts& o) {
    check(o.mode == "e1" || o.mode == "e2", "bench: mode must be e1 or e2, got " + o.mode);
    check(o.resolution % 8 == 0, "bench: resolution must be divisible by 8");
    nlohmann::json ks = nlohmann::json::array();
    for (int k : o.K_list) ks.push_back(k);
    write_snapshot(o.dir, "bench",
                   {{"model", o.model}, {"model_name", o.model_name}, {"codec", o.codec},
                    {"dir", o.dir}, {"mode", o.mode}, {"steps", ks}, {"repeats", o.repeats},
                    {"warmup", o.warmup}, {"resolution", o.resolution}, {"seed", o.seed}});

    // procedurally rendered reference at the requested resolution
    Clip ref = render_clip(generate_identity(o.seed), o.seed, 2, o.resolution, o.resolution);
    InferenceRequest tmpl;
    tmpl.mode = o.mode == "e1" ? InferMode::E1 : InferMode::E2;
    tmpl.ref_image = ref.frames[0];

    BenchConfig bcfg;
    bcfg.K_list = o.K_list;
    bcfg.repeats = o.repeats;
    bcfg.warmup = o.warmup;
    Rng rng(o.seed ^ 0xBE4C4ull);
    std::vector<BenchReport> reports = bench_latency(tmpl, o.model_name, Checkpoint::load(o.model),
                                                     Checkpoint::load(o.codec), bcfg, rng);
    write_bench_csv(reports, o.dir + "/bench_" + o.model_name + ".csv");
    write_bench_json(reports, o.dir + "/bench_" + o.model_name + ".json");
    index_artifacts(o.dir, "bench",
                    {{"bench_" + o.model_name + ".csv", "latency report"},
                     {"bench_" + o.model_name + ".json", "latency report"}});
    return reports;
}

// ------------------------------------------------------------- reproduce

// Desk-scale defaults for the full chain; tuned so the whole run fits a
// desktop-CPU budget while both denoisers still clear their validation-loss
// targets.
struct ReproduceOpts {
    std::string dir = "run";
    uint64_t seed = 0;
    int clips = 48;
    int T = 16, H = 64, W = 64;
    int codec_epochs = 40;
    TrainConfig train;  // shared teacher/student knobs
    int eval_steps = 4;
    int eval_cases = 4;
    double s_eval = 0.5;
    std::vector<int> bench_K{2, 4, 8};
    int bench_repeats = 20;
    int bench_warmup = 3;
};

struct ReproduceResult {
    Manifest corpus;
    QualityReport quality;
    std::vector<BenchReport> bench;
    TrainResult teacher, student;
};

inline ReproduceResult reproduce(const ReproduceOpts& o) {
    std::filesystem::create_directories(o.dir);
    nlohmann::json snap = train_cfg_json(o.train);
    snap["dir"] = o.dir;
    snap["seed"] = o.seed;
    snap["clips"] = o.clips;
    snap["T"] = o.T;
    snap["H"] = o.H;
    snap["W"] = o.W;
    snap["codec_epochs"] = o.codec_epochs;
    snap["eval_steps"] = o.eval_steps;
    snap["eval_cases"] = o.eval_cases;
    snap["s_eval"] = o.s_eval;
    snap["bench_repeats"] = o.bench_repeats;
    write_snapshot(o.dir, "reproduce", snap);

    ReproduceResult out;
    out.corpus = cmd_gen_data({o.dir, o.clips, o.seed, o.T, o.H, o.W});
    std::string manifest = o.dir + "/corpus/manifest.jsonl";

    CodecConfig ccfg;
    ccfg.H = o.H;
    ccfg.W = o.W;
    ccfg.epochs = o.codec_epochs;
    ccfg.seed = o.seed + 1;
    cmd_train_vae({manifest, o.dir, ccfg});

    TrainConfig tcfg = o.train;
    tcfg.seed = o.seed + 2;
    out.teacher = cmd_train_denoiser({manifest, o.dir + "/codec.tsdf", "", o.dir, tcfg});
    TrainConfig scfg = o.train;
    scfg.seed = o.seed + 3;
    out.student = cmd_train_denoiser(
        {manifest, o.dir + "/codec.tsdf", o.dir + "/teacher.tsdf", o.dir, scfg});

    EvalOpts ev;
    ev.manifest = manifest;
    ev.codec = o.dir + "/codec.tsdf";
    ev.teacher = o.dir + "/teacher.tsdf";
    ev.student = o.dir + "/student.tsdf";
    ev.dir = o.dir;
    ev.steps = o.eval_steps;
    ev.cfg.s_eval = o.s_eval;
    ev.cfg.cases = o.eval_cases;
    ev.cfg.seed = o.seed + 4;
    for (const std::string& name : {std::string("teacher"), std::string("student")}) {
        BenchOpts b;
        b.model = o.dir + "/" + name + ".tsdf";
        b.model_name = name;
        b.codec = o.dir + "/codec.tsdf";
        b.dir = o.dir;
        b.K_list = o.bench_K;
        b.repeats = o.bench_repeats;
        b.warmup = o.bench_warmup;
        b.resolution = o.H;
        b.seed = o.seed + 5;
        std::vector<BenchReport> r = cmd_bench(b);
        out.bench.insert(out.bench.end(), r.begin(), r.end());
    }
    write_bench_csv(out.bench, o.dir + "/table2.csv");

    // the frontier needs quality at every benched K; the eval_steps entry
    // doubles as the headline quality table
    std::vector<QualityReport> per_k;
    bool have_main = false;
    for (int K : o.bench_K) {
        EvalOpts e = ev;
        e.steps = K;
        per_k.push_back(cmd_eval(e));
        if (K == o.eval_steps) {
            out.quality = per_k.back();
            have_main = true;
        }
    }
    if (!have_main) {
        EvalOpts e = ev;
        out.quality = cmd_eval(e);
    }
    write_quality_csv({out.quality}, o.dir + "/table1.csv");
    write_quality_csv(per_k, o.dir + "/quality.csv");
    write_frontier_csv(frontier(per_k, out.bench), o.dir + "/frontier.csv");
    index_artifacts(o.dir, "reproduce",
                    {{"table1.csv", "quality table"}, {"table2.csv", "latency table"},
                     {"frontier.csv", "quality-latency frontier"}});
    return out;
}

}  // namespace tsd
