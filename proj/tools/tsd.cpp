// Command-line entry point for the full pipeline: corpus generation, codec
// and denoiser training, few-step inference, evaluation, benchmarking, and
// the end-to-end `reproduce` chain.

#include <CLI11.hpp>

#include "tsd/pipeline.hpp"

namespace {

// --seed falls back to the TSD_SEED environment variable, then 0.
uint64_t default_seed() {
    const char* env = std::getenv("TSD_SEED");
    if (env == nullptr || *env == '\0') return 0;
    try {
        return std::stoull(env);
    } catch (const std::exception&) {
        throw std::runtime_error(std::string("TSD_SEED is not an integer: ") + env);
    }
}

void add_train_flags(CLI::App* cmd, tsd::TrainConfig& cfg) {
    cmd->add_option("--batch", cfg.batch, "Batch size");
    cmd->add_option("--lr", cfg.lr, "Learning rate");
    cmd->add_option("--patience", cfg.patience, "Early-stop patience (evaluations)");
    cmd->add_option("--lambda-id", cfg.lambda_id, "Identity loss weight");
    cmd->add_option("--lambda-temp", cfg.lambda_temp, "Temporal loss weight");
    cmd->add_option("--s-min", cfg.s_min, "Min training noise strength");
    cmd->add_option("--s-max", cfg.s_max, "Max training noise strength");
    cmd->add_option("--p-mismatch", cfg.p_mismatch, "Mismatched-reference probability");
    cmd->add_option("--steps-per-epoch", cfg.steps_per_epoch, "Optimizer steps per epoch");
    cmd->add_option("--max-epochs", cfg.max_epochs, "Epoch cap");
    cmd->add_option("--val-fraction", cfg.val_fraction, "Clip fraction held out for validation");
    cmd->add_option("--reg-samples", cfg.reg_samples, "Regularized samples per batch");
    cmd->add_option("--val-samples", cfg.val_samples, "Validation draws per evaluation");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TempoSyncDiff: few-step latent diffusion for talking-face video"};
    app.require_subcommand(1);
    uint64_t seed = 0;
    try {
        seed = default_seed();
    } catch (const std::exception& e) {
        std::cerr << "error (cli): " << e.what() << "\n";
        return 1;
    }

    tsd::GenDataOpts gen;
    gen.seed = seed;
    CLI::App* c_gen = app.add_subcommand("gen-data", "Generate the synthetic corpus");
    c_gen->add_option("--dir", gen.dir, "Run directory");
    c_gen->add_option("--clips", gen.clips, "Number of clips");
    c_gen->add_option("--seed", gen.seed, "Corpus seed");
    c_gen->add_option("--frames", gen.T, "Frames per clip");
    c_gen->add_option("--height", gen.H, "Frame height");
    c_gen->add_option("--width", gen.W, "Frame width");

    tsd::TrainVaeOpts vae;
    vae.cfg.seed = seed + 1;
    CLI::App* c_vae = app.add_subcommand("train-vae", "Train the latent codec");
    c_vae->add_option("--manifest", vae.manifest, "Corpus manifest")->required();
    c_vae->add_option("--dir", vae.dir, "Run directory");
    c_vae->add_option("--epochs", vae.cfg.epochs, "Training epochs");
    c_vae->add_option("--batch", vae.cfg.batch, "Batch size");
    c_vae->add_option("--lr", vae.cfg.lr, "Learning rate");
    c_vae->add_option("--height", vae.cfg.H, "Frame height");
    c_vae->add_option("--width", vae.cfg.W, "Frame width");
    c_vae->add_option("--seed", vae.cfg.seed, "Training seed");

    tsd::TrainDenoiserOpts teach;
    teach.cfg.seed = seed + 2;
    CLI::App* c_teach = app.add_subcommand("train-teacher", "Train the teacher denoiser");
    c_teach->add_option("--manifest", teach.manifest, "Corpus manifest")->required();
    c_teach->add_option("--codec", teach.codec, "Codec checkpoint")->required();
    c_teach->add_option("--dir", teach.dir, "Run directory");
    c_teach->add_option("--seed", teach.cfg.seed, "Training seed");
    add_train_flags(c_teach, teach.cfg);

    tsd::TrainDenoiserOpts dist;
    dist.cfg.seed = seed + 3;
    CLI::App* c_dist = app.add_subcommand("distill", "Distill the student denoiser");
    c_dist->add_option("--manifest", dist.manifest, "Corpus manifest")->required();
    c_dist->add_option("--codec", dist.codec, "Codec checkpoint")->required();
    c_dist->add_option("--teacher", dist.teacher, "Frozen teacher checkpoint")->required();
    c_dist->add_option("--dir", dist.dir, "Run directory");
    c_dist->add_option("--seed", dist.cfg.seed, "Training seed");
    add_train_flags(c_dist, dist.cfg);

    tsd::InferOpts inf;
    inf.seed = seed;
    CLI::App* c_inf = app.add_subcommand("infer", "Run few-step inference on a clip");
    c_inf->add_option("--model", inf.model, "Denoiser checkpoint")->required();
    c_inf->add_option("--codec", inf.codec, "Codec checkpoint")->required();
    c_inf->add_option("--manifest", inf.manifest, "Corpus manifest")->required();
    c_inf->add_option("--clip", inf.clip_index, "Clip index for reference and visemes");
    c_inf->add_option("--dir", inf.dir, "Run directory");
    c_inf->add_option("--mode", inf.mode, "e1 (decode frames) or e2 (emit latents)");
    c_inf->add_option("--steps", inf.steps, "Denoising steps K");
    c_inf->add_option("--s0", inf.s0, "Initial noise strength");
    c_inf->add_option("--seed", inf.seed, "Inference seed");

    tsd::DecodeOpts dec;
    CLI::App* c_dec = app.add_subcommand("decode", "Decode an E2 latent stream to frames");
    c_dec->add_option("--latents", dec.latents, "Latent stream file")->required();
    c_dec->add_option("--codec", dec.codec, "Codec checkpoint")->required();
    c_dec->add_option("--dir", dec.dir, "Run directory");

    tsd::EvalOpts ev;
    ev.cfg.seed = seed + 4;
    CLI::App* c_ev = app.add_subcommand("eval", "Quality evaluation on held-out clips");
    c_ev->add_option("--manifest", ev.manifest, "Corpus manifest")->required();
    c_ev->add_option("--codec", ev.codec, "Codec checkpoint")->required();
    c_ev->add_option("--teacher", ev.teacher, "Teacher checkpoint")->required();
    c_ev->add_option("--student", ev.student, "Student checkpoint")->required();
    c_ev->add_option("--dir", ev.dir, "Run directory");
    c_ev->add_option("--steps", ev.steps, "Denoising steps K");
    c_ev->add_option("--s-eval", ev.cfg.s_eval, "Evaluation corruption level");
    c_ev->add_option("--cases", ev.cfg.cases, "Held-out cases");
    c_ev->add_option("--seed", ev.cfg.seed, "Evaluation seed");

    tsd::BenchOpts be;
    be.seed = seed + 5;
    CLI::App* c_be = app.add_subcommand("bench", "Single-frame latency benchmark");
    c_be->add_option("--model", be.model, "Denoiser checkpoint")->required();
    c_be->add_option("--model-name", be.model_name, "Label for the report (teacher|student)");
    c_be->add_option("--codec", be.codec, "Codec checkpoint")->required();
    c_be->add_option("--dir", be.dir, "Run directory");
    c_be->add_option("--mode", be.mode, "e1 or e2");
    c_be->add_option("--steps", be.K_list, "Step counts to time")->delimiter(',');
    c_be->add_option("--repeats", be.repeats, "Timed repetitions per K");
    c_be->add_option("--warmup", be.warmup, "Untimed warmup repetitions");
    c_be->add_option("--resolution", be.resolution, "Square frame resolution");
    c_be->add_option("--seed", be.seed, "Benchmark seed");

    tsd::ReproduceOpts rep;
    rep.seed = seed;
    CLI::App* c_rep = app.add_subcommand(
        "reproduce", "Full chain: gen-data, train-vae, train-teacher, distill, eval, bench");
    c_rep->add_option("--dir", rep.dir, "Run directory");
    c_rep->add_option("--seed", rep.seed, "Master seed");
    c_rep->add_option("--clips", rep.clips, "Corpus size");
    c_rep->add_option("--frames", rep.T, "Frames per clip");
    c_rep->add_option("--height", rep.H, "Frame height");
    c_rep->add_option("--width", rep.W, "Frame width");
    c_rep->add_option("--codec-epochs", rep.codec_epochs, "Codec training epochs");
    c_rep->add_option("--eval-steps", rep.eval_steps, "Headline evaluation K");
    c_rep->add_option("--cases", rep.eval_cases, "Evaluation cases");
    c_rep->add_option("--s-eval", rep.s_eval, "Evaluation corruption level");
    c_rep->add_option("--bench-steps", rep.bench_K, "Benchmark step counts")->delimiter(',');
    c_rep->add_option("--bench-repeats", rep.bench_repeats, "Timed repetitions per K");
    add_train_flags(c_rep, rep.train);

    CLI11_PARSE(app, argc, argv);

    std::string module = "cli";
    try {
        if (*c_gen) {
            module = "corpus";
            tsd::cmd_gen_data(gen);
        } else if (*c_vae) {
            module = "codec";
            tsd::cmd_train_vae(vae);
        } else if (*c_teach) {
            module = "denoise";
            tsd::cmd_train_denoiser(teach);
        } else if (*c_dist) {
            module = "denoise";
            tsd::cmd_train_denoiser(dist);
        } else if (*c_inf) {
            module = "sampler";
            tsd::cmd_infer(inf);
        } else if (*c_dec) {
            module = "sampler";
            tsd::cmd_decode(dec);
        } else if (*c_ev) {
            module = "evalbench";
            tsd::cmd_eval(ev);
        } else if (*c_be) {
            module = "evalbench";
            tsd::cmd_bench(be);
        } else if (*c_rep) {
            module = "pipeline";
            tsd::reproduce(rep);
        }
    } catch (const std::exception& e) {
        std::cerr << "error (" << module << "): " << e.what() << "\n";
        return 1;
    }
    return 0;
}
