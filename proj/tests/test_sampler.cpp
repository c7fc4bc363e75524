#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "tsd/sampler.hpp"

using namespace tsd;
namespace fs = std::filesystem;

TEST_CASE("build_schedule: closed forms and telescoping") {
    StepSchedule s1 = build_schedule(1, 1.0);
    CHECK(s1.levels == std::vector<double>{1.0, 0.0});
    CHECK(s1.etas == std::vector<double>{1.0});

    StepSchedule s2 = build_schedule(2, 1.0, 0.4);
    REQUIRE(s2.levels.size() == 3);
    CHECK(s2.levels[0] == 1.0);
    CHECK(s2.levels[1] == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(s2.levels[2] == 0.0);
    CHECK(s2.etas[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(s2.etas[1] == doctest::Approx(0.4).epsilon(1e-12));

    for (int K : {1, 2, 4, 8, 13}) {
        StepSchedule s = build_schedule(K, 0.7);
        double sum = 0.0;
        for (double e : s.etas) sum += e;
        CHECK(sum == doctest::Approx(0.7).epsilon(1e-12));
        for (size_t i = 0; i + 1 < s.levels.size(); ++i) CHECK(s.levels[i] > s.levels[i + 1]);
        CHECK(s.levels.back() == 0.0);
    }
    CHECK_THROWS(build_schedule(0, 1.0));
    CHECK_THROWS(build_schedule(2, -1.0));
    CHECK_THROWS(build_schedule(2, 1.0, 1.5));
}

namespace {

struct OraclePredictor : NoisePredictor {
    Tensor eps;
    Tensor predict(const Tensor&, const Conditioning&) const override { return eps; }
};

struct ZeroPredictor : NoisePredictor {
    Tensor predict(const Tensor& z, const Conditioning&) const override {
        return Tensor(z.shape(), 0.0);
    }
};

Conditioning dummy_cond(double s) {
    Tensor emb({kIdentityEmbedDim}, 0.0);
    emb.data()[0] = 1.0;
    return make_conditioning(emb, 0, s, 8, 8);
}

}  // namespace

TEST_CASE("oracle denoiser recovers the clean latent exactly for K in {1,2,4,8}") {
    Rng rng(10);
    Tensor z = sample_normal(rng, {4, 8, 8});
    OraclePredictor oracle;
    oracle.eps = sample_normal(rng, {4, 8, 8});
    for (int K : {1, 2, 4, 8}) {
        StepSchedule sched = build_schedule(K, 1.0);
        Tensor z0 = add(z, scale(oracle.eps, sched.levels[0])).detach();
        Tensor zK = run_schedule(z0, sched, oracle, dummy_cond);
        double max_abs = 0.0;
        for (size_t i = 0; i < zK.data().size(); ++i)
            max_abs = std::max(max_abs, std::fabs(zK.data()[i] - z.data()[i]));
        CHECK(max_abs < 1e-9);
    }
}

TEST_CASE("zero-output denoiser leaves the initial latent untouched") {
    Rng rng(11);
    Tensor z0 = sample_normal(rng, {4, 8, 8});
    ZeroPredictor zero;
    for (int K : {1, 3, 8}) {
        Tensor zK = run_schedule(z0.detach(), build_schedule(K, 0.9), zero, dummy_cond);
        CHECK(zK.data() == z0.data());
    }
}

TEST_CASE("latent stream: round trip, empty stream, corrupt files") {
    fs::create_directories("tmp_stream");
    Rng rng(12);
    std::vector<Tensor> latents;
    for (int t = 0; t < 3; ++t) {
        Tensor z = sample_normal(rng, {4, 8, 8});
        quantize_f32(z.data());
        latents.push_back(std::move(z));
    }
    write_latent_stream(latents, "tmp_stream/a.tsdl");
    std::vector<Tensor> back = read_latent_stream("tmp_stream/a.tsdl");
    REQUIRE(back.size() == 3);
    for (int t = 0; t < 3; ++t) CHECK(back[static_cast<size_t>(t)].data() == latents[static_cast<size_t>(t)].data());

    write_latent_stream({}, "tmp_stream/empty.tsdl");
    CHECK(read_latent_stream("tmp_stream/empty.tsdl").empty());

    // truncated file reports expected vs actual byte counts
    {
        std::ifstream is("tmp_stream/a.tsdl", std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(is)),
                                std::istreambuf_iterator<char>());
        std::ofstream os("tmp_stream/trunc.tsdl", std::ios::binary);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 100));
    }
    try {
        read_latent_stream("tmp_stream/trunc.tsdl");
        CHECK(false);
    } catch (const std::exception& e) {
        std::string msg = e.what();
        CHECK(msg.find("bytes") != std::string::npos);
        CHECK(msg.find("1024") != std::string::npos);  // expected 256 f32 = 1024 bytes
    }

    {
        std::ofstream os("tmp_stream/bad.tsdl", std::ios::binary);
        os << "NOPE";
    }
    CHECK_THROWS(read_latent_stream("tmp_stream/bad.tsdl"));
    fs::remove_all("tmp_stream");
}

TEST_CASE("infer: E1/E2 equivalence, determinism, validation") {
    // untrained models are fine here: the contract is about plumbing
    Checkpoint codec_ckpt = Autoencoder().to_checkpoint();
    Checkpoint model_ckpt = Denoiser(DenoiserConfig::student(), 4).to_checkpoint();
    Clip clip = render_clip(generate_identity(6), 3, 4, 64, 64);

    InferenceRequest req;
    req.ref_image = clip.frames[0];
    req.track = clip.visemes;
    req.schedule = build_schedule(4, 1.0);

    req.mode = InferMode::E1;
    Rng r1(77);
    InferResult e1 = infer(req, model_ckpt, codec_ckpt, r1);
    REQUIRE(e1.frames.size() == 4);
    REQUIRE(e1.latents.size() == 4);

    req.mode = InferMode::E2;
    Rng r2(77);
    InferResult e2 = infer(req, model_ckpt, codec_ckpt, r2);
    CHECK(e2.frames.empty());
    fs::create_directories("tmp_infer");
    write_latent_stream(e2.latents, "tmp_infer/s.tsdl");
    std::vector<Tensor> loaded = read_latent_stream("tmp_infer/s.tsdl");

    Autoencoder codec = codec_from_checkpoint(codec_ckpt);
    double ls = latent_scale_of(codec_ckpt);
    NoGradGuard ng;
    for (int t = 0; t < 4; ++t) {
        Tensor frame = codec.decode(scale(loaded[static_cast<size_t>(t)], 1.0 / ls));
        CHECK(frame.data() == e1.frames[static_cast<size_t>(t)].data());
    }

    // same seed, same request -> bit-identical latents
    Rng r3(77);
    InferResult again = infer(req, model_ckpt, codec_ckpt, r3);
    for (int t = 0; t < 4; ++t)
        CHECK(again.latents[static_cast<size_t>(t)].data() == e2.latents[static_cast<size_t>(t)].data());

    // absent track: all-zero tokens for the requested frame count
    InferenceRequest plain = req;
    plain.track.reset();
    plain.frames = 2;
    Rng r4(5);
    CHECK(infer(plain, model_ckpt, codec_ckpt, r4).latents.size() == 2);
    plain.frames = 0;
    Rng r5(5);
    CHECK_THROWS(infer(plain, model_ckpt, codec_ckpt, r5));

    // cached-latent init must match the frame count
    InferenceRequest cached = req;
    cached.init = InitSource::Latents;
    cached.init_latents = {e2.latents[0]};
    Rng r6(5);
    CHECK_THROWS(infer(cached, model_ckpt, codec_ckpt, r6));
    cached.init_latents = e2.latents;
    Rng r7(5);
    CHECK(infer(cached, model_ckpt, codec_ckpt, r7).latents.size() == 4);

    // pure-noise init is a distinct, still deterministic path
    InferenceRequest noise = req;
    noise.init = InitSource::PureNoise;
    Rng r8(9), r9(9);
    InferResult n1 = infer(noise, model_ckpt, codec_ckpt, r8);
    InferResult n2 = infer(noise, model_ckpt, codec_ckpt, r9);
    for (int t = 0; t < 4; ++t)
        CHECK(n1.latents[static_cast<size_t>(t)].data() == n2.latents[static_cast<size_t>(t)].data());
    fs::remove_all("tmp_infer");
}
