#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "tsd/codec.hpp"

using namespace tsd;
namespace fs = std::filesystem;

TEST_CASE("psnr closed forms, cap and errors") {
    Tensor a({1, 2, 2}, {0.1, 0.2, 0.3, 0.4});
    CHECK(psnr(a, a) == 99.0);
    CHECK(psnr_from_mse(0.01) == doctest::Approx(20.0).epsilon(1e-12));
    // the noisy-decode operating point back-derived from the published value
    CHECK(psnr_from_mse(0.0026875) == doctest::Approx(25.71).epsilon(1e-3));
    CHECK_THROWS(psnr(a, Tensor({1, 4}, 0.0)));
}

TEST_CASE("psnr properties: symmetry, shift invariance, monotone in MSE") {
    Rng rng(3);
    Tensor a = sample_normal(rng, {3, 4, 4});
    Tensor b = sample_normal(rng, {3, 4, 4});
    for (double& v : a.data()) v = 0.5 + 0.1 * v;
    for (double& v : b.data()) v = 0.5 + 0.1 * v;
    CHECK(psnr(a, b) == doctest::Approx(psnr(b, a)).epsilon(1e-12));

    Tensor a2 = a.detach(), b2 = b.detach();
    for (double& v : a2.data()) v += 0.05;
    for (double& v : b2.data()) v += 0.05;
    CHECK(psnr(a2, b2) == doctest::Approx(psnr(a, b)).epsilon(1e-9));

    CHECK(psnr_from_mse(0.001) > psnr_from_mse(0.002));
}

TEST_CASE("encode/decode shape contracts") {
    Autoencoder codec;
    NoGradGuard ng;
    Tensor img({3, 64, 64}, 0.5);
    Tensor z = codec.encode(img);
    CHECK(z.shape() == Shape{4, 8, 8});
    Tensor out = codec.decode(z);
    CHECK(out.shape() == Shape{3, 64, 64});
    for (double v : out.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    // zero latent decodes to a valid image in range
    Tensor z0({4, 8, 8}, 0.0);
    for (double v : codec.decode(z0).data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    // 128x128 bench resolution
    CHECK(codec.encode(Tensor({3, 128, 128}, 0.2)).shape() == Shape{4, 16, 16});
    CHECK_THROWS(codec.encode(Tensor({3, 60, 60}, 0.0)));
    CHECK_THROWS(codec.decode(Tensor({3, 8, 8}, 0.0)));
}

TEST_CASE("encode is deterministic") {
    Autoencoder codec;
    NoGradGuard ng;
    Rng rng(5);
    Tensor img = sample_normal(rng, {3, 64, 64});
    for (double& v : img.data()) v = std::min(1.0, std::fabs(v) * 0.3);
    CHECK(codec.encode(img).data() == codec.encode(img).data());
}

TEST_CASE("train_codec: plumbing contract and determinism") {
    fs::create_directories("tmp_codec");
    Manifest m = gen_corpus("tmp_codec", 2, 5, 4, 64, 64);

    CodecConfig cfg;
    cfg.epochs = 1;
    cfg.batch = 2;
    cfg.seed = 11;
    CodecTrainResult r1 = train_codec(m, cfg);
    CHECK(r1.log.size() == 2);  // train + val rows for 1 epoch
    write_codec_log(r1.log, "tmp_codec/loss.csv");
    CHECK(fs::exists("tmp_codec/loss.csv"));

    // checkpoint writes and reads back
    r1.checkpoint.save("tmp_codec/codec.tsdf");
    Checkpoint back = Checkpoint::load("tmp_codec/codec.tsdf");
    CHECK(back.arrays.size() == r1.checkpoint.arrays.size());

    // bit-identical retrain with the same seed
    CodecTrainResult r2 = train_codec(m, cfg);
    REQUIRE(r1.checkpoint.arrays.size() == r2.checkpoint.arrays.size());
    for (size_t i = 0; i < r1.checkpoint.arrays.size(); ++i)
        CHECK(r1.checkpoint.arrays[i].second.data() == r2.checkpoint.arrays[i].second.data());

    CHECK_THROWS(train_codec(Manifest{}, cfg));
    fs::remove_all("tmp_codec");
}

TEST_CASE("train_codec: 50 epochs beat 1 epoch on validation loss") {
    fs::create_directories("tmp_codec_prog");
    Manifest m = gen_corpus("tmp_codec_prog", 3, 21, 4, 64, 64);
    CodecConfig cfg;
    cfg.batch = 4;
    cfg.seed = 3;
    cfg.epochs = 1;
    double val1 = train_codec(m, cfg).best_val_loss;
    cfg.epochs = 50;
    double val50 = train_codec(m, cfg).best_val_loss;
    CHECK(val50 < val1);
    fs::remove_all("tmp_codec_prog");
}
