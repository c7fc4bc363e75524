#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "tsd/conditioning.hpp"

using namespace tsd;

TEST_CASE("tokenize: absent audio yields all-zero track for any T") {
    PhonemeVisemeTable table;
    for (int T : {1, 5, 150}) {
        VisemeTrack t = table.tokenize(std::nullopt, T);
        REQUIRE(static_cast<int>(t.tokens.size()) == T);
        for (int tok : t.tokens) CHECK(tok == 0);
    }
}

TEST_CASE("tokenize: closed-mouth phoneme class maps to the closed viseme") {
    PhonemeVisemeTable table;
    // phoneme ids 16-18 are the B/M/P class
    std::vector<int> phonemes(4, 17);
    VisemeTrack t = table.tokenize(phonemes, 4);
    for (int tok : t.tokens) CHECK(tok == 6);
}

TEST_CASE("tokenize: mixed sequence matches row-by-row table lookup") {
    PhonemeVisemeTable table;
    Rng rng(13);
    std::vector<int> phonemes;
    for (int i = 0; i < 25; ++i) phonemes.push_back(rng.uniform_int(kPhonemeCount));
    VisemeTrack t = table.tokenize(phonemes, 25);
    for (int i = 0; i < 25; ++i) CHECK(t.tokens[i] == table.viseme_for(phonemes[i]));
}

TEST_CASE("tokenize error paths") {
    PhonemeVisemeTable table;
    CHECK_THROWS(table.tokenize(std::vector<int>{1, 2}, 3));       // misaligned
    CHECK_THROWS(table.tokenize(std::vector<int>{1, 99, 2}, 3));   // out of range
    CHECK_THROWS(table.viseme_for(-1));
}

TEST_CASE("phoneme table file round trip") {
    PhonemeVisemeTable table;
    table.save("tmp_table.txt");
    PhonemeVisemeTable back = PhonemeVisemeTable::from_file("tmp_table.txt");
    for (int ph = 0; ph < kPhonemeCount; ++ph) CHECK(back.viseme_for(ph) == table.viseme_for(ph));
    std::filesystem::remove("tmp_table.txt");
}

TEST_CASE("identity_embed: deterministic, unit norm, self-cosine 1") {
    IdentityEmbedder embedder;
    Clip clip = render_clip(generate_identity(4), 9, 2, 64, 64);
    NoGradGuard ng;
    Tensor e1 = embedder.embed(clip.frames[0]);
    Tensor e2 = embedder.embed(clip.frames[0]);
    CHECK(e1.data() == e2.data());
    double norm = 0.0, cos_self = 0.0;
    for (size_t i = 0; i < e1.data().size(); ++i) {
        norm += e1.data()[i] * e1.data()[i];
        cos_self += e1.data()[i] * e2.data()[i];
    }
    CHECK(std::fabs(std::sqrt(norm) - 1.0) < 1e-9);
    CHECK(cos_self == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS(embedder.embed(Tensor({1, 64, 64}, 0.0)));
}

TEST_CASE("identity_embed separates identities on >=99% of random triples") {
    IdentityEmbedder embedder;
    const int n_ident = 200;
    std::vector<std::vector<Tensor>> embeds;  // two frames per identity
    {
        NoGradGuard ng;
        for (int i = 0; i < n_ident; ++i) {
            Clip clip = render_clip(generate_identity(1000 + i), 17 * i + 3, 4, 64, 64);
            embeds.push_back({embedder.embed(clip.frames[0]).detach(),
                              embedder.embed(clip.frames[3]).detach()});
        }
    }
    auto cosine = [](const Tensor& a, const Tensor& b) {
        double s = 0.0;
        for (size_t i = 0; i < a.data().size(); ++i) s += a.data()[i] * b.data()[i];
        return s;
    };
    Rng rng(99);
    int ok = 0;
    const int trials = 1000;
    for (int t = 0; t < trials; ++t) {
        int a = rng.uniform_int(n_ident);
        int b = rng.uniform_int(n_ident);
        while (b == a) b = rng.uniform_int(n_ident);
        double same = cosine(embeds[a][0], embeds[a][1]);
        double diff = cosine(embeds[a][0], embeds[b][1]);
        if (same > diff) ++ok;
    }
    CHECK(ok >= 990);
}

TEST_CASE("make_conditioning layout and channel count") {
    IdentityEmbedder embedder;
    Clip clip = render_clip(generate_identity(8), 2, 2, 64, 64);
    Conditioning c = make_conditioning(embedder, clip.frames[0], 0, 0.5, 8, 8);
    CHECK(c.encoded.shape() == Shape{41, 8, 8});
    CHECK(kConditioningChannels == 32 + 8 + 1);

    // token-0 embedding row broadcast
    const auto& row0 = viseme_embedding_table()[0];
    for (int ch = 0; ch < kVisemeEmbedDim; ++ch)
        for (int i = 0; i < 64; ++i)
            CHECK(c.encoded.data()[(32 + ch) * 64 + i] == row0[ch]);
    // s channel constant
    for (int i = 0; i < 64; ++i) CHECK(c.encoded.data()[40 * 64 + i] == 0.5);

    // two different references, same token: only identity channels differ
    Clip other = render_clip(generate_identity(9), 2, 2, 64, 64);
    Conditioning c2 = make_conditioning(embedder, other.frames[0], 0, 0.5, 8, 8);
    for (size_t i = 32 * 64; i < c.encoded.data().size(); ++i)
        CHECK(c.encoded.data()[i] == c2.encoded.data()[i]);
    bool id_differs = false;
    for (size_t i = 0; i < 32 * 64; ++i)
        id_differs = id_differs || c.encoded.data()[i] != c2.encoded.data()[i];
    CHECK(id_differs);

    CHECK_THROWS(make_conditioning(embedder, clip.frames[0], 8, 0.5, 8, 8));
}

TEST_CASE("identity embedder parameters are frozen (hash stable)") {
    IdentityEmbedder embedder;
    uint64_t h0 = embedder.params_hash();
    Clip clip = render_clip(generate_identity(2), 3, 2, 64, 64);
    // run a differentiable pass through the embedder and backprop
    Tensor img = clip.frames[0].detach();
    img.set_requires_grad(true);
    Tensor emb = embedder.embed(img);
    backward(sum_all(emb));
    CHECK(img.grad().size() == img.data().size());
    CHECK(embedder.params_hash() == h0);
}

TEST_CASE("select_reference branches and statistics") {
    std::vector<Clip> pool;
    for (int i = 0; i < 4; ++i)
        pool.push_back(render_clip(generate_identity(100 + i), 7 * i, 4, 64, 64));
    const Clip& clip = pool[0];

    {
        Rng rng(1);
        MismatchPolicy p{0.0};
        for (int i = 0; i < 50; ++i) {
            auto c = select_reference(clip, pool, p, rng);
            CHECK_FALSE(c.is_mismatched);
            CHECK(c.pool_index == -1);
        }
    }
    {
        Rng rng(2);
        MismatchPolicy p{1.0};
        for (int i = 0; i < 50; ++i) {
            auto c = select_reference(clip, pool, p, rng);
            CHECK(c.is_mismatched);
            CHECK(pool[c.pool_index].identity.seed != clip.identity.seed);
        }
    }
    {
        Rng rng(3);
        MismatchPolicy p{0.5};
        int mismatches = 0;
        for (int i = 0; i < 10000; ++i)
            if (select_reference(clip, pool, p, rng).is_mismatched) ++mismatches;
        double frac = mismatches / 10000.0;
        CHECK(frac > 0.48);
        CHECK(frac < 0.52);
    }
    {
        // replayable with a fixed seed
        Rng r1(9), r2(9);
        MismatchPolicy p{0.5};
        for (int i = 0; i < 100; ++i) {
            auto a = select_reference(clip, pool, p, r1);
            auto b = select_reference(clip, pool, p, r2);
            CHECK(a.is_mismatched == b.is_mismatched);
            CHECK(a.pool_index == b.pool_index);
            CHECK(a.frame_index == b.frame_index);
        }
    }
    {
        // single-identity pool with p>0 rejected
        std::vector<Clip> solo{pool[0]};
        Rng rng(4);
        MismatchPolicy p{0.5};
        CHECK_THROWS(select_reference(clip, solo, p, rng));
    }
}
