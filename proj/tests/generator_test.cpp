#include "doctest.h"

#include "deblurkit/errors.hpp"
#include "deblurkit/generator.hpp"
#include "deblurkit/serialize.hpp"

#include "support.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace dbk;

namespace {

GeneratorConfig toy_config() {
    GeneratorConfig cfg;
    cfg.backbone.num_feature_blocks = 2;
    cfg.backbone.tap_stages = {0, 1};
    cfg.backbone.final_channels = 24;
    cfg.fpn_channels = 8;
    cfg.upscale_ratios = {2, 2};
    cfg.head_channels = 8;
    cfg.bridge_channels = 4;
    return cfg;
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("deblurkit_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

} // namespace

TEST_CASE("pad_to_stride rounds spatial dims up and inverts exactly") {
    SUBCASE("720x1280 pads to 736x1280 split evenly") {
        Tensor x = Tensor::zeros({1, 3, 720, 1280});
        auto [padded, rec] = pad_to_stride(x);
        CHECK(padded.shape() == TensorShape{1, 3, 736, 1280});
        CHECK(rec.top == 8);
        CHECK(rec.bottom == 8);
        CHECK(rec.left == 0);
        CHECK(rec.right == 0);
    }
    SUBCASE("already divisible stays untouched") {
        Tensor x = Tensor::zeros({1, 3, 704, 1280});
        auto [padded, rec] = pad_to_stride(x);
        CHECK_FALSE(rec.any());
        CHECK(padded.shape() == TensorShape{1, 3, 704, 1280});
    }
    SUBCASE("100x100 pads to 128x128 with 28 per axis") {
        Tensor x = Tensor::zeros({1, 3, 100, 100});
        auto [padded, rec] = pad_to_stride(x);
        CHECK(padded.shape() == TensorShape{1, 3, 128, 128});
        CHECK(rec.top + rec.bottom == 28);
        CHECK(rec.left + rec.right == 28);
    }
    SUBCASE("crop inverts the padding bit-exactly") {
        Rng rng(1);
        Tensor x = test::random_tensor({1, 3, 45, 77}, rng, 0.0f, 1.0f, false);
        auto [padded, rec] = pad_to_stride(x);
        Tensor back = crop_padding(padded, rec);
        REQUIRE(back.shape() == x.shape());
        for (std::size_t i = 0; i < x.data().size(); ++i)
            CHECK(back.data()[i] == x.data()[i]);
    }
}

TEST_CASE("zeroed projection head makes the generator an exact identity") {
    Rng rng(2);
    Generator gen = Generator::make(GeneratorConfig::canonical(), rng);
    ParamList params = gen.parameters();
    for (NamedParam& p : params)
        if (p.name == "project.weight" || p.name == "project.bias")
            std::fill(p.tensor.data().begin(), p.tensor.data().end(), 0.0f);

    Tensor x = test::random_tensor({1, 3, 100, 100}, rng, 0.0f, 1.0f, false);
    NoGradGuard inference;
    Tensor y = gen.forward(x);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.data().size(); ++i)
        CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("generator preserves shape and output range with random weights") {
    Rng rng(3);
    Generator gen = Generator::make(GeneratorConfig::canonical(), rng);
    NoGradGuard inference;
    SUBCASE("256x256") {
        Tensor x = test::random_tensor({1, 3, 256, 256}, rng, 0.0f, 1.0f, false);
        Tensor y = gen.forward(x);
        CHECK(y.shape() == x.shape());
        CHECK(ops::all_finite(y));
        float lo = 1e9f, hi = -1e9f;
        for (float v : y.data()) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        CHECK(lo >= 0.0f);
        CHECK(hi <= 1.0f);
    }
    SUBCASE("non-multiple-of-32 input") {
        Tensor x = test::random_tensor({1, 3, 100, 100}, rng, 0.0f, 1.0f, false);
        Tensor y = gen.forward(x);
        CHECK(y.shape() == x.shape());
        CHECK(ops::all_finite(y));
    }
}

TEST_CASE("generator rejects malformed inputs") {
    Rng rng(4);
    Generator gen = Generator::make(toy_config(), rng);
    CHECK_THROWS_AS(gen.forward(Tensor::zeros({1, 1, 64, 64})), ContractError);
    Tensor bad = Tensor::full({1, 3, 32, 32}, std::numeric_limits<float>::quiet_NaN());
    CHECK_THROWS_AS(gen.forward(bad), ContractError);
}

TEST_CASE("generator cost at GoPro-scale input lands in the published bands") {
    Rng rng(5);
    Generator gen = Generator::make(GeneratorConfig::canonical(), rng);
    const MacsBreakdown mb = gen.macs(720, 1280);
    CHECK(mb.backbone >= 1650000000LL);
    CHECK(mb.backbone <= 2230000000LL);
    CHECK(mb.total() >= 17400000000LL);
    CHECK(mb.total() <= 23600000000LL);
}

TEST_CASE("canonical checkpoint size sits in the expected band") {
    Rng rng(6);
    Generator gen = Generator::make(GeneratorConfig::canonical(), rng);
    CheckpointBlob blob;
    blob.config_json = gen.config().to_json();
    for (const NamedParam& p : gen.parameters()) {
        auto view = p.tensor.data();
        blob.arrays.emplace_back(p.name, std::vector<float>(view.begin(), view.end()));
    }
    const double mb = static_cast<double>(blob.byte_size()) / 1e6;
    CHECK(mb >= 4.8);
    CHECK(mb <= 8.0);
}

TEST_CASE("halving fpn_channels strictly reduces the parameter count") {
    Rng rng(7);
    Generator full = Generator::make(GeneratorConfig::canonical(), rng);
    GeneratorConfig slim_cfg = GeneratorConfig::canonical();
    slim_cfg.fpn_channels /= 2;
    Generator slim = Generator::make(slim_cfg, rng);
    CHECK(slim.parameter_count() < full.parameter_count());
}

TEST_CASE("two-level toy generator parameter count matches a hand sum") {
    Rng rng(8);
    Generator gen = Generator::make(toy_config(), rng);

    // Backbone.
    // stem 3->16 3x3 (no bias) + IN(16)
    const std::int64_t stem = 3 * 16 * 9 + 2 * 16;
    // stage0: in 16, expansion 16, out 16, stride 1, identity shortcut.
    //   expand cheap 16->16: pw 16->8 +bias, dw3 8 +bias; IN(16)
    //   project cheap 16->16: same; IN(16)
    const std::int64_t cheap_16_16 = (16 * 8 + 8) + (8 * 9 + 8);
    const std::int64_t stage0 = (cheap_16_16 + 2 * 16) * 2;
    // stage1: in 16, expansion 48, out 24, stride 2, conv shortcut.
    const std::int64_t expand_16_48 = (16 * 24 + 24) + (24 * 9 + 24); // cheap module
    const std::int64_t down_dw48 = 48 * 9;                            // no bias
    const std::int64_t project_48_24 = (48 * 12 + 12) + (12 * 9 + 12);
    const std::int64_t shortcut = 16 * 9 + 2 * 16 + 16 * 24 + 2 * 24; // dw+IN, pw+IN
    const std::int64_t stage1 = expand_16_48 + 2 * 48 + down_dw48 + 2 * 48 +
                                project_48_24 + 2 * 24 + shortcut;
    // Neck (fpn 8, head 8, bridge 4, taps 16@s2 and 24@s4).
    const std::int64_t bridge = 24 * 4 * 9 + 2 * 4 + 4 * 24 * 9 + 2 * 24;
    const std::int64_t laterals = (16 * 8 + 8) + (24 * 8 + 8);
    const std::int64_t cheap_8_8 = (8 * 4 + 4) + (4 * 9 + 4);
    const std::int64_t merge = cheap_8_8 + 2 * 4; // + half-norm over 4 channels
    const std::int64_t heads = 2 * cheap_8_8;
    // one fusion stage joins the upsampled deep head (8ch) with the shallow head (8ch)
    const std::int64_t fuse = (16 * 4 + 4) + (4 * 9 + 4) + 2 * 4;
    const std::int64_t smooth = (8 * 2 + 2) + (2 * 9 + 2) + 2 * 2;
    const std::int64_t project = 4 * 3 * 9 + 3;

    const std::int64_t expected = stem + stage0 + stage1 + bridge + laterals + merge +
                                  heads + fuse + smooth + project;
    CHECK(gen.parameter_count() == expected);
}

TEST_CASE("generator config JSON round-trips") {
    GeneratorConfig cfg = GeneratorConfig::canonical();
    GeneratorConfig back = GeneratorConfig::from_json(cfg.to_json());
    CHECK(back == cfg);
    CHECK_THROWS_AS(GeneratorConfig::from_json("{\"fpn_channels\": 12}"), ConfigError);
    CHECK_THROWS_AS(GeneratorConfig::from_json("not json"), ConfigError);
}

TEST_CASE("checkpoint round-trip reproduces the forward pass bit-exactly") {
    TempDir tmp;
    Rng rng(9);
    Generator gen = Generator::make(toy_config(), rng);
    Tensor x = test::random_tensor({1, 3, 64, 64}, rng, 0.0f, 1.0f, false);
    NoGradGuard inference;
    Tensor before = gen.forward(x);

    const auto path = tmp.path / "gen.bin";
    save_generator_checkpoint(path, gen);
    Generator loaded = load_generator_checkpoint(path);
    Tensor after = loaded.forward(x);
    REQUIRE(after.shape() == before.shape());
    for (std::size_t i = 0; i < before.data().size(); ++i)
        CHECK(after.data()[i] == before.data()[i]);
}

TEST_CASE("loading a checkpoint with a mismatched config is an error") {
    TempDir tmp;
    Rng rng(10);
    Generator gen = Generator::make(toy_config(), rng);
    const auto path = tmp.path / "gen.bin";
    save_generator_checkpoint(path, gen);

    GeneratorConfig other = GeneratorConfig::canonical();
    CHECK_THROWS_AS(load_generator_checkpoint(path, &other), ContractError);
    GeneratorConfig same = toy_config();
    CHECK_NOTHROW(load_generator_checkpoint(path, &same));
}

TEST_CASE("corrupt checkpoints are rejected by the crc") {
    TempDir tmp;
    Rng rng(11);
    Generator gen = Generator::make(toy_config(), rng);
    const auto path = tmp.path / "gen.bin";
    save_generator_checkpoint(path, gen);

    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(200);
    char byte = 0x5a;
    f.write(&byte, 1);
    f.close();
    CHECK_THROWS_AS(load_generator_checkpoint(path), ContractError);
}

TEST_CASE("generator gradients reach the input and early weights") {
    Rng rng(12);
    Generator gen = Generator::make(toy_config(), rng);
    Tensor x = test::random_tensor({1, 3, 32, 32}, rng, 0.05f, 0.95f);
    Tensor target = test::random_tensor({1, 3, 32, 32}, rng, 0.0f, 1.0f, false);
    Tensor loss = ops::mse(gen.forward(x), target);
    loss.backward();
    ParamList params = gen.parameters();
    bool stem_has_grad = false;
    for (NamedParam& p : params)
        if (p.name == "backbone.stem.weight")
            for (float g : p.tensor.grad())
                if (g != 0.0f) stem_has_grad = true;
    CHECK(stem_has_grad);
    bool input_has_grad = false;
    for (float g : x.grad())
        if (g != 0.0f) input_has_grad = true;
    CHECK(input_has_grad);
}
