#include "fewseg/common.hpp"
#include "fewseg/runconfig.hpp"

#include <doctest.h>

using namespace fewseg;

TEST_CASE("run config defaults") {
    auto rc = load_run_config("");
    CHECK(rc.encoder.image_size == 64);
    CHECK(rc.encoder.patch_size == 4);
    CHECK(rc.encoder.embed_dim == 64);
    CHECK(rc.encoder.num_blocks == 4);
    CHECK(rc.encoder.num_heads == 4);
    CHECK(rc.encoder.mlp_ratio == 4);
    CHECK(rc.effective_bottleneck() == 32); // d/2
    CHECK(rc.adapter_kind == AdapterKind::adaptformer);
    CHECK(rc.trainer.learning_rate == doctest::Approx(1e-4));
    CHECK(rc.trainer.epochs == 5);
    CHECK(rc.trainer.targets_per_clip == 2);
    CHECK(rc.trainer.lambda_bce == 1.0);
    CHECK(rc.trainer.lambda_dice == 1.0);
    CHECK(rc.eval.shots == 1);
}

TEST_CASE("run config parsing and validation") {
    const std::string text = R"(
# comment
[encoder]
image_size = 32
embed_dim = 32
num_blocks = 3
adapted_layers = 1,2

[adapters]
kind = lora
bottleneck_dim = 8

[trainer]
learning_rate = 0.001
epochs = 2
targets_per_clip = 3

[data]
root = /tmp/somewhere
image_size = 32

[eval]
shots = 5
prompt = point
)";
    auto rc = parse_run_config(text);
    CHECK(rc.encoder.image_size == 32);
    CHECK(rc.encoder.num_blocks == 3);
    CHECK(rc.encoder.adapted_layers == std::vector<int>{1, 2});
    CHECK(rc.adapter_kind == AdapterKind::lora);
    CHECK(rc.bottleneck_dim == 8);
    CHECK(rc.trainer.targets_per_clip == 3);
    CHECK(rc.data.root == "/tmp/somewhere");
    CHECK(rc.eval.shots == 5);
    CHECK(rc.eval.prompt == PromptKind::point);
}

TEST_CASE("run config rejects unknown keys and bad values") {
    CHECK_THROWS_AS(parse_run_config("[encoder]\nbogus_key = 3\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[mystery]\nx = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("loose_key = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[encoder]\nimage_size = potato\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[encoder]\nimage_size = 63\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[adapters]\nkind = prefix_tuning\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[trainer]\nepochs = 0\n"), ConfigError);
    // bottleneck must stay below embed_dim
    CHECK_THROWS_AS(parse_run_config("[adapters]\nbottleneck_dim = 64\n"), ConfigError);
}
