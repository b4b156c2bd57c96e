#include "fewseg/common.hpp"
#include "fewseg/promptdec.hpp"

#include "oracles.hpp"

#include <doctest.h>

using namespace fewseg;
using nn::Mat;

namespace {

EncoderConfig tiny_config() {
    EncoderConfig cfg;
    cfg.image_size = 8;
    cfg.patch_size = 4;
    cfg.embed_dim = 4;
    cfg.num_blocks = 1;
    cfg.num_heads = 2;
    cfg.mlp_ratio = 2;
    cfg.adapted_layers = {0};
    return cfg;
}

FeatureMap make_feature_map(const Mat& tokens, int h, int w) {
    FeatureMap fm;
    fm.tokens = nn::constant(tokens);
    fm.h = h;
    fm.w = w;
    return fm;
}

} // namespace

TEST_CASE("encode_prompt: token cardinality and bounds") {
    EncoderConfig cfg; // 64x64, d=64
    auto dec = init_decoder(cfg, 7);

    auto box = Prompt::make_box(0, 0, 63, 63);
    auto bt = encode_prompt(dec, box);
    CHECK(bt.sparse.rows() == 2); // two corner tokens
    CHECK(bt.sparse.cols() == 64);
    CHECK_FALSE(bt.dense.has_value());

    std::vector<std::pair<int, int>> pts;
    for (int i = 0; i < 5; ++i) pts.emplace_back(10 + i, 20);
    auto st = encode_prompt(dec, Prompt::make_scribble(pts));
    CHECK(st.sparse.rows() == 5);

    // long scribbles are subsampled to 16 tokens
    std::vector<std::pair<int, int>> long_pts;
    for (int i = 0; i < 40; ++i) long_pts.emplace_back(i, 1);
    auto lt = encode_prompt(dec, Prompt::make_scribble(long_pts));
    CHECK(lt.sparse.rows() == 16);

    CHECK_THROWS_AS(encode_prompt(dec, Prompt::make_point(70, 2)), InputError);
    CHECK_THROWS_AS(encode_prompt(dec, Prompt::make_scribble({})), InputError);
    CHECK_THROWS_AS(encode_prompt(dec, Prompt::make_box(5, 5, 4, 9)), InputError);

    // mask prompt produces a dense embedding on the token grid
    Mask m(64, 64);
    for (int y = 8; y < 24; ++y)
        for (int x = 8; x < 24; ++x) m.at(y, x) = 1;
    auto mt = encode_prompt(dec, Prompt::make_mask(m));
    CHECK(mt.sparse.rows() == 0);
    REQUIRE(mt.dense.has_value());
    CHECK(mt.dense->rows() == 16 * 16);
    CHECK(mt.dense->cols() == 64);
}

TEST_CASE("decode_mask: resolution contract and binary consistency") {
    auto cfg = tiny_config();
    auto dec = init_decoder(cfg, 11);
    Rng rng(13);
    Mat tokens(4, 4);
    for (long i = 0; i < 4; ++i)
        for (long j = 0; j < 4; ++j) tokens(i, j) = rng.next_normal();
    auto fm = make_feature_map(tokens, 2, 2);

    auto pred = decode_mask(dec, fm);
    CHECK(pred.logits.rows() == 8);
    CHECK(pred.logits.cols() == 8);
    CHECK(pred.binary.h == 8);
    CHECK(pred.binary.w == 8);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
            CHECK(pred.binary.at(y, x) == (pred.logits(y, x) > 0.0 ? 1 : 0));
}

TEST_CASE("all-negative logits binarize to an empty mask") {
    Mat logits = Mat::Constant(4, 4, -5.0);
    auto mp = prediction_from_logits(logits);
    CHECK(mp.binary.count() == 0);
}

TEST_CASE("mask prompt bypasses decoding with saturated logits") {
    auto cfg = tiny_config();
    auto dec = init_decoder(cfg, 17);
    Mask m(8, 8);
    m.at(2, 3) = 1;
    m.at(5, 5) = 1;
    Rng rng(19);
    Mat tokens = Mat::Zero(4, 4);
    auto fm = make_feature_map(tokens, 2, 2);
    auto pred = reference_mask_from_prompt(dec, fm, Prompt::make_mask(m));
    CHECK(pred.binary.v == m.v);
    CHECK(pred.logits(2, 3) == kBypassLogit);
    CHECK(pred.logits(0, 0) == -kBypassLogit);
}

TEST_CASE("reference_mask_from_prompt rejects empty scribbles") {
    auto cfg = tiny_config();
    auto dec = init_decoder(cfg, 23);
    auto fm = make_feature_map(Mat::Zero(4, 4), 2, 2);
    CHECK_THROWS_AS(reference_mask_from_prompt(dec, fm, Prompt::make_scribble({})),
                    InputError);
}

TEST_CASE("prompt-path equivalence: mask and box-decoded entries share shape") {
    auto cfg = tiny_config();
    auto dec = init_decoder(cfg, 29);
    auto cd = init_conv_down(cfg.embed_dim, 31);
    Rng rng(37);
    Mat tokens(4, 4);
    for (long i = 0; i < 4; ++i)
        for (long j = 0; j < 4; ++j) tokens(i, j) = rng.next_normal();
    auto fm = make_feature_map(tokens, 2, 2);

    Mask m(8, 8);
    for (int y = 2; y < 6; ++y)
        for (int x = 2; x < 6; ++x) m.at(y, x) = 1;

    auto mask_pred = reference_mask_from_prompt(dec, fm, Prompt::make_mask(m));
    auto box_pred = reference_mask_from_prompt(dec, fm, Prompt::make_box(2, 2, 5, 5));
    auto e1 = encode_memory(cd, fm, mask_to_matrix(mask_pred.binary),
                            MemoryOrigin::reference);
    auto e2 = encode_memory(cd, fm, mask_to_matrix(box_pred.binary),
                            MemoryOrigin::reference);
    CHECK(e1.fused->value.rows() == e2.fused->value.rows());
    CHECK(e1.fused->value.cols() == e2.fused->value.cols());
    CHECK(e1.fused->value.allFinite());
    CHECK(e2.fused->value.allFinite());
}

TEST_CASE("dense mask-prompt embedding feeds decode_mask") {
    auto cfg = tiny_config();
    auto dec = init_decoder(cfg, 41);
    Rng rng(43);
    Mat tokens(4, 4);
    for (long i = 0; i < 4; ++i)
        for (long j = 0; j < 4; ++j) tokens(i, j) = rng.next_normal();
    auto fm = make_feature_map(tokens, 2, 2);

    Mask m(8, 8);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) m.at(y, x) = 1;
    auto mt = encode_prompt(dec, Prompt::make_mask(m));
    auto with_dense = decode_mask(dec, fm, &mt);
    auto without = decode_mask(dec, fm, nullptr);
    CHECK(with_dense.logits.rows() == 8);
    CHECK(oracles::max_abs_diff(with_dense.logits, without.logits) > 0.0);
}

TEST_CASE("decoder golden logits checksum on a fixed tiny input") {
    // frozen after the two-way attention path was verified by hand at d=4
    // (single query token, identity-style checks in the cases above)
    auto cfg = tiny_config();
    auto dec = init_decoder(cfg, 0);
    Mat tokens(4, 4);
    double v = 0.1;
    for (long i = 0; i < 4; ++i)
        for (long j = 0; j < 4; ++j) {
            tokens(i, j) = v;
            v = std::fmod(v * 1.7 + 0.05, 1.0);
        }
    auto fm = make_feature_map(tokens, 2, 2);
    auto pred = decode_mask(dec, fm);
    const std::uint64_t checksum = fnv1a64(
        pred.logits.data(), static_cast<std::size_t>(pred.logits.size()) * sizeof(double));
    CHECK(hex64(checksum) == "cb6c74e7dfd0b52d");
}
