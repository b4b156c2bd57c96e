#pragma once

#include "fewseg/encoder.hpp"
#include "fewseg/image.hpp"
#include "fewseg/memory.hpp"
#include "fewseg/nn.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace fewseg {

enum class PromptKind { mask, point, box, scribble };

std::string prompt_kind_name(PromptKind k);
PromptKind prompt_kind_from_name(const std::string& name);

struct PointPrompt {
    int x = 0;
    int y = 0;
    bool foreground = true;
};

struct BoxPrompt { // inclusive pixel coordinates
    int x_min = 0, y_min = 0, x_max = 0, y_max = 0;
};

struct Prompt {
    PromptKind kind = PromptKind::mask;
    Mask mask;                        // kind == mask
    std::vector<PointPrompt> points;  // kind == point
    BoxPrompt box;                    // kind == box
    std::vector<std::pair<int, int>> scribble; // kind == scribble, (x, y) fg pixels

    static Prompt make_mask(Mask m);
    static Prompt make_point(int x, int y, bool foreground = true);
    static Prompt make_box(int x_min, int y_min, int x_max, int y_max);
    static Prompt make_scribble(std::vector<std::pair<int, int>> pts);
};

struct MaskPrediction {
    nn::Mat logits; // H x W
    Mask binary;    // binary = logits > 0
};

struct PromptTokens {
    nn::Mat sparse;                 // k x d, possibly 0 rows
    std::optional<nn::Mat> dense;   // (h*w) x d for mask prompts
};

// Frozen two-way attention decoder with 2 learned output tokens reduced to
// one mask, plus a bilinear upsampling readout to image resolution.
struct TwoWayBlock {
    nn::Tensor self_q, self_k, self_v, self_o;
    nn::Tensor t2i_q, t2i_k, t2i_v, t2i_o; // token -> image cross attention
    nn::Tensor i2t_q, i2t_k, i2t_v, i2t_o; // image -> token cross attention
    nn::Tensor ln_a_g, ln_a_b, ln_b_g, ln_b_b, ln_c_g, ln_c_b, ln_d_g, ln_d_b;
    nn::Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct Decoder {
    int embed_dim = 0;
    int num_heads = 4;
    int patch_size = 4;
    int image_size = 0;
    nn::Tensor output_tokens; // 2 x d
    nn::Tensor type_emb;      // 5 x d: point_fg, point_bg, box_min, box_max, scribble
    nn::Mat fourier;          // 2 x d/2, frozen positional features
    std::vector<TwoWayBlock> blocks; // 2
    nn::Tensor mask_ln_g, mask_ln_b;
    nn::Tensor mask_mlp_w1, mask_mlp_b1, mask_mlp_w2, mask_mlp_b2;
    ConvDown dense_down; // mask prompt -> dense embedding

    std::vector<const nn::Mat*> parameter_matrices() const;
};

Decoder init_decoder(const EncoderConfig& cfg, std::uint64_t seed);

// Sparse tokens for geometric prompts, dense embedding for mask prompts.
// Scribbles are subsampled to at most 16 points.
PromptTokens encode_prompt(const Decoder& dec, const Prompt& prompt);

// Graph-side decode; logits come back as an (H*W) x 1 column.
nn::Tensor decode_mask_graph(const Decoder& dec, const FeatureMap& features,
                             const PromptTokens* prompt_tokens);

MaskPrediction decode_mask(const Decoder& dec, const FeatureMap& features,
                           const PromptTokens* prompt_tokens = nullptr);

// Decodes the reference frame's own mask from its annotation. Mask prompts
// bypass the decoder and are returned as saturated logit maps.
MaskPrediction reference_mask_from_prompt(const Decoder& dec,
                                          const FeatureMap& encoder_features,
                                          const Prompt& prompt);

MaskPrediction prediction_from_logits(const nn::Mat& logits);

// logit magnitude used for the mask-prompt bypass
inline constexpr double kBypassLogit = 20.0;

} // namespace fewseg
