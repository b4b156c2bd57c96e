#pragma once

#include "fewseg/adapters.hpp"
#include "fewseg/image.hpp"
#include "fewseg/nn.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fewseg {

struct EncoderConfig {
    int image_size = 64;
    int patch_size = 4;
    int embed_dim = 64;
    int num_blocks = 4;
    int num_heads = 4;
    int mlp_ratio = 4;
    std::vector<int> adapted_layers; // empty -> last two blocks

    void validate() const; // throws ConfigError
    std::vector<int> effective_adapted_layers() const;
    int grid_size() const { return image_size / patch_size; }
    int num_tokens() const { return grid_size() * grid_size(); }
};

// Dense per-frame feature grid; rows are tokens in row-major grid order.
struct FeatureMap {
    nn::Tensor tokens; // (h*w) x d
    int h = 0;
    int w = 0;
    std::string source_frame_id;

    const nn::Mat& grid() const { return tokens->value; }
};

// Frozen self-attention projections of one block plus its norms and MLP.
struct BlockWeights {
    nn::Tensor w_q, w_k, w_v, w_o;        // d x d
    nn::Tensor ln1_g, ln1_b, ln2_g, ln2_b; // 1 x d
    nn::Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

// Plain hierarchical-free transformer encoder. All weights frozen after
// init; adapters attach at the configured block indices.
struct Encoder {
    EncoderConfig cfg;
    std::uint64_t seed = 0;
    nn::Tensor patch_w;  // (patch*patch*3) x d
    nn::Tensor patch_b;  // 1 x d
    nn::Tensor pos_emb;  // tokens x d
    std::vector<BlockWeights> blocks;

    std::uint64_t parameter_checksum() const;
    // every frozen matrix, for bitwise-invariance checks
    std::vector<const nn::Mat*> parameter_matrices() const;
};

Encoder init_encoder(const EncoderConfig& cfg, std::uint64_t seed);

// Forward pass. Passing adapters = nullptr runs the frozen model.
FeatureMap encode_image(const Encoder& enc, const Image& image,
                        const AdapterSet* adapters = nullptr,
                        const std::string& frame_id = "");

// Graph-building variant used by the trainer: adapter matrices come in as
// (leaf) tensors so gradients can be collected across frames.
FeatureMap encode_image_graph(const Encoder& enc, const Image& image,
                              const AdapterTensors* adapters,
                              const std::string& frame_id = "");

// One transformer block on explicit token input; exposed for oracle tests.
nn::Tensor encoder_block_forward(const BlockWeights& bw, const nn::Tensor& x,
                                 int num_heads, const AdapterTensors* adapters,
                                 int layer_index);

// Multi-head attention used by the encoder (self) and memory/decoder (cross).
// lora_* are optional low-rank deltas applied to the Q and V projections.
nn::Tensor multihead_attention(const nn::Tensor& q_in, const nn::Tensor& kv_in,
                               const nn::Tensor& w_q, const nn::Tensor& w_k,
                               const nn::Tensor& w_v, const nn::Tensor& w_o,
                               int num_heads,
                               const nn::Tensor* lora_down = nullptr,
                               const nn::Tensor* lora_up = nullptr);

} // namespace fewseg
