#pragma once

#include "fewseg/encoder.hpp"
#include "fewseg/nn.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fewseg {

enum class MemoryOrigin { reference, pseudo_reference };

// Fused feature+mask representation of one frame.
struct MemoryEntry {
    nn::Tensor fused; // (h*w) x d
    MemoryOrigin origin = MemoryOrigin::reference;
    std::string frame_id;
};

// Episode-local ordered store of memory entries.
class MemoryBank {
public:
    void append(MemoryEntry entry) { entries_.push_back(std::move(entry)); }
    void reset() { entries_.clear(); }
    bool empty() const { return entries_.empty(); }
    std::size_t size() const { return entries_.size(); }
    const std::vector<MemoryEntry>& entries() const { return entries_; }
    std::vector<MemoryEntry>& entries() { return entries_; }

private:
    std::vector<MemoryEntry> entries_;
};

// Fixed strided downsampler mapping an H x W mask to the token grid:
// two bias-free 3x3 stride-2 convs with ReLU, then a 1x1 projection to d.
struct ConvDown {
    int channels1 = 4;
    int channels2 = 8;
    int out_dim = 0;
    // kernels: conv1 [c1][3][3], conv2 [c2][c1][3][3], proj [c2][d]
    std::vector<nn::Mat> conv1;               // each 3x3
    std::vector<std::vector<nn::Mat>> conv2;  // [c2][c1] of 3x3
    nn::Mat proj;                             // c2 x d

    std::vector<const nn::Mat*> parameter_matrices() const;
};

ConvDown init_conv_down(int out_dim, std::uint64_t seed);

// mask is H x W with values in [0,1]; output is (H/4*W/4) x d tokens.
nn::Mat conv_down_apply(const ConvDown& cd, const nn::Mat& mask);

// Frozen cross-attention weights of one memory-attention layer.
struct MemoryAttentionLayer {
    nn::Tensor w_q, w_k, w_v, w_o;
    nn::Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    nn::Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct MemoryAttentionWeights {
    int num_heads = 4;
    int num_layers = 2;
    std::vector<MemoryAttentionLayer> layers;

    std::vector<const nn::Mat*> parameter_matrices() const;
};

MemoryAttentionWeights init_memory_attention(int embed_dim, int num_heads,
                                             int num_layers, std::uint64_t seed);

// Eq-style fusion: fused = features + conv_down(mask).
MemoryEntry encode_memory(const ConvDown& cd, const FeatureMap& features,
                          const nn::Mat& mask, MemoryOrigin origin,
                          const std::string& frame_id = "");

// Target tokens cross-attend over the concatenation of all bank entries.
// Bank entries carry no positional or temporal tags, so the result is
// invariant to their ordering.
FeatureMap memory_attention(const FeatureMap& target, const MemoryBank& bank,
                            const MemoryAttentionWeights& weights);

} // namespace fewseg
