#pragma once

#include "fewseg/nn.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace fewseg {

enum class AdapterKind { adaptformer, lora, serial_adapter };

std::string adapter_kind_name(AdapterKind k);
AdapterKind adapter_kind_from_name(const std::string& name);

// Bottleneck projection pair for one adapted layer. The only trainable
// parameters in the system.
struct AdapterWeights {
    nn::Mat w_down; // d x d_bottleneck
    nn::Mat w_up;   // d_bottleneck x d
    AdapterKind kind = AdapterKind::adaptformer;
    int layer_index = -1;
};

struct AdapterSet {
    std::map<int, AdapterWeights> entries; // layer_index -> weights
    int bottleneck_dim = 0;
    AdapterKind kind = AdapterKind::adaptformer;

    long parameter_count() const;
};

// Token-wise bottleneck deltas. x rows are tokens of width d.
nn::Mat adaptformer_forward(const nn::Mat& x, const AdapterWeights& w);
nn::Mat lora_forward(const nn::Mat& x, const AdapterWeights& w);
nn::Mat serial_adapter_forward(const nn::Mat& x, const AdapterWeights& w);

// Graph-side delta used inside the encoder block: relu(x Wd) Wu for
// adaptformer/serial, x Wd Wu for lora.
nn::Tensor bottleneck_delta(const nn::Tensor& x, const nn::Tensor& w_down,
                            const nn::Tensor& w_up, bool with_relu);

// W_down truncated-normal, W_up zeros, so a fresh set is an exact identity.
AdapterSet init_adapters(const std::vector<int>& layer_indices, int embed_dim,
                         AdapterKind kind, int bottleneck_dim, std::uint64_t seed);

// Per-step leaf (or frozen constant) tensors for the adapter matrices.
struct AdapterTensors {
    std::map<int, std::pair<nn::Tensor, nn::Tensor>> entries; // w_down, w_up
    AdapterKind kind = AdapterKind::adaptformer;
};

AdapterTensors adapter_constants(const AdapterSet& set);
AdapterTensors adapter_leaves(const AdapterSet& set);

} // namespace fewseg
