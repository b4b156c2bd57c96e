#include "fewseg/adapters.hpp"

#include "fewseg/common.hpp"

namespace fewseg {

std::string adapter_kind_name(AdapterKind k) {
    switch (k) {
        case AdapterKind::adaptformer: return "adaptformer";
        case AdapterKind::lora: return "lora";
        case AdapterKind::serial_adapter: return "serial_adapter";
    }
    return "?";
}

AdapterKind adapter_kind_from_name(const std::string& name) {
    if (name == "adaptformer") return AdapterKind::adaptformer;
    if (name == "lora") return AdapterKind::lora;
    if (name == "serial_adapter") return AdapterKind::serial_adapter;
    throw ConfigError("unknown adapter kind: " + name);
}

long AdapterSet::parameter_count() const {
    long n = 0;
    for (const auto& [idx, w] : entries)
        n += static_cast<long>(w.w_down.size()) + static_cast<long>(w.w_up.size());
    return n;
}

namespace {

void check_width(const nn::Mat& x, const AdapterWeights& w) {
    if (x.cols() != w.w_down.rows())
        throw ShapeError("adapter forward: token width does not match W_down");
}

} // namespace

nn::Mat adaptformer_forward(const nn::Mat& x, const AdapterWeights& w) {
    if (w.kind != AdapterKind::adaptformer)
        throw InputError("adaptformer_forward: wrong adapter kind");
    check_width(x, w);
    return (x * w.w_down).cwiseMax(0.0) * w.w_up;
}

nn::Mat lora_forward(const nn::Mat& x, const AdapterWeights& w) {
    if (w.kind != AdapterKind::lora)
        throw InputError("lora_forward: wrong adapter kind");
    check_width(x, w);
    return x * w.w_down * w.w_up;
}

nn::Mat serial_adapter_forward(const nn::Mat& x, const AdapterWeights& w) {
    if (w.kind != AdapterKind::serial_adapter)
        throw InputError("serial_adapter_forward: wrong adapter kind");
    check_width(x, w);
    return (x * w.w_down).cwiseMax(0.0) * w.w_up;
}

nn::Tensor bottleneck_delta(const nn::Tensor& x, const nn::Tensor& w_down,
                            const nn::Tensor& w_up, bool with_relu) {
    auto mid = nn::matmul(x, w_down);
    if (with_relu) mid = nn::relu(mid);
    return nn::matmul(mid, w_up);
}

AdapterSet init_adapters(const std::vector<int>& layer_indices, int embed_dim,
                         AdapterKind kind, int bottleneck_dim, std::uint64_t seed) {
    if (bottleneck_dim <= 0 || bottleneck_dim >= embed_dim)
        throw ConfigError("adapter bottleneck_dim must satisfy 0 < d~ < d");
    if (kind == AdapterKind::lora && bottleneck_dim % 2 != 0)
        throw ConfigError("lora bottleneck_dim must be even (split across Q and V)");
    AdapterSet set;
    set.bottleneck_dim = bottleneck_dim;
    set.kind = kind;
    for (int li : layer_indices) {
        Rng rng(derive_seed(seed, 0x4441u + static_cast<std::uint64_t>(li)));
        AdapterWeights w;
        w.kind = kind;
        w.layer_index = li;
        w.w_down.resize(embed_dim, bottleneck_dim);
        for (long j = 0; j < w.w_down.cols(); ++j)
            for (long i = 0; i < w.w_down.rows(); ++i)
                w.w_down(i, j) = rng.next_trunc_normal(0.02);
        w.w_up = nn::Mat::Zero(bottleneck_dim, embed_dim);
        set.entries.emplace(li, std::move(w));
    }
    return set;
}

AdapterTensors adapter_constants(const AdapterSet& set) {
    AdapterTensors t;
    t.kind = set.kind;
    for (const auto& [idx, w] : set.entries)
        t.entries.emplace(idx, std::make_pair(nn::constant(w.w_down), nn::constant(w.w_up)));
    return t;
}

AdapterTensors adapter_leaves(const AdapterSet& set) {
    AdapterTensors t;
    t.kind = set.kind;
    for (const auto& [idx, w] : set.entries)
        t.entries.emplace(idx, std::make_pair(nn::leaf(w.w_down), nn::leaf(w.w_up)));
    return t;
}

} // namespace fewseg
