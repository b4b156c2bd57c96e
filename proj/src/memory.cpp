#include "fewseg/memory.hpp"

#include "fewseg/common.hpp"

#include <cmath>

namespace fewseg {

namespace {

nn::Mat trunc_normal_mat(Rng& rng, long rows, long cols, double std_dev = 0.02) {
    nn::Mat m(rows, cols);
    for (long j = 0; j < cols; ++j)
        for (long i = 0; i < rows; ++i) m(i, j) = rng.next_trunc_normal(std_dev);
    return m;
}

// single-channel-in, multi-channel-out 3x3 stride-2 conv with zero padding 1
std::vector<nn::Mat> conv3x3_s2(const std::vector<nn::Mat>& in_planes,
                                const std::vector<std::vector<nn::Mat>>& kernels,
                                bool relu_after) {
    const long H = in_planes[0].rows(), W = in_planes[0].cols();
    const long oh = H / 2, ow = W / 2;
    std::vector<nn::Mat> out;
    out.reserve(kernels.size());
    for (const auto& kset : kernels) {
        nn::Mat plane = nn::Mat::Zero(oh, ow);
        for (std::size_t ic = 0; ic < in_planes.size(); ++ic) {
            const nn::Mat& src = in_planes[ic];
            const nn::Mat& k = kset[ic];
            for (long oy = 0; oy < oh; ++oy)
                for (long ox = 0; ox < ow; ++ox) {
                    double acc = 0.0;
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            const long sy = oy * 2 + ky - 1;
                            const long sx = ox * 2 + kx - 1;
                            if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                            acc += k(ky, kx) * src(sy, sx);
                        }
                    plane(oy, ox) += acc;
                }
        }
        if (relu_after) plane = plane.cwiseMax(0.0);
        out.push_back(std::move(plane));
    }
    return out;
}

} // namespace

std::vector<const nn::Mat*> ConvDown::parameter_matrices() const {
    std::vector<const nn::Mat*> out;
    for (const auto& k : conv1) out.push_back(&k);
    for (const auto& ks : conv2)
        for (const auto& k : ks) out.push_back(&k);
    out.push_back(&proj);
    return out;
}

ConvDown init_conv_down(int out_dim, std::uint64_t seed) {
    ConvDown cd;
    cd.out_dim = out_dim;
    Rng rng(derive_seed(seed, 0xC0DDu));
    for (int c = 0; c < cd.channels1; ++c)
        cd.conv1.push_back(trunc_normal_mat(rng, 3, 3, 0.4));
    for (int c = 0; c < cd.channels2; ++c) {
        std::vector<nn::Mat> ks;
        for (int ic = 0; ic < cd.channels1; ++ic)
            ks.push_back(trunc_normal_mat(rng, 3, 3, 0.4));
        cd.conv2.push_back(std::move(ks));
    }
    cd.proj = trunc_normal_mat(rng, cd.channels2, out_dim, 0.4);
    return cd;
}

nn::Mat conv_down_apply(const ConvDown& cd, const nn::Mat& mask) {
    if (mask.rows() % 4 != 0 || mask.cols() % 4 != 0)
        throw ShapeError("conv_down: mask dimensions must be divisible by 4");
    std::vector<std::vector<nn::Mat>> k1;
    for (const auto& k : cd.conv1) k1.push_back({k});
    auto p1 = conv3x3_s2({mask}, k1, true);
    auto p2 = conv3x3_s2(p1, cd.conv2, true);
    const long h = p2[0].rows(), w = p2[0].cols();
    nn::Mat tokens(h * w, cd.out_dim);
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
            Eigen::RowVectorXd feat(cd.channels2);
            for (int c = 0; c < cd.channels2; ++c) feat(c) = p2[static_cast<std::size_t>(c)](y, x);
            tokens.row(y * w + x) = feat * cd.proj;
        }
    return tokens;
}

std::vector<const nn::Mat*> MemoryAttentionWeights::parameter_matrices() const {
    std::vector<const nn::Mat*> out;
    for (const auto& l : layers) {
        out.push_back(&l.w_q->value);
        out.push_back(&l.w_k->value);
        out.push_back(&l.w_v->value);
        out.push_back(&l.w_o->value);
        out.push_back(&l.ln1_g->value);
        out.push_back(&l.ln1_b->value);
        out.push_back(&l.ln2_g->value);
        out.push_back(&l.ln2_b->value);
        out.push_back(&l.mlp_w1->value);
        out.push_back(&l.mlp_b1->value);
        out.push_back(&l.mlp_w2->value);
        out.push_back(&l.mlp_b2->value);
    }
    return out;
}

MemoryAttentionWeights init_memory_attention(int embed_dim, int num_heads,
                                             int num_layers, std::uint64_t seed) {
    if (embed_dim % num_heads != 0)
        throw ConfigError("memory attention: embed_dim must be divisible by num_heads");
    MemoryAttentionWeights w;
    w.num_heads = num_heads;
    w.num_layers = num_layers;
    const int d = embed_dim;
    for (int l = 0; l < num_layers; ++l) {
        Rng rng(derive_seed(seed, 0x3E30 + static_cast<std::uint64_t>(l)));
        MemoryAttentionLayer layer;
        layer.w_q = nn::constant(trunc_normal_mat(rng, d, d));
        layer.w_k = nn::constant(trunc_normal_mat(rng, d, d));
        layer.w_v = nn::constant(trunc_normal_mat(rng, d, d));
        layer.w_o = nn::constant(trunc_normal_mat(rng, d, d));
        layer.ln1_g = nn::constant(nn::Mat::Ones(1, d));
        layer.ln1_b = nn::constant(nn::Mat::Zero(1, d));
        layer.ln2_g = nn::constant(nn::Mat::Ones(1, d));
        layer.ln2_b = nn::constant(nn::Mat::Zero(1, d));
        layer.mlp_w1 = nn::constant(trunc_normal_mat(rng, d, 2 * d));
        layer.mlp_b1 = nn::constant(nn::Mat::Zero(1, 2 * d));
        layer.mlp_w2 = nn::constant(trunc_normal_mat(rng, 2 * d, d));
        layer.mlp_b2 = nn::constant(nn::Mat::Zero(1, d));
        w.layers.push_back(std::move(layer));
    }
    return w;
}

MemoryEntry encode_memory(const ConvDown& cd, const FeatureMap& features,
                          const nn::Mat& mask, MemoryOrigin origin,
                          const std::string& frame_id) {
    const long expected_h = static_cast<long>(features.h) * 4;
    const long expected_w = static_cast<long>(features.w) * 4;
    if (mask.rows() != expected_h || mask.cols() != expected_w)
        throw ShapeError("encode_memory: mask resolution does not match feature grid");
    for (long j = 0; j < mask.cols(); ++j)
        for (long i = 0; i < mask.rows(); ++i) {
            const double v = mask(i, j);
            if (!(v >= 0.0 && v <= 1.0))
                throw InputError("encode_memory: mask values must lie in [0,1]");
        }
    auto ctx = nn::constant(conv_down_apply(cd, mask));
    MemoryEntry e;
    e.fused = nn::add(features.tokens, ctx);
    e.origin = origin;
    e.frame_id = frame_id;
    return e;
}

FeatureMap memory_attention(const FeatureMap& target, const MemoryBank& bank,
                            const MemoryAttentionWeights& weights) {
    if (bank.empty())
        throw StateError("memory_attention: no reference encoded (empty memory bank)");
    const long d = target.tokens->value.cols();
    std::vector<nn::Tensor> parts;
    parts.reserve(bank.size());
    for (const auto& e : bank.entries()) {
        if (e.fused->value.cols() != d)
            throw ShapeError("memory_attention: entry width does not match target");
        parts.push_back(e.fused);
    }
    auto mem = parts.size() == 1 ? parts[0] : nn::vconcat(parts);

    auto x = target.tokens;
    for (const auto& l : weights.layers) {
        auto h1 = nn::layernorm_rows(x, l.ln1_g, l.ln1_b);
        auto att = multihead_attention(h1, mem, l.w_q, l.w_k, l.w_v, l.w_o,
                                       weights.num_heads);
        x = nn::add(x, att);
        auto h2 = nn::layernorm_rows(x, l.ln2_g, l.ln2_b);
        auto mid = nn::gelu(nn::row_broadcast_add(nn::matmul(h2, l.mlp_w1), l.mlp_b1));
        x = nn::add(x, nn::row_broadcast_add(nn::matmul(mid, l.mlp_w2), l.mlp_b2));
    }

    FeatureMap out;
    out.tokens = x;
    out.h = target.h;
    out.w = target.w;
    out.source_frame_id = target.source_frame_id;
    return out;
}

} // namespace fewseg
