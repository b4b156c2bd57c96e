#include "fewseg/encoder.hpp"

#include "fewseg/common.hpp"

#include <cmath>

namespace fewseg {

void EncoderConfig::validate() const {
    if (image_size <= 0 || patch_size <= 0 || embed_dim <= 0 || num_blocks <= 0 ||
        num_heads <= 0 || mlp_ratio <= 0)
        throw ConfigError("encoder config: all dimensions must be positive");
    if (image_size % patch_size != 0)
        throw ConfigError("encoder config: image_size must be divisible by patch_size");
    if (embed_dim % num_heads != 0)
        throw ConfigError("encoder config: embed_dim must be divisible by num_heads");
    if (embed_dim % 2 != 0)
        throw ConfigError("encoder config: embed_dim must be even");
    for (int li : adapted_layers)
        if (li < 0 || li >= num_blocks)
            throw ConfigError("encoder config: adapted layer index out of range");
}

std::vector<int> EncoderConfig::effective_adapted_layers() const {
    if (!adapted_layers.empty()) return adapted_layers;
    std::vector<int> out;
    if (num_blocks >= 2) out = {num_blocks - 2, num_blocks - 1};
    else out = {num_blocks - 1};
    return out;
}

namespace {

nn::Mat trunc_normal_mat(Rng& rng, long rows, long cols, double std_dev = 0.02) {
    nn::Mat m(rows, cols);
    for (long j = 0; j < cols; ++j)
        for (long i = 0; i < rows; ++i) m(i, j) = rng.next_trunc_normal(std_dev);
    return m;
}

void hash_mat(std::uint64_t& h, const nn::Mat& m) {
    h = fnv1a64(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double), h);
}

} // namespace

std::uint64_t Encoder::parameter_checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto* m : parameter_matrices()) hash_mat(h, *m);
    return h;
}

std::vector<const nn::Mat*> Encoder::parameter_matrices() const {
    std::vector<const nn::Mat*> out = {&patch_w->value, &patch_b->value, &pos_emb->value};
    for (const auto& b : blocks) {
        out.push_back(&b.w_q->value);
        out.push_back(&b.w_k->value);
        out.push_back(&b.w_v->value);
        out.push_back(&b.w_o->value);
        out.push_back(&b.ln1_g->value);
        out.push_back(&b.ln1_b->value);
        out.push_back(&b.ln2_g->value);
        out.push_back(&b.ln2_b->value);
        out.push_back(&b.mlp_w1->value);
        out.push_back(&b.mlp_b1->value);
        out.push_back(&b.mlp_w2->value);
        out.push_back(&b.mlp_b2->value);
    }
    return out;
}

Encoder init_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Encoder enc;
    enc.cfg = cfg;
    enc.seed = seed;
    const int d = cfg.embed_dim;
    const int pdim = cfg.patch_size * cfg.patch_size * 3;

    Rng rng(derive_seed(seed, 0xE0C0));
    enc.patch_w = nn::constant(trunc_normal_mat(rng, pdim, d));
    enc.patch_b = nn::constant(nn::Mat::Zero(1, d));
    enc.pos_emb = nn::constant(trunc_normal_mat(rng, cfg.num_tokens(), d));

    for (int b = 0; b < cfg.num_blocks; ++b) {
        Rng brng(derive_seed(seed, 0xB10C + static_cast<std::uint64_t>(b)));
        BlockWeights bw;
        bw.w_q = nn::constant(trunc_normal_mat(brng, d, d));
        bw.w_k = nn::constant(trunc_normal_mat(brng, d, d));
        bw.w_v = nn::constant(trunc_normal_mat(brng, d, d));
        bw.w_o = nn::constant(trunc_normal_mat(brng, d, d));
        bw.ln1_g = nn::constant(nn::Mat::Ones(1, d));
        bw.ln1_b = nn::constant(nn::Mat::Zero(1, d));
        bw.ln2_g = nn::constant(nn::Mat::Ones(1, d));
        bw.ln2_b = nn::constant(nn::Mat::Zero(1, d));
        bw.mlp_w1 = nn::constant(trunc_normal_mat(brng, d, d * cfg.mlp_ratio));
        bw.mlp_b1 = nn::constant(nn::Mat::Zero(1, d * cfg.mlp_ratio));
        bw.mlp_w2 = nn::constant(trunc_normal_mat(brng, d * cfg.mlp_ratio, d));
        bw.mlp_b2 = nn::constant(nn::Mat::Zero(1, d));
        enc.blocks.push_back(std::move(bw));
    }
    return enc;
}

nn::Tensor multihead_attention(const nn::Tensor& q_in, const nn::Tensor& kv_in,
                               const nn::Tensor& w_q, const nn::Tensor& w_k,
                               const nn::Tensor& w_v, const nn::Tensor& w_o,
                               int num_heads, const nn::Tensor* lora_down,
                               const nn::Tensor* lora_up) {
    const int d = static_cast<int>(w_q->value.rows());
    if (d % num_heads != 0) throw ShapeError("multihead_attention: head split");
    const int dh = d / num_heads;
    const int n = static_cast<int>(q_in->value.rows());
    const int m = static_cast<int>(kv_in->value.rows());

    auto Q = nn::matmul(q_in, w_q);
    auto V = nn::matmul(kv_in, w_v);
    if (lora_down && lora_up) {
        // low-rank Q/V deltas: first half of the bottleneck feeds Q, second V
        const int r = static_cast<int>((*lora_down)->value.cols()) / 2;
        auto dq = nn::matmul(nn::matmul(q_in, nn::block(*lora_down, 0, 0, d, r)),
                             nn::block(*lora_up, 0, 0, r, d));
        auto dv = nn::matmul(nn::matmul(kv_in, nn::block(*lora_down, 0, r, d, r)),
                             nn::block(*lora_up, r, 0, r, d));
        Q = nn::add(Q, dq);
        V = nn::add(V, dv);
    }
    auto K = nn::matmul(kv_in, w_k);

    std::vector<nn::Tensor> heads;
    heads.reserve(static_cast<std::size_t>(num_heads));
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int h = 0; h < num_heads; ++h) {
        auto Qh = nn::block(Q, 0, h * dh, n, dh);
        auto Kh = nn::block(K, 0, h * dh, m, dh);
        auto Vh = nn::block(V, 0, h * dh, m, dh);
        auto scores = nn::scale(nn::matmul(Qh, nn::transpose(Kh)), inv_sqrt);
        auto attn = nn::softmax_rows(scores);
        heads.push_back(nn::matmul(attn, Vh));
    }
    auto cat = num_heads == 1 ? heads[0] : nn::hconcat(heads);
    return nn::matmul(cat, w_o);
}

nn::Tensor encoder_block_forward(const BlockWeights& bw, const nn::Tensor& x,
                                 int num_heads, const AdapterTensors* adapters,
                                 int layer_index) {
    const nn::Tensor* lora_down = nullptr;
    const nn::Tensor* lora_up = nullptr;
    const std::pair<nn::Tensor, nn::Tensor>* entry = nullptr;
    if (adapters) {
        auto it = adapters->entries.find(layer_index);
        if (it != adapters->entries.end()) {
            entry = &it->second;
            if (adapters->kind == AdapterKind::lora) {
                lora_down = &entry->first;
                lora_up = &entry->second;
            }
        }
    }

    auto h1 = nn::layernorm_rows(x, bw.ln1_g, bw.ln1_b);
    auto att = multihead_attention(h1, h1, bw.w_q, bw.w_k, bw.w_v, bw.w_o,
                                   num_heads, lora_down, lora_up);
    auto x_self = nn::add(x, att);

    auto h2 = nn::layernorm_rows(x_self, bw.ln2_g, bw.ln2_b);
    auto mid = nn::gelu(nn::row_broadcast_add(nn::matmul(h2, bw.mlp_w1), bw.mlp_b1));
    auto mlp_out = nn::row_broadcast_add(nn::matmul(mid, bw.mlp_w2), bw.mlp_b2);

    auto out = nn::add(x_self, mlp_out);
    if (entry && adapters->kind == AdapterKind::adaptformer)
        out = nn::add(out, bottleneck_delta(x_self, entry->first, entry->second, true));
    else if (entry && adapters->kind == AdapterKind::serial_adapter)
        out = nn::add(out, bottleneck_delta(mlp_out, entry->first, entry->second, true));
    return out;
}

namespace {

nn::Mat patchify(const EncoderConfig& cfg, const Image& image) {
    const int p = cfg.patch_size;
    const int g = cfg.grid_size();
    nn::Mat patches(cfg.num_tokens(), p * p * 3);
    for (int ty = 0; ty < g; ++ty)
        for (int tx = 0; tx < g; ++tx) {
            const long row = static_cast<long>(ty) * g + tx;
            long c = 0;
            for (int py = 0; py < p; ++py)
                for (int px = 0; px < p; ++px)
                    for (int ch = 0; ch < 3; ++ch)
                        patches(row, c++) = image.at(ty * p + py, tx * p + px, ch);
        }
    return patches;
}

} // namespace

FeatureMap encode_image_graph(const Encoder& enc, const Image& image,
                              const AdapterTensors* adapters,
                              const std::string& frame_id) {
    const auto& cfg = enc.cfg;
    if (image.h != cfg.image_size || image.w != cfg.image_size)
        throw ShapeError("encode_image: image dimensions do not match config");
    for (double v : image.pix)
        if (!std::isfinite(v)) throw InputError("encode_image: non-finite pixel value");

    auto x = nn::row_broadcast_add(
        nn::matmul(nn::constant(patchify(cfg, image)), enc.patch_w), enc.patch_b);
    x = nn::add(x, enc.pos_emb);
    for (int b = 0; b < cfg.num_blocks; ++b)
        x = encoder_block_forward(enc.blocks[static_cast<std::size_t>(b)], x,
                                  cfg.num_heads, adapters, b);

    FeatureMap fm;
    fm.tokens = x;
    fm.h = cfg.grid_size();
    fm.w = cfg.grid_size();
    fm.source_frame_id = frame_id;
    return fm;
}

FeatureMap encode_image(const Encoder& enc, const Image& image,
                        const AdapterSet* adapters, const std::string& frame_id) {
    if (!adapters) return encode_image_graph(enc, image, nullptr, frame_id);
    auto consts = adapter_constants(*adapters);
    return encode_image_graph(enc, image, &consts, frame_id);
}

} // namespace fewseg
