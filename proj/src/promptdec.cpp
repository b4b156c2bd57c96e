#include "fewseg/promptdec.hpp"

#include "fewseg/common.hpp"

#include <cmath>

namespace fewseg {

std::string prompt_kind_name(PromptKind k) {
    switch (k) {
        case PromptKind::mask: return "mask";
        case PromptKind::point: return "point";
        case PromptKind::box: return "box";
        case PromptKind::scribble: return "scribble";
    }
    return "?";
}

PromptKind prompt_kind_from_name(const std::string& name) {
    if (name == "mask") return PromptKind::mask;
    if (name == "point") return PromptKind::point;
    if (name == "box") return PromptKind::box;
    if (name == "scribble") return PromptKind::scribble;
    throw ConfigError("unknown prompt kind: " + name);
}

Prompt Prompt::make_mask(Mask m) {
    Prompt p;
    p.kind = PromptKind::mask;
    p.mask = std::move(m);
    return p;
}

Prompt Prompt::make_point(int x, int y, bool foreground) {
    Prompt p;
    p.kind = PromptKind::point;
    p.points.push_back({x, y, foreground});
    return p;
}

Prompt Prompt::make_box(int x_min, int y_min, int x_max, int y_max) {
    Prompt p;
    p.kind = PromptKind::box;
    p.box = {x_min, y_min, x_max, y_max};
    return p;
}

Prompt Prompt::make_scribble(std::vector<std::pair<int, int>> pts) {
    Prompt p;
    p.kind = PromptKind::scribble;
    p.scribble = std::move(pts);
    return p;
}

namespace {

nn::Mat trunc_normal_mat(Rng& rng, long rows, long cols, double std_dev = 0.02) {
    nn::Mat m(rows, cols);
    for (long j = 0; j < cols; ++j)
        for (long i = 0; i < rows; ++i) m(i, j) = rng.next_trunc_normal(std_dev);
    return m;
}

void push_attn(std::vector<const nn::Mat*>& out, const nn::Tensor& q,
               const nn::Tensor& k, const nn::Tensor& v, const nn::Tensor& o) {
    out.push_back(&q->value);
    out.push_back(&k->value);
    out.push_back(&v->value);
    out.push_back(&o->value);
}

} // namespace

std::vector<const nn::Mat*> Decoder::parameter_matrices() const {
    std::vector<const nn::Mat*> out = {&output_tokens->value, &type_emb->value, &fourier};
    for (const auto& b : blocks) {
        push_attn(out, b.self_q, b.self_k, b.self_v, b.self_o);
        push_attn(out, b.t2i_q, b.t2i_k, b.t2i_v, b.t2i_o);
        push_attn(out, b.i2t_q, b.i2t_k, b.i2t_v, b.i2t_o);
        out.push_back(&b.ln_a_g->value);
        out.push_back(&b.ln_a_b->value);
        out.push_back(&b.ln_b_g->value);
        out.push_back(&b.ln_b_b->value);
        out.push_back(&b.ln_c_g->value);
        out.push_back(&b.ln_c_b->value);
        out.push_back(&b.ln_d_g->value);
        out.push_back(&b.ln_d_b->value);
        out.push_back(&b.mlp_w1->value);
        out.push_back(&b.mlp_b1->value);
        out.push_back(&b.mlp_w2->value);
        out.push_back(&b.mlp_b2->value);
    }
    out.push_back(&mask_ln_g->value);
    out.push_back(&mask_ln_b->value);
    out.push_back(&mask_mlp_w1->value);
    out.push_back(&mask_mlp_b1->value);
    out.push_back(&mask_mlp_w2->value);
    out.push_back(&mask_mlp_b2->value);
    for (const auto* m : dense_down.parameter_matrices()) out.push_back(m);
    return out;
}

Decoder init_decoder(const EncoderConfig& cfg, std::uint64_t seed) {
    Decoder dec;
    const int d = cfg.embed_dim;
    dec.embed_dim = d;
    dec.num_heads = cfg.num_heads;
    dec.patch_size = cfg.patch_size;
    dec.image_size = cfg.image_size;

    Rng rng(derive_seed(seed, 0xDEC0));
    dec.output_tokens = nn::constant(trunc_normal_mat(rng, 2, d));
    dec.type_emb = nn::constant(trunc_normal_mat(rng, 5, d, 0.5));
    dec.fourier = trunc_normal_mat(rng, 2, d / 2, 1.0);

    for (int b = 0; b < 2; ++b) {
        Rng brng(derive_seed(seed, 0xD2B0 + static_cast<std::uint64_t>(b)));
        TwoWayBlock tb;
        auto mk = [&]() { return nn::constant(trunc_normal_mat(brng, d, d)); };
        tb.self_q = mk(); tb.self_k = mk(); tb.self_v = mk(); tb.self_o = mk();
        tb.t2i_q = mk(); tb.t2i_k = mk(); tb.t2i_v = mk(); tb.t2i_o = mk();
        tb.i2t_q = mk(); tb.i2t_k = mk(); tb.i2t_v = mk(); tb.i2t_o = mk();
        auto ones = [&]() { return nn::constant(nn::Mat::Ones(1, d)); };
        auto zeros = [&]() { return nn::constant(nn::Mat::Zero(1, d)); };
        tb.ln_a_g = ones(); tb.ln_a_b = zeros();
        tb.ln_b_g = ones(); tb.ln_b_b = zeros();
        tb.ln_c_g = ones(); tb.ln_c_b = zeros();
        tb.ln_d_g = ones(); tb.ln_d_b = zeros();
        tb.mlp_w1 = nn::constant(trunc_normal_mat(brng, d, 2 * d));
        tb.mlp_b1 = nn::constant(nn::Mat::Zero(1, 2 * d));
        tb.mlp_w2 = nn::constant(trunc_normal_mat(brng, 2 * d, d));
        tb.mlp_b2 = nn::constant(nn::Mat::Zero(1, d));
        dec.blocks.push_back(std::move(tb));
    }
    Rng hrng(derive_seed(seed, 0x0EAD));
    dec.mask_ln_g = nn::constant(nn::Mat::Ones(1, d));
    dec.mask_ln_b = nn::constant(nn::Mat::Zero(1, d));
    dec.mask_mlp_w1 = nn::constant(trunc_normal_mat(hrng, d, d, 0.1));
    dec.mask_mlp_b1 = nn::constant(nn::Mat::Zero(1, d));
    dec.mask_mlp_w2 = nn::constant(trunc_normal_mat(hrng, d, d, 0.1));
    dec.mask_mlp_b2 = nn::constant(nn::Mat::Zero(1, d));
    dec.dense_down = init_conv_down(d, derive_seed(seed, 0xDE4E));
    return dec;
}

namespace {

Eigen::RowVectorXd fourier_features(const Decoder& dec, double px, double py) {
    const int half = static_cast<int>(dec.fourier.cols());
    Eigen::RowVector2d p(px / dec.image_size, py / dec.image_size);
    Eigen::RowVectorXd proj = 2.0 * M_PI * (p * dec.fourier);
    Eigen::RowVectorXd out(2 * half);
    for (int i = 0; i < half; ++i) {
        out(i) = std::sin(proj(i));
        out(half + i) = std::cos(proj(i));
    }
    return out;
}

void check_coord(const Decoder& dec, int x, int y) {
    if (x < 0 || y < 0 || x >= dec.image_size || y >= dec.image_size)
        throw InputError("prompt coordinate out of image bounds");
}

Eigen::RowVectorXd sparse_token(const Decoder& dec, int x, int y, int type_row) {
    return fourier_features(dec, x + 0.5, y + 0.5) + dec.type_emb->value.row(type_row);
}

} // namespace

PromptTokens encode_prompt(const Decoder& dec, const Prompt& prompt) {
    PromptTokens out;
    const int d = dec.embed_dim;
    switch (prompt.kind) {
        case PromptKind::mask: {
            if (prompt.mask.h != dec.image_size || prompt.mask.w != dec.image_size)
                throw ShapeError("mask prompt resolution mismatch");
            out.sparse.resize(0, d);
            out.dense = conv_down_apply(dec.dense_down, mask_to_matrix(prompt.mask));
            return out;
        }
        case PromptKind::point: {
            if (prompt.points.empty()) throw InputError("point prompt has no points");
            out.sparse.resize(static_cast<long>(prompt.points.size()), d);
            for (std::size_t i = 0; i < prompt.points.size(); ++i) {
                const auto& p = prompt.points[i];
                check_coord(dec, p.x, p.y);
                out.sparse.row(static_cast<long>(i)) =
                    sparse_token(dec, p.x, p.y, p.foreground ? 0 : 1);
            }
            return out;
        }
        case PromptKind::box: {
            const auto& b = prompt.box;
            check_coord(dec, b.x_min, b.y_min);
            check_coord(dec, b.x_max, b.y_max);
            if (b.x_max < b.x_min || b.y_max < b.y_min)
                throw InputError("degenerate box prompt");
            out.sparse.resize(2, d);
            out.sparse.row(0) = sparse_token(dec, b.x_min, b.y_min, 2);
            out.sparse.row(1) = sparse_token(dec, b.x_max, b.y_max, 3);
            return out;
        }
        case PromptKind::scribble: {
            if (prompt.scribble.empty()) throw InputError("empty scribble prompt");
            // subsample to at most 16 evenly spaced points
            const std::size_t n = prompt.scribble.size();
            std::vector<std::pair<int, int>> pts;
            if (n <= 16) {
                pts = prompt.scribble;
            } else {
                for (int i = 0; i < 16; ++i)
                    pts.push_back(prompt.scribble[i * n / 16]);
            }
            out.sparse.resize(static_cast<long>(pts.size()), d);
            for (std::size_t i = 0; i < pts.size(); ++i) {
                check_coord(dec, pts[i].first, pts[i].second);
                out.sparse.row(static_cast<long>(i)) =
                    sparse_token(dec, pts[i].first, pts[i].second, 4);
            }
            return out;
        }
    }
    throw InputError("invalid prompt kind");
}

nn::Tensor decode_mask_graph(const Decoder& dec, const FeatureMap& features,
                             const PromptTokens* prompt_tokens) {
    const int d = dec.embed_dim;
    if (features.tokens->value.cols() != d)
        throw ShapeError("decode_mask: feature width mismatch");
    const int n = features.h * features.w;
    if (features.tokens->value.rows() != n)
        throw ShapeError("decode_mask: token count mismatch");

    auto x = features.tokens;
    if (prompt_tokens && prompt_tokens->dense) {
        if (prompt_tokens->dense->rows() != n)
            throw ShapeError("decode_mask: dense prompt size mismatch");
        x = nn::add(x, nn::constant(*prompt_tokens->dense));
    }

    nn::Tensor q = dec.output_tokens;
    if (prompt_tokens && prompt_tokens->sparse.rows() > 0)
        q = nn::vconcat({q, nn::constant(prompt_tokens->sparse)});

    for (const auto& b : dec.blocks) {
        auto qa = nn::layernorm_rows(q, b.ln_a_g, b.ln_a_b);
        q = nn::add(q, multihead_attention(qa, qa, b.self_q, b.self_k, b.self_v,
                                           b.self_o, dec.num_heads));
        auto qb = nn::layernorm_rows(q, b.ln_b_g, b.ln_b_b);
        q = nn::add(q, multihead_attention(qb, x, b.t2i_q, b.t2i_k, b.t2i_v,
                                           b.t2i_o, dec.num_heads));
        auto qc = nn::layernorm_rows(q, b.ln_c_g, b.ln_c_b);
        auto mid = nn::gelu(nn::row_broadcast_add(nn::matmul(qc, b.mlp_w1), b.mlp_b1));
        q = nn::add(q, nn::row_broadcast_add(nn::matmul(mid, b.mlp_w2), b.mlp_b2));
        auto xd = nn::layernorm_rows(x, b.ln_d_g, b.ln_d_b);
        x = nn::add(x, multihead_attention(xd, q, b.i2t_q, b.i2t_k, b.i2t_v,
                                           b.i2t_o, dec.num_heads));
    }

    // mask token readout: per-token logits, bilinearly upsampled to pixels
    auto mask_tok = nn::block(q, 0, 0, 1, d);
    auto mt = nn::layernorm_rows(mask_tok, dec.mask_ln_g, dec.mask_ln_b);
    auto mid = nn::gelu(nn::row_broadcast_add(nn::matmul(mt, dec.mask_mlp_w1),
                                              dec.mask_mlp_b1));
    auto mvec = nn::row_broadcast_add(nn::matmul(mid, dec.mask_mlp_w2), dec.mask_mlp_b2);
    auto token_logits = nn::matmul(x, nn::transpose(mvec)); // n x 1
    return nn::upsample_bilinear(token_logits, features.h, features.w, dec.patch_size);
}

MaskPrediction prediction_from_logits(const nn::Mat& logits) {
    for (long j = 0; j < logits.cols(); ++j)
        for (long i = 0; i < logits.rows(); ++i)
            if (!std::isfinite(logits(i, j)))
                throw InputError("mask prediction logits must be finite");
    MaskPrediction mp;
    mp.logits = logits;
    mp.binary = matrix_to_mask(logits, 0.0);
    return mp;
}

MaskPrediction decode_mask(const Decoder& dec, const FeatureMap& features,
                           const PromptTokens* prompt_tokens) {
    auto pix = decode_mask_graph(dec, features, prompt_tokens);
    const int H = features.h * dec.patch_size;
    const int W = features.w * dec.patch_size;
    nn::Mat logits(H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            logits(y, x) = pix->value(static_cast<long>(y) * W + x, 0);
    return prediction_from_logits(logits);
}

MaskPrediction reference_mask_from_prompt(const Decoder& dec,
                                          const FeatureMap& encoder_features,
                                          const Prompt& prompt) {
    if (prompt.kind == PromptKind::mask) {
        const auto& m = prompt.mask;
        if (m.h != dec.image_size || m.w != dec.image_size)
            throw ShapeError("mask prompt resolution mismatch");
        nn::Mat logits(m.h, m.w);
        for (int y = 0; y < m.h; ++y)
            for (int x = 0; x < m.w; ++x)
                logits(y, x) = m.at(y, x) ? kBypassLogit : -kBypassLogit;
        return prediction_from_logits(logits);
    }
    auto tokens = encode_prompt(dec, prompt);
    return decode_mask(dec, encoder_features, &tokens);
}

} // namespace fewseg
