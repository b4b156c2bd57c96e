#include "fewseg/pipeline.hpp"

#include "fewseg/common.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>

using nlohmann::json;

namespace fewseg {

std::uint64_t Model::config_fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const int fields[] = {cfg.image_size, cfg.patch_size, cfg.embed_dim,
                          cfg.num_blocks,  cfg.num_heads,  cfg.mlp_ratio};
    h = fnv1a64(fields, sizeof(fields), h);
    const auto layers = cfg.effective_adapted_layers();
    h = fnv1a64(layers.data(), layers.size() * sizeof(int), h);
    h = fnv1a64(&seed, sizeof(seed), h);
    return h;
}

std::vector<const nn::Mat*> Model::frozen_parameters() const {
    auto out = encoder.parameter_matrices();
    for (const auto* m : conv_down.parameter_matrices()) out.push_back(m);
    for (const auto* m : mem_attn.parameter_matrices()) out.push_back(m);
    for (const auto* m : decoder.parameter_matrices()) out.push_back(m);
    return out;
}

long Model::frozen_parameter_count() const {
    long n = 0;
    for (const auto* m : frozen_parameters()) n += static_cast<long>(m->size());
    return n;
}

Model init_model(const EncoderConfig& cfg, AdapterKind kind, int bottleneck_dim,
                 std::uint64_t seed) {
    cfg.validate();
    if (cfg.patch_size != 4)
        throw ConfigError("model: patch_size must be 4 (conv_down downsamples by 4)");
    Model m;
    m.cfg = cfg;
    m.seed = seed;
    m.encoder = init_encoder(cfg, seed);
    m.conv_down = init_conv_down(cfg.embed_dim, derive_seed(seed, 0x33));
    m.mem_attn = init_memory_attention(cfg.embed_dim, cfg.num_heads, 2,
                                       derive_seed(seed, 0x44));
    m.decoder = init_decoder(cfg, derive_seed(seed, 0x55));
    m.adapters = init_adapters(cfg.effective_adapted_layers(), cfg.embed_dim, kind,
                               bottleneck_dim, derive_seed(seed, 0x66));
    return m;
}

PseudoVideo build_pseudo_video(std::vector<std::pair<Image, Prompt>> references,
                               Image target) {
    if (references.empty())
        throw InputError("pseudo-video needs at least one reference");
    for (const auto& [img, prompt] : references)
        if (img.h != target.h || img.w != target.w)
            throw ShapeError("pseudo-video frames must share resolution");
    PseudoVideo pv;
    pv.references = std::move(references);
    pv.target = std::move(target);
    return pv;
}

namespace {

nn::Mat binary_mask_matrix(const Mask& m) { return mask_to_matrix(m); }

// logits column ((H*W) x 1) -> H x W matrix
nn::Mat column_to_grid(const nn::Mat& col, int H, int W) {
    nn::Mat out(H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) out(y, x) = col(static_cast<long>(y) * W + x, 0);
    return out;
}

nn::Mat grid_to_column(const nn::Mat& grid) {
    nn::Mat out(grid.rows() * grid.cols(), 1);
    for (long y = 0; y < grid.rows(); ++y)
        for (long x = 0; x < grid.cols(); ++x) out(y * grid.cols() + x, 0) = grid(y, x);
    return out;
}

} // namespace

MaskPrediction segment_target(const Model& model, const PseudoVideo& pv) {
    const auto adapters = adapter_constants(model.adapters);
    MemoryBank bank;
    int frame = 0;
    for (const auto& [img, prompt] : pv.references) {
        const std::string fid = "ref" + std::to_string(frame++);
        auto fm = encode_image_graph(model.encoder, img, &adapters, fid);
        auto pred = reference_mask_from_prompt(model.decoder, fm, prompt);
        bank.append(encode_memory(model.conv_down, fm,
                                  binary_mask_matrix(pred.binary),
                                  MemoryOrigin::reference, fid));
    }
    auto fm_t = encode_image_graph(model.encoder, pv.target, &adapters, "target");
    auto matched = memory_attention(fm_t, bank, model.mem_attn);
    auto pred = decode_mask(model.decoder, matched, nullptr);
    bank.reset();
    return pred;
}

TrainingClip build_training_clip(const Episode& episode, int J, std::uint64_t seed) {
    if (J <= 0) throw InputError("training clip needs J >= 1 targets");
    const int n = static_cast<int>(episode.samples.size());
    if (n < J + 1)
        throw InputError("episode has too few samples for the requested clip");
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(seed, 0xC119u));
    for (int k = n - 1; k > 0; --k)
        std::swap(idx[static_cast<std::size_t>(k)],
                  idx[rng.next_below(static_cast<std::uint64_t>(k) + 1)]);
    TrainingClip clip;
    clip.reference_image = episode.samples[static_cast<std::size_t>(idx[0])].image;
    clip.reference_mask = episode.samples[static_cast<std::size_t>(idx[0])].mask;
    for (int j = 1; j <= J; ++j) {
        const auto& s = episode.samples[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])];
        clip.targets.emplace_back(s.image, s.mask);
    }
    return clip;
}

void TrainerConfig::validate() const {
    if (learning_rate <= 0) throw ConfigError("trainer: learning_rate must be positive");
    if (epochs <= 0) throw ConfigError("trainer: epochs must be positive");
    if (targets_per_clip <= 0) throw ConfigError("trainer: J must be positive");
    if (lambda_bce < 0 || lambda_dice < 0 || prompt_aux_weight < 0)
        throw ConfigError("trainer: loss weights must be nonnegative");
    if (weight_decay < 0) throw ConfigError("trainer: weight_decay must be nonnegative");
}

double bce_loss(const nn::Mat& logits, const Mask& target) {
    if (logits.rows() != target.h || logits.cols() != target.w)
        throw ShapeError("bce_loss: shape mismatch");
    double acc = 0.0;
    for (int y = 0; y < target.h; ++y)
        for (int x = 0; x < target.w; ++x) {
            const double l = logits(y, x);
            const double t = target.at(y, x) ? 1.0 : 0.0;
            acc += std::max(l, 0.0) - l * t + std::log1p(std::exp(-std::abs(l)));
        }
    return acc / (static_cast<double>(target.h) * target.w);
}

double dice_loss(const nn::Mat& probs, const Mask& target, double eps) {
    if (probs.rows() != target.h || probs.cols() != target.w)
        throw ShapeError("dice_loss: shape mismatch");
    double inter = 0.0, psum = 0.0, tsum = 0.0;
    for (int y = 0; y < target.h; ++y)
        for (int x = 0; x < target.w; ++x) {
            const double p = probs(y, x);
            const double t = target.at(y, x) ? 1.0 : 0.0;
            inter += p * t;
            psum += p;
            tsum += t;
        }
    return 1.0 - (2.0 * inter + eps) / (psum + tsum + eps);
}

namespace {

// graph-side dice on a probability column
nn::Tensor dice_loss_graph(const nn::Tensor& probs, const nn::Mat& target_col,
                           double eps = 1.0) {
    auto tgt = nn::constant(target_col);
    auto inter = nn::sum_all(nn::cmul(probs, tgt));
    auto denom = nn::add(nn::sum_all(probs), nn::sum_all(tgt));
    auto num = nn::add_scalar(nn::scale(inter, 2.0), eps);
    auto frac = nn::cdiv(num, nn::add_scalar(denom, eps));
    return nn::add_scalar(nn::scale(frac, -1.0), 1.0);
}

struct FramePass {
    nn::Tensor loss;
    FrameLoss values;
};

FramePass supervised_frame_loss(const nn::Tensor& logits_col, const Mask& gt,
                                double lambda_bce, double lambda_dice) {
    nn::Mat gt_col = grid_to_column(mask_to_matrix(gt));
    auto bce = nn::bce_with_logits_mean(logits_col, gt_col);
    auto dice = dice_loss_graph(nn::sigmoid(logits_col), gt_col);
    FramePass fp;
    fp.values.bce = bce->value(0, 0);
    fp.values.dice = dice->value(0, 0);
    fp.values.total = lambda_bce * fp.values.bce + lambda_dice * fp.values.dice;
    fp.loss = nn::add(nn::scale(bce, lambda_bce), nn::scale(dice, lambda_dice));
    return fp;
}

} // namespace

TrainingForwardResult training_forward(const Model& model, const TrainingClip& clip,
                                       const AdapterTensors& adapters,
                                       double lambda_bce, double lambda_dice) {
    if (clip.targets.empty()) throw InputError("training clip has no targets");
    const int H = model.cfg.image_size;

    MemoryBank bank;
    auto fm_r = encode_image_graph(model.encoder, clip.reference_image, &adapters, "ref");
    bank.append(encode_memory(model.conv_down, fm_r,
                              binary_mask_matrix(clip.reference_mask),
                              MemoryOrigin::reference, "ref"));

    TrainingForwardResult res;
    std::vector<nn::Tensor> losses;
    int j = 0;
    for (const auto& [img, gt] : clip.targets) {
        const std::string fid = "t" + std::to_string(j++);
        auto fm = encode_image_graph(model.encoder, img, &adapters, fid);
        auto matched = memory_attention(fm, bank, model.mem_attn);
        auto logits = decode_mask_graph(model.decoder, matched, nullptr);
        auto fp = supervised_frame_loss(logits, gt, lambda_bce, lambda_dice);
        losses.push_back(fp.loss);
        res.frame_losses.push_back(fp.values);

        // the prediction becomes a pseudo-reference for later frames. The mask
        // is detached from the graph and binarized so bank entries look the
        // same during training as the reference masks do at inference.
        if (j < static_cast<int>(clip.targets.size())) {
            auto soft = nn::detach(nn::sigmoid(logits));
            nn::Mat grid = column_to_grid(soft->value, H, H)
                               .unaryExpr([](double v) { return v > 0.5 ? 1.0 : 0.0; });
            bank.append(encode_memory(model.conv_down, fm, grid,
                                      MemoryOrigin::pseudo_reference, fid));
        }
    }

    nn::Tensor sum = losses[0];
    for (std::size_t i = 1; i < losses.size(); ++i) sum = nn::add(sum, losses[i]);
    res.total = nn::scale(sum, 1.0 / static_cast<double>(losses.size()));
    return res;
}

TrainResult train(Model& model, const std::vector<Episode>& dataset,
                  const TrainerConfig& cfg) {
    cfg.validate();
    if (dataset.empty()) throw InputError("train: empty dataset");
    for (const auto& ep : dataset)
        if (static_cast<int>(ep.samples.size()) < cfg.targets_per_clip + 1)
            throw InputError("train: episode too small for J=" +
                             std::to_string(cfg.targets_per_clip));

    nn::Adam opt(cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay);
    TrainResult result;
    int step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(dataset.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(cfg.seed, 0xE70C + static_cast<std::uint64_t>(epoch)));
        for (std::size_t k = order.size() - 1; k > 0; --k)
            std::swap(order[k], order[shuffle_rng.next_below(k + 1)]);

        for (std::size_t oi = 0; oi < order.size(); ++oi) {
            const auto& episode = dataset[order[oi]];
            const std::uint64_t step_seed =
                derive_seed(cfg.seed, 0x57E0 + static_cast<std::uint64_t>(step));
            auto clip = build_training_clip(episode, cfg.targets_per_clip, step_seed);

            auto leaves = adapter_leaves(model.adapters);
            auto fwd = training_forward(model, clip, leaves, cfg.lambda_bce,
                                        cfg.lambda_dice);
            nn::Tensor objective = fwd.total;

            double bce_sum = 0.0, dice_sum = 0.0;
            for (const auto& f : fwd.frame_losses) {
                bce_sum += cfg.lambda_bce * f.bce / static_cast<double>(fwd.frame_losses.size());
                dice_sum += cfg.lambda_dice * f.dice / static_cast<double>(fwd.frame_losses.size());
            }

            if (cfg.prompt_aux_weight > 0.0) {
                // teach the geometric-prompt path: decode the reference's own
                // mask from a sampled prompt and supervise it
                Rng krng(derive_seed(step_seed, 0xA0));
                const PromptKind kinds[3] = {PromptKind::point, PromptKind::box,
                                             PromptKind::scribble};
                const auto kind = kinds[krng.next_below(3)];
                auto prompt = synthesize_prompt(clip.reference_mask, kind,
                                                derive_seed(step_seed, 0xA1));
                auto tokens = encode_prompt(model.decoder, prompt);
                auto fm_r = encode_image_graph(model.encoder, clip.reference_image,
                                               &leaves, "aux_ref");
                auto logits = decode_mask_graph(model.decoder, fm_r, &tokens);
                auto fp = supervised_frame_loss(logits, clip.reference_mask,
                                                cfg.lambda_bce, cfg.lambda_dice);
                objective = nn::add(objective, nn::scale(fp.loss, cfg.prompt_aux_weight));
                bce_sum += cfg.prompt_aux_weight * cfg.lambda_bce * fp.values.bce;
                dice_sum += cfg.prompt_aux_weight * cfg.lambda_dice * fp.values.dice;
            }

            nn::backward(objective);

            std::vector<nn::Mat*> params;
            std::vector<const nn::Mat*> grads;
            for (auto& [li, w] : model.adapters.entries) {
                auto& pair = leaves.entries.at(li);
                pair.first->ensure_grad();
                pair.second->ensure_grad();
                params.push_back(&w.w_down);
                grads.push_back(&pair.first->grad);
                params.push_back(&w.w_up);
                grads.push_back(&pair.second->grad);
            }
            opt.step(params, grads);

            result.curve.push_back({step, objective->value(0, 0), bce_sum, dice_sum});
            ++step;
        }
    }
    return result;
}

void write_loss_curve(const std::vector<LossCurvePoint>& curve, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write loss curve: " + path);
    f << "step,total,bce,dice\n";
    f.precision(12);
    for (const auto& p : curve)
        f << p.step << "," << p.total << "," << p.bce << "," << p.dice << "\n";
}

namespace {

constexpr char kCheckpointMagic[8] = {'F', 'S', 'C', 'K', 'P', 'T', '0', '1'};

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw FormatError("checkpoint truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_mat(std::ostream& os, const std::string& name, const nn::Mat& m) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(m.rows()));
    write_u32(os, static_cast<std::uint32_t>(m.cols()));
    // row-major doubles, little-endian host assumed
    for (long i = 0; i < m.rows(); ++i)
        for (long j = 0; j < m.cols(); ++j) {
            const double v = m(i, j);
            os.write(reinterpret_cast<const char*>(&v), sizeof(double));
        }
}

std::pair<std::string, nn::Mat> read_mat(std::istream& is) {
    const auto name_len = read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto rows = read_u32(is);
    const auto cols = read_u32(is);
    if (!is || rows > 1u << 24 || cols > 1u << 24)
        throw FormatError("checkpoint array header corrupt");
    nn::Mat m(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i)
        for (std::uint32_t j = 0; j < cols; ++j) {
            double v;
            is.read(reinterpret_cast<char*>(&v), sizeof(double));
            if (!is) throw FormatError("checkpoint truncated");
            m(i, j) = v;
        }
    return {name, m};
}

} // namespace

void save_checkpoint(const AdapterSet& adapters, const Model& model,
                     const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint: " + path);
    os.write(kCheckpointMagic, 8);
    json meta;
    meta["kind"] = adapter_kind_name(adapters.kind);
    meta["bottleneck_dim"] = adapters.bottleneck_dim;
    meta["config_fingerprint"] = hex64(model.config_fingerprint());
    meta["seed"] = model.seed;
    meta["version"] = 1;
    const std::string meta_str = meta.dump();
    write_u32(os, static_cast<std::uint32_t>(meta_str.size()));
    os.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
    write_u32(os, static_cast<std::uint32_t>(adapters.entries.size() * 2));
    for (const auto& [li, w] : adapters.entries) {
        write_mat(os, "layer" + std::to_string(li) + ".W_down", w.w_down);
        write_mat(os, "layer" + std::to_string(li) + ".W_up", w.w_up);
    }
    if (!os) throw IoError("checkpoint write failed: " + path);
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw FormatError("not a checkpoint file: " + path);
    const auto meta_len = read_u32(is);
    std::string meta_str(meta_len, '\0');
    is.read(meta_str.data(), meta_len);
    if (!is) throw FormatError("checkpoint truncated: " + path);
    json meta;
    try {
        meta = json::parse(meta_str);
    } catch (const json::parse_error&) {
        throw FormatError("checkpoint metadata corrupt: " + path);
    }
    CheckpointInfo info;
    try {
        info.kind = meta.at("kind").get<std::string>();
        info.bottleneck_dim = meta.at("bottleneck_dim").get<int>();
        info.config_fingerprint = meta.at("config_fingerprint").get<std::string>();
        info.seed = meta.at("seed").get<std::uint64_t>();
        info.version = meta.at("version").get<int>();
    } catch (const json::exception&) {
        throw FormatError("checkpoint metadata incomplete: " + path);
    }
    return info;
}

AdapterSet load_checkpoint(const std::string& path, const Model& model) {
    const auto info = read_checkpoint_info(path);
    if (info.config_fingerprint != hex64(model.config_fingerprint()))
        throw CompatError("checkpoint fingerprint does not match model config");
    std::ifstream is(path, std::ios::binary);
    is.seekg(8);
    const auto meta_len = read_u32(is);
    is.seekg(8 + 4 + static_cast<std::streamoff>(meta_len));
    const auto n_arrays = read_u32(is);

    AdapterSet set;
    set.kind = adapter_kind_from_name(info.kind);
    set.bottleneck_dim = info.bottleneck_dim;
    for (std::uint32_t a = 0; a < n_arrays; ++a) {
        auto [name, m] = read_mat(is);
        const bool is_down = name.find(".W_down") != std::string::npos;
        const bool is_up = name.find(".W_up") != std::string::npos;
        if (name.rfind("layer", 0) != 0 || (!is_down && !is_up))
            throw FormatError("unexpected array name in checkpoint: " + name);
        int li = 0;
        try {
            li = std::stoi(name.substr(5, name.find('.') - 5));
        } catch (const std::exception&) {
            throw FormatError("unexpected array name in checkpoint: " + name);
        }
        auto& w = set.entries[li];
        w.kind = set.kind;
        w.layer_index = li;
        if (is_down) w.w_down = std::move(m);
        else w.w_up = std::move(m);
    }
    // structural compatibility with the live model
    const auto expected = model.cfg.effective_adapted_layers();
    if (set.entries.size() != expected.size())
        throw CompatError("checkpoint adapter layer set does not match model");
    for (int li : expected) {
        auto it = set.entries.find(li);
        if (it == set.entries.end())
            throw CompatError("checkpoint missing adapters for layer " + std::to_string(li));
        const auto& w = it->second;
        if (w.w_down.rows() != model.cfg.embed_dim ||
            w.w_down.cols() != set.bottleneck_dim ||
            w.w_up.rows() != set.bottleneck_dim || w.w_up.cols() != model.cfg.embed_dim)
            throw CompatError("checkpoint adapter shapes do not match model");
    }
    return set;
}

} // namespace fewseg
