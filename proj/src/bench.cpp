#include "fewseg/bench.hpp"

#include "fewseg/common.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <ostream>

namespace fs = std::filesystem;

namespace fewseg {

namespace {

std::string class_dir_name(const ShapeClass& cls) {
    std::string n = cls.name();
    for (auto& c : n)
        if (c == ':') c = '_';
    return n;
}

} // namespace

void write_benchmark(const std::string& root, const BenchmarkSpec& spec) {
    fs::create_directories(fs::path(root) / "folds");
    for (const auto& f : make_folds(spec.num_folds))
        write_fold_manifest(
            f, (fs::path(root) / "folds" / ("fold_" + std::to_string(f.fold_id) + ".txt"))
                   .string());
    for (int cls = 0; cls < kNumClasses; ++cls) {
        const auto c = ShapeClass::from_id(cls);
        for (int e = 0; e < spec.episodes_per_class; ++e) {
            auto ep = generate_episode(
                c, spec.samples_per_episode,
                derive_seed(spec.seed, static_cast<std::uint64_t>(cls) * 1009 +
                                           static_cast<std::uint64_t>(e)),
                spec.distractors, spec.image_size);
            write_episode(ep, (fs::path(root) / "episodes" / class_dir_name(c) /
                               ("ep_" + std::to_string(e)))
                                  .string());
        }
    }
}

std::vector<Episode> load_episodes_for_classes(const std::string& root,
                                               const std::set<int>& classes) {
    std::vector<Episode> out;
    const fs::path episodes_dir = fs::path(root) / "episodes";
    if (!fs::exists(episodes_dir))
        throw InputError("no episodes directory under " + root + " (run gen-data first)");
    std::vector<fs::path> class_dirs;
    for (const auto& e : fs::directory_iterator(episodes_dir))
        if (e.is_directory()) class_dirs.push_back(e.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    for (const auto& cdir : class_dirs) {
        std::vector<fs::path> eps;
        for (const auto& e : fs::directory_iterator(cdir))
            if (e.is_directory()) eps.push_back(e.path());
        std::sort(eps.begin(), eps.end());
        for (const auto& edir : eps) {
            auto ep = read_episode(edir.string());
            if (classes.count(ep.class_id.id())) out.push_back(std::move(ep));
        }
    }
    return out;
}

FoldSpec load_fold(const std::string& root, int fold_id) {
    return read_fold_manifest(
        (fs::path(root) / "folds" / ("fold_" + std::to_string(fold_id) + ".txt")).string());
}

EvalReport eval_fold(const Model& model, const std::string& data_root,
                     const FoldSpec& fold, int shots, PromptKind prompt,
                     int episodes_per_class, std::uint64_t seed, bool permute_refs) {
    std::set<int> test_classes(fold.test_classes.begin(), fold.test_classes.end());
    auto episodes = load_episodes_for_classes(data_root, test_classes);
    if (episodes.empty()) throw InputError("no unseen-class episodes found");

    std::map<int, std::vector<double>> ious;
    std::map<int, int> used;
    int counter = 0;
    for (const auto& ep : episodes) {
        if (used[ep.class_id.id()] >= episodes_per_class) continue;
        if (static_cast<int>(ep.samples.size()) < shots + 1)
            throw InputError("episode too small for " + std::to_string(shots) + "-shot");
        ++used[ep.class_id.id()];

        std::vector<std::pair<Image, Prompt>> refs;
        for (int k = 0; k < shots; ++k) {
            const auto& s = ep.samples[static_cast<std::size_t>(k)];
            refs.emplace_back(s.image,
                              synthesize_prompt(s.mask, prompt,
                                                derive_seed(seed, 0xE0A1 + counter * 31 + k)));
        }
        if (permute_refs && refs.size() > 1) {
            Rng prng(derive_seed(seed, 0x9E21 + counter));
            for (std::size_t k = refs.size() - 1; k > 0; --k)
                std::swap(refs[k], refs[prng.next_below(k + 1)]);
        }
        const auto& target = ep.samples[static_cast<std::size_t>(shots)];
        auto pred = segment_target(model, build_pseudo_video(refs, target.image));
        ious[ep.class_id.id()].push_back(compute_iou(pred.binary, target.mask));
        ++counter;
    }

    EvalReport rep;
    double acc = 0.0;
    for (const auto& [cls, vals] : ious) {
        double m = 0.0;
        for (double v : vals) m += v;
        m /= static_cast<double>(vals.size());
        rep.per_class_iou[cls] = m;
        rep.episodes += static_cast<int>(vals.size());
        acc += m;
    }
    rep.miou = ious.empty() ? 0.0 : acc / static_cast<double>(ious.size());
    return rep;
}

void write_eval_report(const EvalReport& rep, std::ostream& os) {
    os << "class,iou\n";
    for (const auto& [cls, iou] : rep.per_class_iou)
        os << ShapeClass::from_id(cls).name() << "," << iou << "\n";
    os << "mIoU," << rep.miou << "\n";
}

AnnotateResult annotate_batch(
    const Model& model,
    const std::vector<std::pair<std::string, std::pair<Image, Mask>>>& refs,
    const std::vector<std::pair<std::string, Image>>& targets,
    const std::string& out_dir, bool cache) {
    if (refs.empty()) throw InputError("annotate: no references");
    if (targets.empty()) throw InputError("annotate: no target images");
    fs::create_directories(out_dir);
    const auto adapters = adapter_constants(model.adapters);

    auto make_entry = [&](const std::pair<Image, Mask>& ref) {
        auto fm = encode_image_graph(model.encoder, ref.first, &adapters, "ref");
        return encode_memory(model.conv_down, fm, mask_to_matrix(ref.second),
                             MemoryOrigin::reference, "ref");
    };

    const auto t0 = std::chrono::steady_clock::now();
    std::map<std::string, MemoryEntry> cached;
    if (cache)
        for (const auto& [label, ref] : refs) cached.emplace(label, make_entry(ref));

    AnnotateResult res;
    for (const auto& [tname, timg] : targets) {
        auto fm_t = encode_image_graph(model.encoder, timg, &adapters, tname);
        for (const auto& [label, ref] : refs) {
            MemoryBank bank;
            bank.append(cache ? cached.at(label) : make_entry(ref));
            auto matched = memory_attention(fm_t, bank, model.mem_attn);
            auto pred = decode_mask(model.decoder, matched, nullptr);
            write_mask_png((fs::path(out_dir) / (tname + "_" + label + ".png")).string(),
                           pred.binary);
            ++res.outputs;
        }
    }
    res.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

} // namespace fewseg
