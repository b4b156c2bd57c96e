#include "fewseg/bench.hpp"
#include "fewseg/common.hpp"
#include "fewseg/runconfig.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

namespace fs = std::filesystem;
using namespace fewseg;

namespace {

// Relative output paths land under FEWSEG_OUT_ROOT when it is set.
std::string resolve_out(const std::string& path) {
    const char* root = std::getenv("FEWSEG_OUT_ROOT");
    if (!root || *root == '\0' || fs::path(path).is_absolute()) return path;
    return (fs::path(root) / path).string();
}

Model build_model(const RunConfig& rc) {
    return init_model(rc.encoder, rc.adapter_kind, rc.effective_bottleneck(),
                      rc.model_seed);
}

int cmd_gen_data(const std::string& out, std::uint64_t seed, int folds,
                 int episodes_per_class, int samples_per_episode, int image_size,
                 bool distractors) {
    const auto root = resolve_out(out);
    BenchmarkSpec spec;
    spec.seed = seed;
    spec.num_folds = folds;
    spec.episodes_per_class = episodes_per_class;
    spec.samples_per_episode = samples_per_episode;
    spec.image_size = image_size;
    spec.distractors = distractors;
    write_benchmark(root, spec);
    std::cout << "wrote " << kNumClasses << " classes, " << folds
              << " fold manifests, " << kNumClasses * episodes_per_class
              << " episodes under " << root << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, int fold_id, const std::string& out_ckpt,
              const std::string& data_dir) {
    auto rc = load_run_config(config_path);
    const std::string data_root = data_dir.empty() ? rc.data.root : data_dir;
    auto fold = load_fold(data_root, fold_id);

    std::set<int> train_classes(fold.train_classes.begin(), fold.train_classes.end());
    std::set<int> test_classes(fold.test_classes.begin(), fold.test_classes.end());
    auto dataset = load_episodes_for_classes(data_root, train_classes);
    if (dataset.empty()) throw InputError("no train-class episodes found");
    // strict-FSS audit: a test-class episode in the train set is a hard stop
    for (const auto& ep : dataset)
        if (test_classes.count(ep.class_id.id()))
            throw StateError("fold leakage: test-class episode in training set");

    auto model = build_model(rc);
    std::cout << "frozen parameters:    " << model.frozen_parameter_count() << "\n";
    std::cout << "trainable parameters: " << model.adapters.parameter_count() << "\n";

    auto result = train(model, dataset, rc.trainer);

    const auto ckpt_path = resolve_out(out_ckpt);
    if (fs::path(ckpt_path).has_parent_path())
        fs::create_directories(fs::path(ckpt_path).parent_path());
    save_checkpoint(model.adapters, model, ckpt_path);
    write_loss_curve(result.curve, ckpt_path + ".loss.csv");
    std::cout << "steps: " << result.curve.size() << ", final loss: "
              << (result.curve.empty() ? 0.0 : result.curve.back().total) << "\n";
    std::cout << "checkpoint: " << ckpt_path << "\n";
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt,
             const std::string& data_dir, int fold_id, int shots,
             const std::string& prompt_name, std::uint64_t seed, int episodes_per_class,
             bool permute_refs, const std::string& out_file) {
    auto rc = load_run_config(config_path);
    const std::string data_root = data_dir.empty() ? rc.data.root : data_dir;
    auto fold = load_fold(data_root, fold_id);

    auto model = build_model(rc);
    if (!ckpt.empty()) model.adapters = load_checkpoint(ckpt, model);

    auto rep = eval_fold(model, data_root, fold, shots,
                         prompt_kind_from_name(prompt_name), episodes_per_class, seed,
                         permute_refs);
    write_eval_report(rep, std::cout);
    if (!out_file.empty()) {
        const auto path = resolve_out(out_file);
        std::ofstream f(path);
        if (!f) throw IoError("cannot write report: " + path);
        write_eval_report(rep, f);
    }
    return 0;
}

int cmd_annotate(const std::string& config_path, const std::string& ckpt,
                 const std::string& refs_dir, const std::string& targets_dir,
                 const std::string& out_dir, bool cache) {
    auto rc = load_run_config(config_path);
    auto model = build_model(rc);
    if (!ckpt.empty()) model.adapters = load_checkpoint(ckpt, model);

    // one prompted reference per class: <label>.png + <label>_mask.png
    std::vector<std::pair<std::string, std::pair<Image, Mask>>> refs;
    for (const auto& e : fs::directory_iterator(refs_dir)) {
        const auto name = e.path().filename().string();
        if (e.path().extension() != ".png" || name.find("_mask.png") != std::string::npos)
            continue;
        const std::string label = e.path().stem().string();
        const auto mask_path = fs::path(refs_dir) / (label + "_mask.png");
        if (!fs::exists(mask_path))
            throw InputError("reference " + name + " has no _mask.png companion");
        refs.emplace_back(label, std::make_pair(read_png_rgb(e.path().string()),
                                                read_mask_png(mask_path.string())));
    }
    std::sort(refs.begin(), refs.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    if (refs.empty()) throw InputError("no references found in " + refs_dir);

    std::vector<std::pair<std::string, Image>> targets;
    if (fs::exists(targets_dir))
        for (const auto& e : fs::directory_iterator(targets_dir))
            if (e.path().extension() == ".png")
                targets.emplace_back(e.path().stem().string(),
                                     read_png_rgb(e.path().string()));
    std::sort(targets.begin(), targets.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    if (targets.empty()) throw InputError("no target images found in " + targets_dir);

    const auto out_root = resolve_out(out_dir);
    auto res = annotate_batch(model, refs, targets, out_root, cache);
    std::cout << "annotated " << targets.size() << " targets x " << refs.size()
              << " classes = " << res.outputs << " masks\n";
    std::cout << "cache=" << (cache ? "on" : "off") << " wall=" << res.seconds
              << "s rate="
              << (res.seconds > 0 ? static_cast<double>(targets.size()) / res.seconds
                                  : 0.0)
              << " img/s\n";
    return 0;
}

std::vector<Episode> split_half(const std::vector<Episode>& eps, bool first_half) {
    // deterministic per-class alternation so both halves cover every class
    std::map<int, int> seen;
    std::vector<Episode> out;
    for (const auto& ep : eps) {
        const int k = seen[ep.class_id.id()]++;
        if ((k % 2 == 0) == first_half) out.push_back(ep);
    }
    return out;
}

int cmd_analyze(const std::string& config_path, const std::string& ckpt,
                const std::string& mode, const std::string& data_dir, int fold_id,
                const std::string& out_dir, std::uint64_t seed) {
    auto rc = load_run_config(config_path);
    const std::string data_root = data_dir.empty() ? rc.data.root : data_dir;
    auto fold = load_fold(data_root, fold_id);
    const auto out_root = resolve_out(out_dir);
    fs::create_directories(out_root);

    std::set<int> test_classes(fold.test_classes.begin(), fold.test_classes.end());
    auto unseen = load_episodes_for_classes(data_root, test_classes);
    if (unseen.empty()) throw InputError("no unseen-class episodes found");

    if (mode == "pca-sweep" || mode == "probe" || mode == "pca-rgb") {
        if (ckpt.empty())
            throw InputError("analyze --mode " + mode +
                             " compares frozen vs adapted and needs --checkpoint");
        auto model = build_model(rc);
        model.adapters = load_checkpoint(ckpt, model);

        if (mode == "pca-sweep") {
            auto ftrain = split_half(unseen, true);
            auto ftest = split_half(unseen, false);
            const int d = rc.encoder.embed_dim;
            std::vector<int> grid;
            for (int n = 2; n < d; n *= 2) grid.push_back(n);
            grid.push_back(d);
            for (bool adapted : {false, true}) {
                auto tr = extract_object_features(model, ftrain, Split::train, adapted);
                auto te = extract_object_features(model, ftest, Split::test, adapted);
                auto curve = pca_sweep(tr, te, grid, seed);
                const auto path = fs::path(out_root) /
                                  (adapted ? "pca_sweep_adapted.csv" : "pca_sweep_frozen.csv");
                write_sweep_csv(curve, path.string());
                std::cout << (adapted ? "adapted" : "frozen") << " 2-PC relative accuracy: "
                          << curve.front().relative_accuracy << "\n";
            }
            return 0;
        }
        if (mode == "probe") {
            auto ptrain = split_half(unseen, true);
            auto ptest = split_half(unseen, false);
            auto frozen = linear_probe(model, ptrain, ptest, false);
            auto adapted = linear_probe(model, ptrain, ptest, true);
            std::ofstream f(fs::path(out_root) / "probe.csv");
            f << "variant,miou\nfrozen," << frozen.miou << "\nadapted," << adapted.miou
              << "\n";
            std::cout << "probe mIoU frozen=" << frozen.miou
                      << " adapted=" << adapted.miou << " gap="
                      << adapted.miou - frozen.miou << "\n";
            return 0;
        }
        // pca-rgb
        std::vector<nn::Mat> frozen_feats, adapted_feats;
        const int n_imgs = std::min<std::size_t>(4, unseen.size());
        for (int i = 0; i < n_imgs; ++i) {
            const auto& img = unseen[static_cast<std::size_t>(i)].samples.at(0).image;
            frozen_feats.push_back(encode_image(model.encoder, img, nullptr).grid());
            adapted_feats.push_back(encode_image(model.encoder, img, &model.adapters).grid());
        }
        const int g = rc.encoder.grid_size();
        pca_rgb_export(frozen_feats, g, g, rc.encoder.image_size,
                       (fs::path(out_root) / "pca_rgb_frozen_").string());
        pca_rgb_export(adapted_feats, g, g, rc.encoder.image_size,
                       (fs::path(out_root) / "pca_rgb_adapted_").string());
        std::cout << "wrote " << 2 * n_imgs << " PCA-RGB images under " << out_root
                  << "\n";
        return 0;
    }

    if (mode == "ablation") {
        std::set<int> train_classes(fold.train_classes.begin(), fold.train_classes.end());
        auto train_eps = load_episodes_for_classes(data_root, train_classes);
        if (train_eps.empty()) throw InputError("no train-class episodes found");

        struct Row {
            std::string name;
            double miou;
        };
        std::vector<Row> rows;
        auto eval_variant = [&](Model& m) {
            return eval_fold(m, data_root, fold, 1, PromptKind::mask,
                             rc.eval.episodes_per_class, seed, false)
                .miou;
        };

        {
            auto frozen = build_model(rc); // zero-init adapters = frozen model
            rows.push_back({"frozen_zero_shot", eval_variant(frozen)});
        }
        auto train_variant = [&](AdapterKind kind, int dtilde, int J) {
            auto m = init_model(rc.encoder, kind, dtilde, rc.model_seed);
            auto tc = rc.trainer;
            tc.targets_per_clip = J;
            train(m, train_eps, tc);
            return eval_variant(m);
        };
        const int dt = rc.effective_bottleneck();
        rows.push_back({"adaptformer_J1", train_variant(AdapterKind::adaptformer, dt, 1)});
        rows.push_back({"adaptformer_J2_full_loss",
                        train_variant(AdapterKind::adaptformer, dt, 2)});
        rows.push_back({"lora_J2", train_variant(AdapterKind::lora, dt, 2)});
        rows.push_back({"serial_adapter_J2",
                        train_variant(AdapterKind::serial_adapter, dt, 2)});
        const int d = rc.encoder.embed_dim;
        for (int dim : {d / 4, 3 * d / 4})
            if (dim > 0 && dim < d && dim != dt)
                rows.push_back({"adaptformer_J2_dim" + std::to_string(dim),
                                train_variant(AdapterKind::adaptformer, dim, 2)});

        std::ofstream f(fs::path(out_root) / "ablation.csv");
        f << "variant,miou\n";
        std::cout << "variant,miou\n";
        for (const auto& r : rows) {
            f << r.name << "," << r.miou << "\n";
            std::cout << r.name << "," << r.miou << "\n";
        }
        return 0;
    }
    throw InputError("unknown analyze mode: " + mode);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"few-shot segmentation workbench: prompt-and-propagate matching "
                 "with trainable bottleneck adapters on a frozen backbone"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate the synthetic-shapes benchmark");
    std::string gen_out = "data";
    std::uint64_t gen_seed = 0;
    int gen_folds = 3, gen_epc = 4, gen_spe = 6, gen_size = 64;
    bool gen_distractors = true;
    gen->add_option("--out", gen_out, "output root");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--folds", gen_folds, "number of class folds")
        ->check(CLI::Range(2, 18));
    gen->add_option("--episodes-per-class", gen_epc)->check(CLI::PositiveNumber);
    gen->add_option("--samples-per-episode", gen_spe)->check(CLI::PositiveNumber);
    gen->add_option("--image-size", gen_size)->check(CLI::PositiveNumber);
    gen->add_flag("--distractors,!--no-distractors", gen_distractors,
                  "draw other-class shapes");

    // train
    auto* tr = app.add_subcommand("train", "train adapters on a fold's base classes");
    std::string tr_config, tr_ckpt = "adapters.ckpt", tr_data;
    int tr_fold = 0;
    tr->add_option("--config", tr_config, "run config file");
    tr->add_option("--fold", tr_fold, "fold id")->required();
    tr->add_option("--out-checkpoint", tr_ckpt, "checkpoint output path");
    tr->add_option("--data", tr_data, "data root (defaults to config data.root)");

    // eval
    auto* ev = app.add_subcommand("eval", "k-shot evaluation on unseen classes");
    std::string ev_config, ev_ckpt, ev_data, ev_prompt = "mask", ev_out;
    int ev_fold = 0, ev_shots = 1, ev_epc = 3;
    std::uint64_t ev_seed = 0;
    bool ev_permute = false;
    ev->add_option("--config", ev_config);
    ev->add_option("--checkpoint", ev_ckpt, "adapter checkpoint (omit for frozen)");
    ev->add_option("--data", ev_data);
    ev->add_option("--fold", ev_fold)->required();
    ev->add_option("--shots", ev_shots)->check(CLI::PositiveNumber);
    ev->add_option("--prompt", ev_prompt)
        ->check(CLI::IsMember({"mask", "point", "box", "scribble"}));
    ev->add_option("--seed", ev_seed);
    ev->add_option("--episodes-per-class", ev_epc)->check(CLI::PositiveNumber);
    ev->add_flag("--permute-refs", ev_permute, "shuffle reference order before matching");
    ev->add_option("--out", ev_out, "also write the report CSV here");

    // annotate
    auto* an = app.add_subcommand("annotate", "batch annotation with cached references");
    std::string an_config, an_ckpt, an_refs, an_targets, an_out = "annotations",
                an_cache = "on";
    an->add_option("--config", an_config);
    an->add_option("--checkpoint", an_ckpt);
    an->add_option("--refs", an_refs, "dir with <label>.png + <label>_mask.png pairs")
        ->required();
    an->add_option("--targets", an_targets, "dir with target .png images")->required();
    an->add_option("--out", an_out);
    an->add_option("--cache", an_cache)->check(CLI::IsMember({"on", "off"}));

    // analyze
    auto* az = app.add_subcommand("analyze", "representation analyses and ablations");
    std::string az_config, az_ckpt, az_mode, az_data, az_out = "analysis";
    int az_fold = 0;
    std::uint64_t az_seed = 0;
    az->add_option("--config", az_config);
    az->add_option("--checkpoint", az_ckpt);
    az->add_option("--mode", az_mode)
        ->required()
        ->check(CLI::IsMember({"pca-sweep", "probe", "pca-rgb", "ablation"}));
    az->add_option("--data", az_data);
    az->add_option("--fold", az_fold)->required();
    az->add_option("--out", az_out);
    az->add_option("--seed", az_seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed())
            return cmd_gen_data(gen_out, gen_seed, gen_folds, gen_epc, gen_spe, gen_size,
                                gen_distractors);
        if (tr->parsed()) return cmd_train(tr_config, tr_fold, tr_ckpt, tr_data);
        if (ev->parsed())
            return cmd_eval(ev_config, ev_ckpt, ev_data, ev_fold, ev_shots, ev_prompt,
                            ev_seed, ev_epc, ev_permute, ev_out);
        if (an->parsed())
            return cmd_annotate(an_config, an_ckpt, an_refs, an_targets, an_out,
                                an_cache == "on");
        if (az->parsed())
            return cmd_analyze(az_config, az_ckpt, az_mode, az_data, az_fold, az_out,
                               az_seed);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
