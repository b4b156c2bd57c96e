#include "fewseg/bench.hpp"
#include "fewseg/common.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace fewseg;

namespace {

EncoderConfig mini_config() {
    EncoderConfig cfg;
    cfg.image_size = 16;
    cfg.patch_size = 4;
    cfg.embed_dim = 8;
    cfg.num_blocks = 2;
    cfg.num_heads = 2;
    cfg.mlp_ratio = 2;
    return cfg;
}

std::string bench_root() {
    namespace fs = std::filesystem;
    static std::string root;
    if (root.empty()) {
        const auto dir = fs::temp_directory_path() / "fewseg_test_bench";
        fs::remove_all(dir);
        BenchmarkSpec spec;
        spec.seed = 77;
        spec.episodes_per_class = 2;
        spec.samples_per_episode = 3;
        spec.image_size = 16;
        write_benchmark(dir.string(), spec);
        root = dir.string();
    }
    return root;
}

} // namespace

TEST_CASE("write_benchmark lays out folds and per-class episode directories") {
    namespace fs = std::filesystem;
    const auto root = bench_root();
    CHECK(fs::exists(fs::path(root) / "folds" / "fold_0.txt"));
    CHECK(fs::exists(fs::path(root) / "folds" / "fold_2.txt"));
    int class_dirs = 0;
    for (const auto& e : fs::directory_iterator(fs::path(root) / "episodes"))
        if (e.is_directory()) ++class_dirs;
    CHECK(class_dirs == kNumClasses);
    auto fold = load_fold(root, 1);
    CHECK(fold.fold_id == 1);
    CHECK(fold.test_classes.size() == 6);
}

TEST_CASE("load_episodes_for_classes filters strictly by class set") {
    const auto root = bench_root();
    auto fold = load_fold(root, 0);
    std::set<int> test_classes(fold.test_classes.begin(), fold.test_classes.end());
    auto eps = load_episodes_for_classes(root, test_classes);
    CHECK(eps.size() == test_classes.size() * 2);
    for (const auto& ep : eps) CHECK(test_classes.count(ep.class_id.id()) == 1);
}

TEST_CASE("eval_fold only touches unseen classes and respects permutation flag") {
    const auto root = bench_root();
    auto fold = load_fold(root, 0);
    auto model = init_model(mini_config(), AdapterKind::adaptformer, 4, 5);

    auto rep = eval_fold(model, root, fold, 2, PromptKind::mask, 2, 7);
    std::set<int> test_classes(fold.test_classes.begin(), fold.test_classes.end());
    CHECK(rep.per_class_iou.size() == test_classes.size());
    for (const auto& [cls, iou] : rep.per_class_iou) {
        CHECK(test_classes.count(cls) == 1);
        CHECK(iou >= 0.0);
        CHECK(iou <= 1.0);
    }
    CHECK(rep.episodes == 12);

    auto permuted = eval_fold(model, root, fold, 2, PromptKind::mask, 2, 7, true);
    CHECK(permuted.miou == doctest::Approx(rep.miou).epsilon(1e-12));
}

TEST_CASE("annotate_batch: cache on/off write bit-identical masks") {
    namespace fs = std::filesystem;
    auto model = init_model(mini_config(), AdapterKind::adaptformer, 4, 9);
    auto ref_ep = generate_episode(ShapeClass::from_id(0), 1, 100, false, 16);
    std::vector<std::pair<std::string, std::pair<Image, Mask>>> refs = {
        {"c0", {ref_ep.samples[0].image, ref_ep.samples[0].mask}}};
    std::vector<std::pair<std::string, Image>> targets;
    for (int t = 0; t < 3; ++t)
        targets.emplace_back("t" + std::to_string(t),
                             generate_episode(ShapeClass::from_id(0), 1,
                                              200 + static_cast<std::uint64_t>(t), true, 16)
                                 .samples[0]
                                 .image);

    const auto base = fs::temp_directory_path() / "fewseg_test_annotate";
    fs::remove_all(base);
    auto on = annotate_batch(model, refs, targets, (base / "on").string(), true);
    auto off = annotate_batch(model, refs, targets, (base / "off").string(), false);
    CHECK(on.outputs == 3);
    CHECK(off.outputs == 3);
    for (const auto& e : fs::directory_iterator(base / "on")) {
        std::ifstream a(e.path(), std::ios::binary);
        std::ifstream b(base / "off" / e.path().filename(), std::ios::binary);
        std::stringstream sa, sb;
        sa << a.rdbuf();
        sb << b.rdbuf();
        CHECK(sa.str() == sb.str());
        CHECK(!sa.str().empty());
    }

    CHECK_THROWS_AS(annotate_batch(model, {}, targets, (base / "x").string(), true),
                    InputError);
    CHECK_THROWS_AS(annotate_batch(model, refs, {}, (base / "y").string(), true),
                    InputError);
}
