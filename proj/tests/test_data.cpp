#include "fewseg/common.hpp"
#include "fewseg/data.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

using namespace fewseg;

TEST_CASE("class naming and folds") {
    CHECK(kNumClasses == 18);
    CHECK(ShapeClass::from_id(0).name() == "disk:flat");
    CHECK(ShapeClass::from_name("cross:noise").id() ==
          ShapeClass{ShapeFamily::cross, ShapeTexture::noise}.id());
    CHECK_THROWS_AS(ShapeClass::from_id(18), InputError);
    CHECK_THROWS_AS(ShapeClass::from_name("blob:flat"), InputError);

    auto folds = make_folds();
    CHECK(folds.size() == 3);
    for (const auto& f : folds) {
        CHECK(f.test_classes.size() == 6);
        CHECK(f.train_classes.size() == 12);
        std::set<int> train(f.train_classes.begin(), f.train_classes.end());
        for (int c : f.test_classes) CHECK(train.count(c) == 0); // disjoint
    }
    // each class tests in exactly one fold
    std::set<int> tested;
    for (const auto& f : folds)
        for (int c : f.test_classes) CHECK(tested.insert(c).second);
    CHECK(tested.size() == 18);

    CHECK_THROWS_AS(make_folds(0), ConfigError);
    CHECK_THROWS_AS(make_folds(1), ConfigError);
}

TEST_CASE("generate_episode: determinism and sample count") {
    auto cls = ShapeClass::from_id(3);
    auto a = generate_episode(cls, 6, 999, true, 64);
    auto b = generate_episode(cls, 6, 999, true, 64);
    CHECK(a.samples.size() == 6);
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        CHECK(a.samples[i].image.pix == b.samples[i].image.pix);
        CHECK(a.samples[i].mask.v == b.samples[i].mask.v);
    }
    auto c = generate_episode(cls, 6, 1000, true, 64);
    CHECK(a.samples[0].image.pix != c.samples[0].image.pix);
}

TEST_CASE("generator masks equal the analytic shape support exactly") {
    for (int id : {0, 4, 8, 11, 13, 17}) {
        auto cls = ShapeClass::from_id(id);
        auto ep = generate_episode(cls, 3, 1234 + static_cast<std::uint64_t>(id), true, 64);
        for (int i = 0; i < 3; ++i) {
            auto pose = target_pose_for_sample(cls, ep.seed, i, 64);
            const auto& mask = ep.samples[static_cast<std::size_t>(i)].mask;
            CHECK(mask.count() > 0); // at least one target-class instance
            for (int y = 0; y < 64; ++y)
                for (int x = 0; x < 64; ++x) {
                    const bool inside = shape_contains(pose, x + 0.5, y + 0.5);
                    if (mask.at(y, x) != (inside ? 1 : 0)) {
                        CHECK(false);
                        y = x = 64;
                    }
                }
        }
    }
}

TEST_CASE("distractors add non-class pixels outside the mask") {
    auto cls = ShapeClass::from_id(6);
    bool found_distractor_pixels = false;
    for (std::uint64_t seed = 0; seed < 8 && !found_distractor_pixels; ++seed) {
        auto with = generate_episode(cls, 4, seed, true, 64);
        auto without = generate_episode(cls, 4, seed, false, 64);
        for (std::size_t i = 0; i < with.samples.size(); ++i) {
            CHECK(with.samples[i].mask.v == without.samples[i].mask.v);
            for (int y = 0; y < 64 && !found_distractor_pixels; ++y)
                for (int x = 0; x < 64; ++x) {
                    if (with.samples[i].mask.at(y, x)) continue;
                    if (with.samples[i].image.at(y, x, 0) !=
                        without.samples[i].image.at(y, x, 0)) {
                        found_distractor_pixels = true;
                        break;
                    }
                }
        }
    }
    CHECK(found_distractor_pixels);
}

TEST_CASE("synthesize_prompt: tight box, containment, determinism") {
    // box of a mask occupying rows 10-20, cols 30-40 -> (30, 10, 40, 20)
    Mask m(64, 64);
    for (int y = 10; y <= 20; ++y)
        for (int x = 30; x <= 40; ++x) m.at(y, x) = 1;
    auto box = synthesize_prompt(m, PromptKind::box, 5);
    CHECK(box.box.x_min == 30);
    CHECK(box.box.y_min == 10);
    CHECK(box.box.x_max == 40);
    CHECK(box.box.y_max == 20);

    auto pt = synthesize_prompt(m, PromptKind::point, 5);
    REQUIRE(pt.points.size() == 1);
    CHECK(m.at(pt.points[0].y, pt.points[0].x) == 1);

    auto again = synthesize_prompt(m, PromptKind::point, 5);
    CHECK(pt.points[0].x == again.points[0].x);
    CHECK(pt.points[0].y == again.points[0].y);

    auto mk = synthesize_prompt(m, PromptKind::mask, 5);
    CHECK(mk.kind == PromptKind::mask);
    CHECK(mk.mask.v == m.v);

    Mask empty(64, 64);
    CHECK_THROWS_AS(synthesize_prompt(empty, PromptKind::point, 1), InputError);
    CHECK_THROWS_AS(synthesize_prompt(empty, PromptKind::scribble, 1), InputError);
    CHECK_NOTHROW(synthesize_prompt(empty, PromptKind::mask, 1));
}

TEST_CASE("every scribble pixel lies inside the mask (1000 random masks)") {
    Rng rng(777);
    for (int trial = 0; trial < 1000; ++trial) {
        // random blobby mask from a few rectangles
        Mask m(32, 32);
        const int rects = 1 + static_cast<int>(rng.next_below(3));
        for (int r = 0; r < rects; ++r) {
            const int x0 = static_cast<int>(rng.next_below(24));
            const int y0 = static_cast<int>(rng.next_below(24));
            const int w = 2 + static_cast<int>(rng.next_below(8));
            const int h = 2 + static_cast<int>(rng.next_below(8));
            for (int y = y0; y < std::min(32, y0 + h); ++y)
                for (int x = x0; x < std::min(32, x0 + w); ++x) m.at(y, x) = 1;
        }
        auto sc = synthesize_prompt(m, PromptKind::scribble, rng.next_u64());
        REQUIRE(!sc.scribble.empty());
        CHECK(sc.scribble.size() <= 16);
        bool all_inside = true;
        for (const auto& [x, y] : sc.scribble) all_inside &= m.at(y, x) == 1;
        CHECK(all_inside);
        // 4-connected: consecutive points differ by one step
        for (std::size_t i = 1; i < sc.scribble.size(); ++i) {
            const int dx = std::abs(sc.scribble[i].first - sc.scribble[i - 1].first);
            const int dy = std::abs(sc.scribble[i].second - sc.scribble[i - 1].second);
            CHECK(dx + dy >= 1);
        }
    }
}

TEST_CASE("episode I/O round trip and error paths") {
    namespace fs = std::filesystem;
    auto ep = generate_episode(ShapeClass::from_id(10), 3, 31337, true, 64);
    const auto dir = fs::temp_directory_path() / "fewseg_test_episode";
    fs::remove_all(dir);
    write_episode(ep, dir.string());

    auto back = read_episode(dir.string());
    CHECK(back.class_id.id() == ep.class_id.id());
    CHECK(back.seed == ep.seed);
    CHECK(back.resolution == 64);
    REQUIRE(back.samples.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back.samples[i].image.pix == ep.samples[i].image.pix);
        CHECK(back.samples[i].mask.v == ep.samples[i].mask.v);
    }

    fs::remove(dir / "sample_1_mask.png");
    CHECK_THROWS_AS(read_episode(dir.string()), FormatError);

    {
        std::ofstream f(dir / "manifest", std::ios::trunc);
        f << "class_id = disk:flat\nn_samples = zzz\nseed = 1\nresolution = 64\n";
    }
    CHECK_THROWS_AS(read_episode(dir.string()), FormatError);
    CHECK_THROWS_AS(read_episode((dir / "missing").string()), FormatError);
}

TEST_CASE("fold manifest round trip") {
    namespace fs = std::filesystem;
    auto folds = make_folds();
    const auto path = (fs::temp_directory_path() / "fewseg_fold.txt").string();
    write_fold_manifest(folds[1], path);
    auto back = read_fold_manifest(path);
    CHECK(back.fold_id == 1);
    CHECK(back.train_classes == folds[1].train_classes);
    CHECK(back.test_classes == folds[1].test_classes);
}

TEST_CASE("images are quantized so PNG round trips are lossless") {
    auto ep = generate_episode(ShapeClass::from_id(1), 1, 2, false, 32);
    for (double v : ep.samples[0].image.pix) {
        const double q = std::round(v * 255.0) / 255.0;
        CHECK(v == doctest::Approx(q).epsilon(1e-12));
    }
}
