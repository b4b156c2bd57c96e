#pragma once

#include "fewseg/image.hpp"
#include "fewseg/promptdec.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fewseg {

enum class ShapeFamily { disk, square, triangle, ring, cross, bar };
enum class ShapeTexture { flat, stripes, noise };

inline constexpr int kNumFamilies = 6;
inline constexpr int kNumTextures = 3;
inline constexpr int kNumClasses = kNumFamilies * kNumTextures;

// class id = (family, texture) pair
struct ShapeClass {
    ShapeFamily family = ShapeFamily::disk;
    ShapeTexture texture = ShapeTexture::flat;

    int id() const { return static_cast<int>(family) * kNumTextures + static_cast<int>(texture); }
    std::string name() const;

    static ShapeClass from_id(int id);
    static ShapeClass from_name(const std::string& name);
};

struct EpisodeSample {
    Image image;
    Mask mask;
};

struct Episode {
    ShapeClass class_id;
    std::vector<EpisodeSample> samples;
    std::uint64_t seed = 0;
    int resolution = 64;
};

struct FoldSpec {
    int fold_id = 0;
    std::vector<int> train_classes;
    std::vector<int> test_classes;
};

// 3 folds of 6 classes; class c tests in fold (family + texture) mod 3.
std::vector<FoldSpec> make_folds(int num_folds = 3);

// Deterministic episode generator; masks equal the analytic shape support
// evaluated at pixel centers (no anti-aliasing).
Episode generate_episode(const ShapeClass& class_id, int n_samples,
                         std::uint64_t seed, bool distractors,
                         int resolution = 64);

// Analytic predicate of the sample's target shape at a pixel center;
// exposed so tests can audit mask exactness.
struct ShapePose {
    double cx = 0, cy = 0, scale = 1, rotation = 0;
    ShapeFamily family = ShapeFamily::disk;
};
bool shape_contains(const ShapePose& pose, double px, double py);
ShapePose target_pose_for_sample(const ShapeClass& class_id, std::uint64_t seed,
                                 int sample_index, int resolution);

// point: uniform foreground pixel; box: tight bounding box (inclusive);
// scribble: 4-connected random walk of length <= 16 confined to foreground.
Prompt synthesize_prompt(const Mask& mask, PromptKind kind, std::uint64_t seed);

// Episode directory layout: manifest + sample_{i}.png + sample_{i}_mask.png.
void write_episode(const Episode& episode, const std::string& dir);
Episode read_episode(const std::string& dir);

void write_fold_manifest(const FoldSpec& fold, const std::string& path);
FoldSpec read_fold_manifest(const std::string& path);

} // namespace fewseg
