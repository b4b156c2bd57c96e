#pragma once

#include "fewseg/data.hpp"
#include "fewseg/pipeline.hpp"

#include <string>
#include <vector>

namespace fewseg {

enum class Split { train, test };

// Mask-averaged token features of one object instance.
struct ObjectFeature {
    Eigen::VectorXd vector;
    int class_id = -1;
    Split split = Split::train;
};

// One vector per episode sample: mean of encoder tokens whose patch
// footprint is at least half covered by the mask. Instances whose mask
// covers no token are skipped.
std::vector<ObjectFeature> extract_object_features(const Model& model,
                                                   const std::vector<Episode>& episodes,
                                                   Split split,
                                                   bool use_adapters = true);

struct PCAModel {
    Eigen::VectorXd mean;            // d
    nn::Mat components;              // r x d, orthonormal rows
    Eigen::VectorXd explained_ratio; // nonincreasing, sums <= 1
};

PCAModel pca_fit(const std::vector<Eigen::VectorXd>& features);
nn::Mat pca_project(const PCAModel& model, const std::vector<Eigen::VectorXd>& features,
                    int n_components);

struct KMeansResult {
    nn::Mat centroids; // k x dim
    std::vector<int> assignments;
    double inertia = 0.0;
};

KMeansResult kmeans(const nn::Mat& points, int k, std::uint64_t seed, int restarts = 50);

// Appendix-style 4-step procedure: PCA fit on train, reduce both splits,
// k-means centroids on train, nearest-centroid assignment of test, mean
// per-class accuracy. n_components < 0 means no reduction; n_components
// equal to the feature dimension short-circuits to the unreduced path
// (a full orthonormal basis preserves all pairwise distances).
double centroid_assignment_accuracy(const std::vector<ObjectFeature>& train_feats,
                                    const std::vector<ObjectFeature>& test_feats,
                                    int n_components, std::uint64_t seed = 0);

struct SweepPoint {
    int n_components = 0;
    double relative_accuracy = 0.0;
};

std::vector<SweepPoint> pca_sweep(const std::vector<ObjectFeature>& train_feats,
                                  const std::vector<ObjectFeature>& test_feats,
                                  const std::vector<int>& component_grid,
                                  std::uint64_t seed = 0);

void write_sweep_csv(const std::vector<SweepPoint>& curve, const std::string& path);

// Pixel-level linear classifier on frozen per-token features; reports mIoU
// over the object classes of the test episodes.
struct LinearProbeResult {
    double miou = 0.0;
    std::vector<double> per_class_iou;
    std::vector<int> class_ids;
};

LinearProbeResult linear_probe(const Model& model,
                               const std::vector<Episode>& train_set,
                               const std::vector<Episode>& test_set,
                               bool use_adapters = true, int steps = 200,
                               double lr = 0.1);

// IoU with the empty-union convention IoU = 1.
double compute_iou(const Mask& pred, const Mask& gt);
double compute_miou(const std::vector<Mask>& preds, const std::vector<Mask>& gts);

// Joint PCA over token features of several images; first three components
// mapped to RGB, min-max normalized jointly. Zero-variance channels render
// mid-gray. Writes {path_prefix}{i}.png upsampled to out_size.
void pca_rgb_export(const std::vector<nn::Mat>& features_per_token, int grid_h,
                    int grid_w, int out_size, const std::string& path_prefix);

} // namespace fewseg
