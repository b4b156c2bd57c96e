#pragma once

#include "fewseg/adapters.hpp"
#include "fewseg/data.hpp"
#include "fewseg/encoder.hpp"
#include "fewseg/memory.hpp"
#include "fewseg/promptdec.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fewseg {

// Full model: frozen encoder/memory/decoder plus the trainable adapters.
struct Model {
    EncoderConfig cfg;
    std::uint64_t seed = 0;
    Encoder encoder;
    ConvDown conv_down;
    MemoryAttentionWeights mem_attn;
    Decoder decoder;
    AdapterSet adapters;

    std::uint64_t config_fingerprint() const;
    // all frozen matrices, for bitwise invariance checks
    std::vector<const nn::Mat*> frozen_parameters() const;
    long frozen_parameter_count() const;
};

Model init_model(const EncoderConfig& cfg, AdapterKind kind, int bottleneck_dim,
                 std::uint64_t seed);

// References-then-target frame sequence; construction only.
struct PseudoVideo {
    std::vector<std::pair<Image, Prompt>> references;
    Image target;
};

PseudoVideo build_pseudo_video(std::vector<std::pair<Image, Prompt>> references,
                               Image target);

// k-shot inference: encode every reference into the bank (no memory
// attention on references), then match + decode the target.
MaskPrediction segment_target(const Model& model, const PseudoVideo& pv);

// One annotated reference propagated across J unlabeled targets.
struct TrainingClip {
    Image reference_image;
    Mask reference_mask;
    std::vector<std::pair<Image, Mask>> targets;
};

TrainingClip build_training_clip(const Episode& episode, int J, std::uint64_t seed);

struct TrainerConfig {
    double learning_rate = 1e-4;
    int epochs = 5;
    double lambda_bce = 1.0;
    double lambda_dice = 1.0;
    int targets_per_clip = 2; // J
    // Weight of the auxiliary reference-decode term that teaches the frozen
    // decoder's geometric-prompt path at desk scale. 0 disables it.
    double prompt_aux_weight = 1.0;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

// losses (pixel level; target is binary)
double bce_loss(const nn::Mat& logits, const Mask& target);
double dice_loss(const nn::Mat& probs, const Mask& target, double eps = 1.0);

struct FrameLoss {
    double bce = 0.0;
    double dice = 0.0;
    double total = 0.0; // lambda_bce * bce + lambda_dice * dice
};

struct TrainingForwardResult {
    nn::Tensor total;                   // 1x1 graph node, mean over frames
    std::vector<FrameLoss> frame_losses;
};

// Eq-style pseudo-reference propagation: predict target j conditioned on the
// reference plus all previous soft predictions; soft masks are detached
// before they re-enter the bank.
TrainingForwardResult training_forward(const Model& model, const TrainingClip& clip,
                                       const AdapterTensors& adapters,
                                       double lambda_bce = 1.0,
                                       double lambda_dice = 1.0);

struct LossCurvePoint {
    int step = 0;
    double total = 0.0;
    double bce = 0.0;
    double dice = 0.0;
};

struct TrainResult {
    std::vector<LossCurvePoint> curve;
};

// Episodic adapter training; mutates model.adapters only.
TrainResult train(Model& model, const std::vector<Episode>& dataset,
                  const TrainerConfig& cfg);

void write_loss_curve(const std::vector<LossCurvePoint>& curve, const std::string& path);

// Adapters-only checkpoint; bit-exact round trip.
void save_checkpoint(const AdapterSet& adapters, const Model& model,
                     const std::string& path);
AdapterSet load_checkpoint(const std::string& path, const Model& model);

// metadata peek without fingerprint verification
struct CheckpointInfo {
    std::string kind;
    int bottleneck_dim = 0;
    std::string config_fingerprint;
    std::uint64_t seed = 0;
    int version = 0;
};
CheckpointInfo read_checkpoint_info(const std::string& path);

} // namespace fewseg
