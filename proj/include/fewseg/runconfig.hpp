#pragma once

#include "fewseg/adapters.hpp"
#include "fewseg/encoder.hpp"
#include "fewseg/pipeline.hpp"
#include "fewseg/promptdec.hpp"

#include <cstdint>
#include <string>

namespace fewseg {

struct DataConfig {
    std::string root = "data";
    int image_size = 64;
    int episodes_per_class = 4;
    int samples_per_episode = 4;
    bool distractors = true;
    std::uint64_t seed = 0;
};

struct EvalConfig {
    int shots = 1;
    int episodes_per_class = 3;
    PromptKind prompt = PromptKind::mask;
    std::uint64_t seed = 0;
};

// Flat sectioned key-value config; every key has a default, unknown keys
// are rejected before any work starts.
struct RunConfig {
    EncoderConfig encoder;
    AdapterKind adapter_kind = AdapterKind::adaptformer;
    int bottleneck_dim = 0; // 0 -> embed_dim / 2
    std::uint64_t model_seed = 0;
    TrainerConfig trainer;
    DataConfig data;
    EvalConfig eval;

    int effective_bottleneck() const {
        return bottleneck_dim > 0 ? bottleneck_dim : encoder.embed_dim / 2;
    }
    void validate() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path); // empty path -> defaults

} // namespace fewseg
