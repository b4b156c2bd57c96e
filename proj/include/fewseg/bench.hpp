#pragma once

#include "fewseg/analysis.hpp"
#include "fewseg/pipeline.hpp"

#include <map>
#include <set>
#include <string>
#include <vector>

namespace fewseg {

// On-disk benchmark layout shared by the CLI and the acceptance suite:
//   <root>/folds/fold_<i>.txt
//   <root>/episodes/<family_texture>/ep_<j>/{manifest, sample_*.png, ...}
struct BenchmarkSpec {
    std::uint64_t seed = 0;
    int num_folds = 3;
    int episodes_per_class = 4;
    int samples_per_episode = 6;
    int image_size = 64;
    bool distractors = true;
};

// Generates fold manifests and every class's episodes; deterministic and
// idempotent under the same spec.
void write_benchmark(const std::string& root, const BenchmarkSpec& spec);

std::vector<Episode> load_episodes_for_classes(const std::string& root,
                                               const std::set<int>& classes);
FoldSpec load_fold(const std::string& root, int fold_id);

struct EvalReport {
    std::map<int, double> per_class_iou;
    double miou = 0.0;
    int episodes = 0;
};

// k-shot evaluation over a fold's unseen classes: the first `shots` samples
// of each episode become prompted references, the next sample is the target.
EvalReport eval_fold(const Model& model, const std::string& data_root,
                     const FoldSpec& fold, int shots, PromptKind prompt,
                     int episodes_per_class, std::uint64_t seed,
                     bool permute_refs = false);

void write_eval_report(const EvalReport& rep, std::ostream& os);

struct AnnotateResult {
    double seconds = 0.0;
    int outputs = 0;
};

// Segments every target against every labeled reference mask and writes one
// mask PNG per (target, label) pair under out_dir. With cache on, each
// reference's memory entry is computed once and reused across targets.
AnnotateResult annotate_batch(
    const Model& model,
    const std::vector<std::pair<std::string, std::pair<Image, Mask>>>& refs,
    const std::vector<std::pair<std::string, Image>>& targets,
    const std::string& out_dir, bool cache);

} // namespace fewseg
