#pragma once

#include "foolhd/dsp.hpp"
#include "foolhd/nets.hpp"

#include <limits>
#include <optional>
#include <random>
#include <vector>

namespace foolhd {

enum class AttackMode { Untargeted, Targeted };
enum class LossVariant { Perceptual, Mse };

struct AttackConfig {
    AttackMode mode = AttackMode::Untargeted;
    LossVariant loss_variant = LossVariant::Perceptual;
    bool skip_enabled = true;
    int max_iterations = 500;  // M
    double lr = 1e-3;
    double weight_decay = 1e-5;
    double dropout = 1e-3;
    double epsilon = 0.004;  // FGSM/BIM only
    int bim_iterations = 10;
    int mdct_frame_len = 512;
    int gca_width = 64;
    std::optional<int> target;  // targeted mode; drawn at random when absent

    void validate() const;

    static AttackConfig foolhd();          // untargeted, M=500
    static AttackConfig foolhd_targeted(); // targeted, M=1000
    static AttackConfig foolhd_mse();
    static AttackConfig foolhd_noskip();
};

struct CandidateEntry {
    int iteration = 0;
    double imperceptibility_loss = 0.0;  // L_P (or MSE for the mse variant)
    int predicted = -1;
};

/// Goal-satisfying iterations; only the lowest-loss clip is kept in memory.
struct CandidatePool {
    std::vector<CandidateEntry> entries;
    std::vector<double> best_clip;
    double best_loss = std::numeric_limits<double>::infinity();
    int best_iteration = -1;
    int best_predicted = -1;

    bool empty() const { return entries.empty(); }
};

struct IterationTrace {
    double total = 0.0;
    double perceptual = 0.0;
    double adversarial = 0.0;
};

struct AttackResult {
    std::vector<double> adversarial;  // same length as the input clip
    int label = -1;
    int prediction = -1;  // full-pipeline prediction on the (quantized) output
    std::optional<int> target;
    bool success = false;
    double final_perceptual = 0.0;   // L_P of the returned clip
    double final_adversarial = 0.0;  // margin loss of the returned clip
    int iterations = 0;
    std::vector<IterationTrace> trace;
    CandidatePool pool;
};

// Uniform over {0..n-1} \ {y}.
int choose_random_target(int y, int n, std::mt19937_64& rng);

AttackResult foolhd_attack(const AudioClip& x, int y, const XVectorModel& model,
                           const AttackConfig& cfg, std::mt19937_64& rng);

AttackResult fgsm_attack(const AudioClip& x, int y, const XVectorModel& model, double epsilon);

AttackResult bim_attack(const AudioClip& x, int y, const XVectorModel& model, double epsilon,
                        int iterations);

// Full, non-frozen evaluation used for final verification: quantize to PCM16
// and back, compute classifier features with a fresh VAD mask, predict.
int evaluate_prediction(const XVectorModel& model, const AudioClip& clip);

}  // namespace foolhd
