#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tcnet/checkpoint.hpp"
#include "tcnet/network.hpp"
#include "tcnet/preprocess.hpp"

namespace tcnet {

struct TrainConfig {
    double lr0 = 1e-3;
    double decay = 0.96; // multiplicative per-epoch factor
    int epochs = 60;     // 150 at full scale
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    double lambda_cpa = 0.25;
    std::uint64_t seed = 0;
    int batch_size = 4;
    double stop_at_val_dsc = 0.0; // > 0 stops once validation DSC reaches it
    double keep_empty_fraction = 0.0;

    void validate() const {
        std::string errs;
        auto fail = [&errs](const std::string& m) {
            if (!errs.empty()) errs += "; ";
            errs += m;
        };
        if (lr0 <= 0.0) fail("lr0 must be positive");
        if (decay <= 0.0 || decay > 1.0) fail("decay must lie in (0, 1]");
        if (epochs <= 0) fail("epochs must be positive");
        if (lambda_cpa < 0.0) fail("lambda_cpa must be nonnegative");
        if (batch_size <= 0) fail("batch_size must be positive");
        if (keep_empty_fraction < 0.0 || keep_empty_fraction > 1.0)
            fail("keep_empty_fraction must lie in [0, 1]");
        if (!errs.empty()) throw ConfigError("invalid train config: " + errs);
    }
};

inline double schedule_lr(double lr0, double decay, int epoch) {
    return lr0 * std::pow(decay, static_cast<double>(epoch));
}

struct TrainResult {
    std::vector<EpochRecord> history;
    int best_epoch = -1;
    double best_val_dsc = 0.0;
};

// Mean per-sample DSC of thresholded predictions (0.5) on a sample list.
double mean_sample_dsc(TcNet<float>& net, const std::vector<SegSample>& samples, int batch_size);

// Full training loop: seeded shuffling, Adam with the exponential LR schedule,
// per-epoch validation, best-DSC checkpointing. run_dir may be empty (no files
// written). Throws NumericError on divergence; the best checkpoint written so
// far is retained.
TrainResult train(TcNet<float>& net, const std::vector<SegSample>& train_samples,
                  const std::vector<SegSample>& val_samples, const TrainConfig& tc,
                  const std::string& run_dir);

} // namespace tcnet
