#pragma once

#include <string>
#include <vector>

#include "tcnet/network.hpp"

namespace tcnet {

// One training-history row, persisted in checkpoints and history.csv.
struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double loss_total = 0.0;
    double loss_dice = 0.0;
    double loss_bce = 0.0;
    double loss_coarse = 0.0;
    double val_dsc = 0.0;
};

// Checkpoint directory layout:
//   manifest.json           network config, seed, epoch, metric history
//   tensors/<name>.tcnt     one tensor container file per parameter/buffer
void save_checkpoint(const std::string& dir, TcNet<float>& net, int epoch, double best_val_dsc,
                     const std::vector<EpochRecord>& history);

struct CheckpointInfo {
    NetworkConfig network;
    std::uint64_t seed = 0;
    int epoch = -1;
    double best_val_dsc = 0.0;
    std::vector<EpochRecord> history;
};

TcNet<float> load_checkpoint(const std::string& dir, CheckpointInfo* info_out = nullptr);

} // namespace tcnet
