#include "tcnet/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "tcnet/adam.hpp"
#include "tcnet/metrics.hpp"
#include "tcnet/rng.hpp"

namespace fs = std::filesystem;

namespace tcnet {

namespace {

struct Batch {
    Tensor<float> image;  // [B,4,H,W]
    Tensor<float> mask;   // [B,1,H,W]
    Tensor<float> coarse; // [B,1,G,G]
};

Batch collate(const std::vector<SegSample>& samples, const std::vector<std::size_t>& order,
              std::size_t begin, std::size_t end) {
    const int b = static_cast<int>(end - begin);
    const auto& first = samples[order[begin]];
    const int side = first.image.shape[1];
    const int g = first.coarse.shape[0];
    Batch out;
    out.image = Tensor<float>({b, 4, side, side});
    out.mask = Tensor<float>({b, 1, side, side});
    out.coarse = Tensor<float>({b, 1, g, g});
    for (int i = 0; i < b; ++i) {
        const auto& s = samples[order[begin + i]];
        std::copy_n(s.image.ptr(), s.image.numel(), out.image.ptr() + i * s.image.numel());
        std::copy_n(s.mask.ptr(), s.mask.numel(), out.mask.ptr() + i * s.mask.numel());
        std::copy_n(s.coarse.ptr(), s.coarse.numel(), out.coarse.ptr() + i * s.coarse.numel());
    }
    return out;
}

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.precision(12);
    f << "epoch,lr,loss_total,loss_dice,loss_bce,loss_coarse,val_dsc\n";
    for (const auto& r : history)
        f << r.epoch << ',' << r.lr << ',' << r.loss_total << ',' << r.loss_dice << ',' << r.loss_bce
          << ',' << r.loss_coarse << ',' << r.val_dsc << '\n';
}

// full configured schedule, independent of early stopping
void write_lr_csv(const std::string& path, const TrainConfig& tc) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.precision(17);
    f << "epoch,lr\n";
    for (int e = 0; e < tc.epochs; ++e) f << e << ',' << schedule_lr(tc.lr0, tc.decay, e) << '\n';
}

} // namespace

double mean_sample_dsc(TcNet<float>& net, const std::vector<SegSample>& samples, int batch_size) {
    if (samples.empty()) return 0.0;
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    double acc = 0.0;
    for (std::size_t at = 0; at < order.size(); at += batch_size) {
        const std::size_t end = std::min(order.size(), at + batch_size);
        Batch batch = collate(samples, order, at, end);
        ForwardTrace<float> trace = net.forward(batch.image, /*training=*/false);
        const int b = batch.image.shape[0];
        const std::size_t plane = trace.prob.numel() / static_cast<std::size_t>(b);
        const int side = batch.image.shape[2];
        for (int i = 0; i < b; ++i) {
            std::vector<std::uint8_t> pred(plane), gt(plane);
            const float* pp = trace.prob.ptr() + i * plane;
            const float* gp = batch.mask.ptr() + i * plane;
            for (std::size_t k = 0; k < plane; ++k) {
                pred[k] = pp[k] > 0.5f ? 1 : 0;
                gt[k] = gp[k] != 0.0f ? 1 : 0;
            }
            acc += dsc(BinaryMask({side, side}, std::move(pred)), BinaryMask({side, side}, std::move(gt)));
        }
    }
    return acc / static_cast<double>(samples.size());
}

TrainResult train(TcNet<float>& net, const std::vector<SegSample>& train_samples,
                  const std::vector<SegSample>& val_samples, const TrainConfig& tc,
                  const std::string& run_dir) {
    tc.validate();
    if (train_samples.empty()) throw ConfigError("train: empty training set");

    if (!run_dir.empty()) fs::create_directories(run_dir);
    Adam<float> adam(tc.beta1, tc.beta2, tc.adam_eps);
    adam.attach(net);
    Rng shuffle_rng(tc.seed ^ 0x7aa1d5ull);

    TrainResult result;
    std::vector<std::size_t> order(train_samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    const std::string best_dir = run_dir.empty() ? "" : (fs::path(run_dir) / "checkpoint_best").string();
    const std::string last_dir = run_dir.empty() ? "" : (fs::path(run_dir) / "checkpoint_last").string();

    int epochs_run = 0;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        const double lr = schedule_lr(tc.lr0, tc.decay, epoch);
        for (std::size_t k = order.size(); k > 1; --k)
            std::swap(order[k - 1], order[shuffle_rng.uniform_index(k)]);

        double loss_total = 0, loss_dice = 0, loss_bce = 0, loss_coarse = 0;
        std::size_t batches = 0;
        for (std::size_t at = 0; at < order.size(); at += tc.batch_size) {
            const std::size_t end = std::min(order.size(), at + tc.batch_size);
            Batch batch = collate(train_samples, order, at, end);
            ForwardTrace<float> trace = net.forward(batch.image, /*training=*/true);
            Tensor<float> grad_logits;
            std::vector<Tensor<float>> grad_grids;
            const LossBreakdown loss =
                total_loss(trace, batch.mask, batch.coarse, tc.lambda_cpa, &grad_logits, &grad_grids);
            if (!std::isfinite(loss.total))
                throw NumericError("training diverged (non-finite loss) at epoch " +
                                   std::to_string(epoch) + "; last-good checkpoint retained");
            net.zero_grad();
            net.backward(grad_logits, grad_grids);
            adam.step(lr);
            loss_total += loss.total;
            loss_dice += loss.dice;
            loss_bce += loss.bce;
            loss_coarse += loss.coarse;
            ++batches;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.loss_total = loss_total / batches;
        rec.loss_dice = loss_dice / batches;
        rec.loss_bce = loss_bce / batches;
        rec.loss_coarse = loss_coarse / batches;
        rec.val_dsc = mean_sample_dsc(net, val_samples, tc.batch_size);
        result.history.push_back(rec);
        epochs_run = epoch + 1;

        if (rec.val_dsc > result.best_val_dsc || result.best_epoch < 0) {
            result.best_val_dsc = rec.val_dsc;
            result.best_epoch = epoch;
            if (!best_dir.empty())
                save_checkpoint(best_dir, net, epoch, result.best_val_dsc, result.history);
        }
        if (!run_dir.empty()) {
            write_history_csv((fs::path(run_dir) / "history.csv").string(), result.history);
            write_lr_csv((fs::path(run_dir) / "lr_schedule.csv").string(), tc);
        }
        if (tc.stop_at_val_dsc > 0.0 && rec.val_dsc >= tc.stop_at_val_dsc) break;
    }

    if (!last_dir.empty())
        save_checkpoint(last_dir, net, epochs_run - 1, result.best_val_dsc, result.history);
    return result;
}

} // namespace tcnet
