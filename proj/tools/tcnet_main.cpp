#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tcnet/checkpoint.hpp"
#include "tcnet/config_json.hpp"
#include "tcnet/gradcheck_suite.hpp"
#include "tcnet/metrics.hpp"
#include "tcnet/preprocess.hpp"
#include "tcnet/synthetic.hpp"
#include "tcnet/tensor_io.hpp"
#include "tcnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace tcnet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

RunConfig load_config_or_defaults(const std::string& path) {
    if (path.empty()) return RunConfig{};
    return load_run_config(path);
}

PreprocessConfig preprocess_config_for(const NetworkConfig& net) {
    PreprocessConfig p;
    p.crop = 0;
    p.out_side = net.input_side;
    p.grid_side = net.patch_grid;
    return p;
}

void echo_config(const RunConfig& cfg, const std::string& run_dir) {
    fs::create_directories(run_dir);
    std::ofstream f(fs::path(run_dir) / "config.json", std::ios::trunc);
    if (!f) throw IoError("cannot write config echo in " + run_dir);
    f << run_config_to_json(cfg).dump(2) << '\n';
}

// Groups evaluation samples by volume and restacks 2D predictions along Z.
std::pair<std::vector<std::string>, std::vector<std::pair<BinaryMask, BinaryMask>>>
predict_volumes(TcNet<float>& net, const std::vector<SegSample>& samples, int batch_size) {
    std::map<int, std::vector<const SegSample*>> by_volume;
    for (const auto& s : samples) by_volume[s.volume_id].push_back(&s);

    std::vector<std::string> ids;
    std::vector<std::pair<BinaryMask, BinaryMask>> pairs;
    for (auto& [vol_id, slices] : by_volume) {
        std::sort(slices.begin(), slices.end(),
                  [](const SegSample* a, const SegSample* b) { return a->slice_z < b->slice_z; });
        const int side = slices.front()->image.shape[1];
        const int depth = static_cast<int>(slices.size());
        std::vector<std::uint8_t> pred(static_cast<std::size_t>(depth) * side * side);
        std::vector<std::uint8_t> gt(pred.size());
        const std::size_t plane = static_cast<std::size_t>(side) * side;

        for (int at = 0; at < depth; at += batch_size) {
            const int end = std::min(depth, at + batch_size);
            Tensor<float> batch({end - at, 4, side, side});
            for (int i = at; i < end; ++i)
                std::copy_n(slices[i]->image.ptr(), slices[i]->image.numel(),
                            batch.ptr() + static_cast<std::size_t>(i - at) * slices[i]->image.numel());
            ForwardTrace<float> trace = net.forward(batch, false);
            for (int i = at; i < end; ++i) {
                const float* pp = trace.prob.ptr() + static_cast<std::size_t>(i - at) * plane;
                const float* gp = slices[i]->mask.ptr();
                for (std::size_t k = 0; k < plane; ++k) {
                    pred[static_cast<std::size_t>(i) * plane + k] = pp[k] > 0.5f ? 1 : 0;
                    gt[static_cast<std::size_t>(i) * plane + k] = gp[k] != 0.0f ? 1 : 0;
                }
            }
        }
        char id[32];
        std::snprintf(id, sizeof(id), "vol_%03d", vol_id);
        ids.emplace_back(id);
        pairs.emplace_back(BinaryMask({depth, side, side}, std::move(pred)),
                           BinaryMask({depth, side, side}, std::move(gt)));
    }
    return {std::move(ids), std::move(pairs)};
}

int cmd_generate(const std::string& config_path, const std::string& out_override) {
    RunConfig cfg = load_config_or_defaults(config_path);
    const std::string dir = out_override.empty() ? cfg.dataset_dir : out_override;
    generate_synthetic(cfg.synth, dir);
    std::cout << "wrote " << cfg.synth.volumes << " volumes to " << dir << "\n";
    return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_override,
              const std::string& out_override) {
    RunConfig cfg = load_config_or_defaults(config_path);
    if (!data_override.empty()) cfg.dataset_dir = data_override;
    if (!out_override.empty()) cfg.run_dir = out_override;
    cfg.network.validate();
    cfg.train.validate();

    Dataset ds = load_dataset(cfg.dataset_dir, preprocess_config_for(cfg.network),
                              cfg.train.keep_empty_fraction);
    std::cout << "dataset: " << ds.train.size() << " train / " << ds.val.size() << " val samples\n";
    echo_config(cfg, cfg.run_dir);

    TcNet<float> net = TcNet<float>::build(cfg.network, cfg.train.seed);
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult result = train(net, ds.train, ds.val, cfg.train, cfg.run_dir);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "trained " << result.history.size() << " epochs in " << secs << " s, best val DSC "
              << result.best_val_dsc << " at epoch " << result.best_epoch << "\n";
    return kExitOk;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint_dir,
             const std::string& data_override, const std::string& out_csv, const std::string& split) {
    RunConfig cfg = load_config_or_defaults(config_path);
    if (!data_override.empty()) cfg.dataset_dir = data_override;
    CheckpointInfo info;
    TcNet<float> net = load_checkpoint(checkpoint_dir, &info);

    // evaluation never filters empty slices
    Dataset ds = load_dataset(cfg.dataset_dir, preprocess_config_for(info.network), 1.0);
    std::vector<SegSample> samples;
    if (split == "train" || split == "all")
        for (auto& s : ds.train) samples.push_back(std::move(s));
    if (split == "val" || split == "all")
        for (auto& s : ds.val) samples.push_back(std::move(s));
    if (samples.empty()) throw ConfigError("eval: split '" + split + "' selected no samples");

    auto [ids, pairs] = predict_volumes(net, samples, cfg.train.batch_size);
    MetricsReport report = compute_metrics(ids, pairs);
    const std::string csv = out_csv.empty() ? "metrics.csv" : out_csv;
    write_metrics_csv(csv, report);
    std::cout << "evaluated " << ids.size() << " volumes: mean DSC " << report.mean_dsc
              << ", global DSC " << report.dsc_global << " -> " << csv << "\n";
    return kExitOk;
}

int cmd_predict(const std::string& checkpoint_dir, const std::string& input_path,
                const std::string& out_prob, const std::string& out_mask) {
    TcNet<float> net = load_checkpoint(checkpoint_dir);
    Tensor<float> input = read_tensor(input_path);
    if (input.rank() == 3) input.reshape({1, input.shape[0], input.shape[1], input.shape[2]});
    ForwardTrace<float> trace = net.forward(input, false);

    Tensor<float> prob = trace.prob;
    prob.reshape({prob.shape[2], prob.shape[3]});
    Tensor<float> mask(prob.shape);
    for (std::size_t i = 0; i < prob.numel(); ++i) mask.data[i] = prob.data[i] > 0.5f ? 1.0f : 0.0f;
    if (!out_prob.empty()) write_tensor(out_prob, prob);
    if (!out_mask.empty()) write_mask_pgm(out_mask, mask);
    std::cout << "wrote probability map and thresholded mask\n";
    return kExitOk;
}

int cmd_ablate(const std::string& config_path, const std::string& data_override,
               const std::string& out_dir, int epochs) {
    RunConfig cfg = load_config_or_defaults(config_path);
    if (!data_override.empty()) cfg.dataset_dir = data_override;
    cfg.train.epochs = epochs;
    cfg.train.stop_at_val_dsc = 0.0;

    struct Combo {
        const char* label;
        bool cpa, cff, mdu;
    };
    const Combo combos[] = {
        {"Baseline", false, false, false},         {"Baseline+CPA", true, false, false},
        {"Baseline+CFF", false, true, false},      {"Baseline+MDU", false, false, true},
        {"Baseline+CPA+CFF", true, true, false},   {"Baseline+CPA+CFF+MDU", true, true, true},
    };

    Dataset ds = load_dataset(cfg.dataset_dir, preprocess_config_for(cfg.network),
                              cfg.train.keep_empty_fraction);
    Dataset eval_ds = load_dataset(cfg.dataset_dir, preprocess_config_for(cfg.network), 1.0);
    fs::create_directories(out_dir);

    std::ofstream csv(fs::path(out_dir) / "ablation.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot write ablation.csv in " + out_dir);
    csv.precision(9);
    csv << "model,dsc_global,dsc_mean,dsc_std,recall_mean,recall_std,precision_mean,precision_std,"
           "asd_mean,asd_std,hd_mean,hd_std,distance_excluded\n";

    for (const Combo& combo : combos) {
        NetworkConfig net_cfg = ablate(cfg.network, combo.cpa, combo.cff, combo.mdu);
        TcNet<float> net = TcNet<float>::build(net_cfg, cfg.train.seed);
        const std::string run_dir = (fs::path(out_dir) / combo.label).string();
        std::cout << combo.label << ": training " << epochs << " epochs...\n";
        train(net, ds.train, ds.val, cfg.train, run_dir);
        auto [ids, pairs] = predict_volumes(net, eval_ds.val, cfg.train.batch_size);
        MetricsReport r = compute_metrics(ids, pairs);
        csv << combo.label << ',' << r.dsc_global << ',' << r.mean_dsc << ',' << r.std_dsc << ','
            << r.mean_recall << ',' << r.std_recall << ',' << r.mean_precision << ','
            << r.std_precision << ',' << r.mean_assd << ',' << r.std_assd << ',' << r.mean_hd << ','
            << r.std_hd << ',' << r.distance_excluded << '\n';
        csv.flush();
    }
    std::cout << "ablation rows written to " << (fs::path(out_dir) / "ablation.csv").string() << "\n";
    return kExitOk;
}

int cmd_gradcheck(bool skip_network) {
    const auto cases = run_gradcheck_suite(!skip_network);
    bool all_pass = true;
    for (const auto& c : cases) {
        std::printf("%-28s max rel err %.3e (tolerance %.0e): %s%s%s\n", c.name.c_str(), c.max_rel_err,
                    c.tolerance, c.pass ? "pass" : "FAIL", c.pass ? "" : " at ",
                    c.pass ? "" : c.worst.c_str());
        all_pass = all_pass && c.pass;
    }
    if (!all_pass) throw NumericError("gradient-check suite failed");
    return kExitOk;
}

int cmd_inspect_attention(const std::string& checkpoint_dir, const std::string& input_path,
                          const std::string& out_dir, bool weights_only,
                          const std::string& weights_csv) {
    TcNet<float> net = load_checkpoint(checkpoint_dir);
    Tensor<float> input = read_tensor(input_path);
    if (input.rank() == 3) input.reshape({1, input.shape[0], input.shape[1], input.shape[2]});
    ForwardTrace<float> trace = net.forward(input, false);

    if (!weights_only) {
        fs::create_directories(out_dir);
        for (std::size_t s = 0; s < trace.attention.size(); ++s) {
            const auto& att = trace.attention[s];
            Tensor<float> grid = att.grid;
            grid.reshape({grid.shape[2], grid.shape[3]});
            Tensor<float> map = att.map;
            map.reshape({map.shape[2], map.shape[3]});
            char name[64];
            std::snprintf(name, sizeof(name), "stage%zu_grid.pgm", s + 1);
            write_gray_pgm((fs::path(out_dir) / name).string(), grid);
            std::snprintf(name, sizeof(name), "stage%zu_map.pgm", s + 1);
            write_gray_pgm((fs::path(out_dir) / name).string(), map);
        }
    }

    const std::string csv_path =
        !weights_csv.empty() ? weights_csv : (fs::path(out_dir) / "cff_weights.csv").string();
    if (!trace.cff_weights.empty()) {
        fs::create_directories(fs::path(csv_path).parent_path().empty()
                                   ? fs::path(".")
                                   : fs::path(csv_path).parent_path());
        std::ofstream csv(csv_path, std::ios::trunc);
        if (!csv) throw IoError("cannot write " + csv_path);
        csv.precision(9);
        csv << "stage,channel,w2,w3\n";
        for (const auto& [stage, w2, w3] : trace.cff_weights)
            for (std::size_t c = 0; c < w2.numel(); ++c)
                csv << stage << ',' << c << ',' << w2.data[c] << ',' << w3.data[c] << '\n';
        std::cout << "CFF weight vectors -> " << csv_path << "\n";
    } else if (weights_only) {
        throw ConfigError("checkpoint has no CFF stages; nothing to dump");
    }
    if (!weights_only) std::cout << "attention grids and maps -> " << out_dir << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"TC-Net lesion segmentation toolkit"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_path, checkpoint_dir, input_path, split = "val";
    std::string out_prob, out_mask;
    int ablate_epochs = 10;
    bool skip_network = false;

    auto* gen = app.add_subcommand("generate", "write a synthetic lesion dataset");
    gen->add_option("--config", config_path, "run config JSON");
    gen->add_option("--out", out_path, "dataset directory (overrides config)");

    auto* tr = app.add_subcommand("train", "train on a generated dataset");
    tr->add_option("--config", config_path, "run config JSON");
    tr->add_option("--data", data_dir, "dataset directory (overrides config)");
    tr->add_option("--out", out_path, "run directory (overrides config)");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint, CSV per patient");
    ev->add_option("--config", config_path, "run config JSON");
    ev->add_option("--checkpoint", checkpoint_dir, "checkpoint directory")->required();
    ev->add_option("--data", data_dir, "dataset directory (overrides config)");
    ev->add_option("--out", out_path, "output CSV path");
    ev->add_option("--split", split, "val | train | all")
        ->check(CLI::IsMember({"val", "train", "all"}));

    auto* pr = app.add_subcommand("predict", "probability map + thresholded mask for one sample");
    pr->add_option("--checkpoint", checkpoint_dir, "checkpoint directory")->required();
    pr->add_option("--input", input_path, "input tensor file [4,H,W]")->required();
    pr->add_option("--out-prob", out_prob, "probability map tensor file");
    pr->add_option("--out-mask", out_mask, "thresholded mask PGM (0.5)");

    auto* ab = app.add_subcommand("ablate", "train and score all module combinations");
    ab->add_option("--config", config_path, "run config JSON");
    ab->add_option("--data", data_dir, "dataset directory (overrides config)");
    ab->add_option("--out", out_path, "output directory")->required();
    ab->add_option("--epochs", ablate_epochs, "epochs per combination");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    gc->add_flag("--skip-network", skip_network, "skip the whole-network case");

    auto* ia = app.add_subcommand("inspect-attention", "dump per-stage grids/maps and CFF weights");
    ia->add_option("--checkpoint", checkpoint_dir, "checkpoint directory")->required();
    ia->add_option("--input", input_path, "input tensor file [4,H,W]")->required();
    ia->add_option("--out", out_path, "output directory")->required();

    auto* dw = app.add_subcommand("dump-cff-weights", "CFF weight vectors as CSV");
    dw->add_option("--checkpoint", checkpoint_dir, "checkpoint directory")->required();
    dw->add_option("--input", input_path, "input tensor file [4,H,W]")->required();
    dw->add_option("--out", out_path, "output CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (gen->parsed()) return cmd_generate(config_path, out_path);
        if (tr->parsed()) return cmd_train(config_path, data_dir, out_path);
        if (ev->parsed()) return cmd_eval(config_path, checkpoint_dir, data_dir, out_path, split);
        if (pr->parsed()) return cmd_predict(checkpoint_dir, input_path, out_prob, out_mask);
        if (ab->parsed()) return cmd_ablate(config_path, data_dir, out_path, ablate_epochs);
        if (gc->parsed()) return cmd_gradcheck(skip_network);
        if (ia->parsed()) return cmd_inspect_attention(checkpoint_dir, input_path, out_path, false, "");
        if (dw->parsed()) return cmd_inspect_attention(checkpoint_dir, input_path, "", true, out_path);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DimensionError& e) {
        std::cerr << "dimension error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return kExitIo;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kExitIo;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    }
    return kExitOk;
}
