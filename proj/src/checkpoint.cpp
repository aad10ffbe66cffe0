#include "tcnet/checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "tcnet/config_json.hpp"
#include "tcnet/tensor_io.hpp"

namespace fs = std::filesystem;

namespace tcnet {

namespace {

nlohmann::json history_to_json(const std::vector<EpochRecord>& history) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : history)
        rows.push_back({{"epoch", r.epoch},
                        {"lr", r.lr},
                        {"loss_total", r.loss_total},
                        {"loss_dice", r.loss_dice},
                        {"loss_bce", r.loss_bce},
                        {"loss_coarse", r.loss_coarse},
                        {"val_dsc", r.val_dsc}});
    return rows;
}

std::vector<EpochRecord> history_from_json(const nlohmann::json& rows) {
    std::vector<EpochRecord> history;
    for (const auto& r : rows) {
        EpochRecord rec;
        rec.epoch = r.at("epoch").get<int>();
        rec.lr = r.at("lr").get<double>();
        rec.loss_total = r.at("loss_total").get<double>();
        rec.loss_dice = r.at("loss_dice").get<double>();
        rec.loss_bce = r.at("loss_bce").get<double>();
        rec.loss_coarse = r.at("loss_coarse").get<double>();
        rec.val_dsc = r.at("val_dsc").get<double>();
        history.push_back(rec);
    }
    return history;
}

} // namespace

void save_checkpoint(const std::string& dir, TcNet<float>& net, int epoch, double best_val_dsc,
                     const std::vector<EpochRecord>& history) {
    const fs::path root(dir);
    fs::create_directories(root / "tensors");

    std::vector<std::string> names;
    net.visit_params([&](const std::string& name, Tensor<float>& t, bool) {
        write_tensor((root / "tensors" / (name + ".tcnt")).string(), t);
        names.push_back(name);
    });

    nlohmann::json manifest;
    manifest["format"] = 1;
    manifest["network"] = network_config_to_json(net.cfg);
    manifest["seed"] = net.seed;
    manifest["epoch"] = epoch;
    manifest["best_val_dsc"] = best_val_dsc;
    manifest["history"] = history_to_json(history);
    manifest["tensors"] = names;

    std::ofstream f(root / "manifest.json", std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint manifest in " + dir);
    f << manifest.dump(2) << '\n';
    if (!f) throw IoError("write failed: checkpoint manifest in " + dir);
}

TcNet<float> load_checkpoint(const std::string& dir, CheckpointInfo* info_out) {
    const fs::path root(dir);
    std::ifstream f(root / "manifest.json");
    if (!f) throw IoError("cannot open checkpoint manifest: " + (root / "manifest.json").string());
    nlohmann::json manifest;
    try {
        f >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed checkpoint manifest: " + std::string(e.what()));
    }
    if (manifest.value("format", 0) != 1)
        throw FormatError("unsupported checkpoint format in " + dir);

    CheckpointInfo info;
    info.network = network_config_from_json(manifest.at("network"), "network");
    info.seed = manifest.at("seed").get<std::uint64_t>();
    info.epoch = manifest.at("epoch").get<int>();
    info.best_val_dsc = manifest.at("best_val_dsc").get<double>();
    if (manifest.contains("history")) info.history = history_from_json(manifest.at("history"));

    TcNet<float> net = TcNet<float>::build(info.network, info.seed);
    net.visit_params([&](const std::string& name, Tensor<float>& t, bool) {
        Tensor<float> loaded = read_tensor((root / "tensors" / (name + ".tcnt")).string());
        if (loaded.shape != t.shape)
            throw FormatError("checkpoint tensor " + name + " has shape " + shape_string(loaded.shape) +
                              ", expected " + shape_string(t.shape));
        t.data = std::move(loaded.data);
    });
    if (info_out) *info_out = std::move(info);
    return net;
}

} // namespace tcnet
