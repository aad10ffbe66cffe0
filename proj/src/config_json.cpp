#include "tcnet/config_json.hpp"

#include <fstream>
#include <set>

#include "tcnet/error.hpp"

namespace tcnet {

namespace {

void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                         const std::string& path) {
    if (!j.is_object()) throw ConfigError("config field " + path + " must be an object");
    for (const auto& [key, value] : j.items())
        if (!allowed.contains(key)) throw ConfigError("unknown config key: " + path + "." + key);
}

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out, const std::string& path) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config field " + path + "." + key + " has the wrong type");
    }
}

template <class T, std::size_t N>
void read_array_field(const nlohmann::json& j, const char* key, std::array<T, N>& out,
                      const std::string& path) {
    if (!j.contains(key)) return;
    std::vector<T> v;
    try {
        v = j.at(key).get<std::vector<T>>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config field " + path + "." + key + " has the wrong type");
    }
    if (v.size() != N)
        throw ConfigError("config field " + path + "." + key + " must hold exactly " +
                          std::to_string(N) + " entries");
    std::copy(v.begin(), v.end(), out.begin());
}

} // namespace

nlohmann::json network_config_to_json(const NetworkConfig& c) {
    return {{"input_side", c.input_side},
            {"in_slices", c.in_slices},
            {"stage_channels", c.stage_channels},
            {"cff_stages", c.cff_stages},
            {"decoder_channels", c.decoder_channels},
            {"patch_grid", c.patch_grid},
            {"dropout", c.dropout},
            {"bn_eps", c.bn_eps},
            {"bn_momentum", c.bn_momentum},
            {"use_cpa", c.use_cpa},
            {"use_cff", c.use_cff},
            {"use_mdu", c.use_mdu}};
}

NetworkConfig network_config_from_json(const nlohmann::json& j, const std::string& path) {
    reject_unknown_keys(j,
                        {"input_side", "in_slices", "stage_channels", "cff_stages", "decoder_channels",
                         "patch_grid", "dropout", "bn_eps", "bn_momentum", "use_cpa", "use_cff",
                         "use_mdu"},
                        path);
    NetworkConfig c;
    read_field(j, "input_side", c.input_side, path);
    read_field(j, "in_slices", c.in_slices, path);
    read_array_field(j, "stage_channels", c.stage_channels, path);
    read_field(j, "cff_stages", c.cff_stages, path);
    read_array_field(j, "decoder_channels", c.decoder_channels, path);
    read_field(j, "patch_grid", c.patch_grid, path);
    read_field(j, "dropout", c.dropout, path);
    read_field(j, "bn_eps", c.bn_eps, path);
    read_field(j, "bn_momentum", c.bn_momentum, path);
    read_field(j, "use_cpa", c.use_cpa, path);
    read_field(j, "use_cff", c.use_cff, path);
    read_field(j, "use_mdu", c.use_mdu, path);
    return c;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
    return {{"lr0", c.lr0},
            {"decay", c.decay},
            {"epochs", c.epochs},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"adam_eps", c.adam_eps},
            {"lambda_cpa", c.lambda_cpa},
            {"seed", c.seed},
            {"batch_size", c.batch_size},
            {"stop_at_val_dsc", c.stop_at_val_dsc},
            {"keep_empty_fraction", c.keep_empty_fraction}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path) {
    reject_unknown_keys(j,
                        {"lr0", "decay", "epochs", "beta1", "beta2", "adam_eps", "lambda_cpa", "seed",
                         "batch_size", "stop_at_val_dsc", "keep_empty_fraction"},
                        path);
    TrainConfig c;
    read_field(j, "lr0", c.lr0, path);
    read_field(j, "decay", c.decay, path);
    read_field(j, "epochs", c.epochs, path);
    read_field(j, "beta1", c.beta1, path);
    read_field(j, "beta2", c.beta2, path);
    read_field(j, "adam_eps", c.adam_eps, path);
    read_field(j, "lambda_cpa", c.lambda_cpa, path);
    read_field(j, "seed", c.seed, path);
    read_field(j, "batch_size", c.batch_size, path);
    read_field(j, "stop_at_val_dsc", c.stop_at_val_dsc, path);
    read_field(j, "keep_empty_fraction", c.keep_empty_fraction, path);
    return c;
}

nlohmann::json synth_spec_to_json(const SynthSpec& s) {
    return {{"volumes", s.volumes},
            {"depth", s.depth},
            {"height", s.height},
            {"width", s.width},
            {"min_lesions", s.min_lesions},
            {"max_lesions", s.max_lesions},
            {"min_radius", s.min_radius},
            {"max_radius", s.max_radius},
            {"bg_level", s.bg_level},
            {"bg_texture", s.bg_texture},
            {"lesion_level", s.lesion_level},
            {"lesion_jitter", s.lesion_jitter},
            {"noise", s.noise},
            {"val_fraction", s.val_fraction},
            {"seed", s.seed}};
}

SynthSpec synth_spec_from_json(const nlohmann::json& j, const std::string& path) {
    reject_unknown_keys(j,
                        {"volumes", "depth", "height", "width", "min_lesions", "max_lesions",
                         "min_radius", "max_radius", "bg_level", "bg_texture", "lesion_level",
                         "lesion_jitter", "noise", "val_fraction", "seed"},
                        path);
    SynthSpec s;
    read_field(j, "volumes", s.volumes, path);
    read_field(j, "depth", s.depth, path);
    read_field(j, "height", s.height, path);
    read_field(j, "width", s.width, path);
    read_field(j, "min_lesions", s.min_lesions, path);
    read_field(j, "max_lesions", s.max_lesions, path);
    read_field(j, "min_radius", s.min_radius, path);
    read_field(j, "max_radius", s.max_radius, path);
    read_field(j, "bg_level", s.bg_level, path);
    read_field(j, "bg_texture", s.bg_texture, path);
    read_field(j, "lesion_level", s.lesion_level, path);
    read_field(j, "lesion_jitter", s.lesion_jitter, path);
    read_field(j, "noise", s.noise, path);
    read_field(j, "val_fraction", s.val_fraction, path);
    read_field(j, "seed", s.seed, path);
    return s;
}

nlohmann::json run_config_to_json(const RunConfig& c) {
    return {{"network", network_config_to_json(c.network)},
            {"train", train_config_to_json(c.train)},
            {"synth", synth_spec_to_json(c.synth)},
            {"paths", {{"dataset_dir", c.dataset_dir}, {"run_dir", c.run_dir}}}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    reject_unknown_keys(j, {"network", "train", "synth", "paths"}, "config");
    RunConfig c;
    if (j.contains("network")) c.network = network_config_from_json(j.at("network"));
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("synth")) c.synth = synth_spec_from_json(j.at("synth"));
    if (j.contains("paths")) {
        reject_unknown_keys(j.at("paths"), {"dataset_dir", "run_dir"}, "config.paths");
        read_field(j.at("paths"), "dataset_dir", c.dataset_dir, "config.paths");
        read_field(j.at("paths"), "run_dir", c.run_dir, "config.paths");
    }
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed config JSON in " + path + ": " + e.what());
    }
    return run_config_from_json(j);
}

} // namespace tcnet
